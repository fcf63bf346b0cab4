//! Independent plain-loop reimplementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;

use eduvqa::gradcheck::random_batch;
use eduvqa::model::{EduVqa, ModelConfig, PredictionBundle, SampleFeatures};
use eduvqa::moe::Routed;
use eduvqa::numerics::{DType, Graph, ParamStore, Tensor};
use eduvqa::training::{total_loss, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Row = Vec<f64>;

pub struct Oracle<'a> {
    pub p: &'a ParamStore,
    pub cfg: &'a ModelConfig,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_rows(rows: &[Row]) -> Row {
    let n = rows.len() as f64;
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter().map(|v| v / n).collect()
}

fn softmax(v: &[f64]) -> Row {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Row = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Indices of the `k` largest scores (ties to the lower index) with
/// renormalized weights.
pub fn topk(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    let total: f64 = idx.iter().map(|&i| scores[i]).sum();
    idx.iter().map(|&i| (i, scores[i] / total)).collect()
}

impl<'a> Oracle<'a> {
    pub fn new(p: &'a ParamStore, cfg: &'a ModelConfig) -> Self {
        Oracle { p, cfg }
    }

    fn t(&self, name: &str) -> &[f64] {
        self.p.get(name).unwrap_or_else(|| panic!("missing {name}")).data()
    }

    fn cols(&self, name: &str) -> usize {
        *self.p[name].shape().last().unwrap()
    }

    /// `x W + b`
    fn linear(&self, name: &str, x: &[f64]) -> Row {
        let w = self.t(&format!("{name}.w"));
        let b = self.t(&format!("{name}.b"));
        let cols = b.len();
        (0..cols)
            .map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i * cols + j]).sum::<f64>())
            .collect()
    }

    fn matvec(&self, name: &str, x: &[f64]) -> Row {
        let w = self.t(name);
        let cols = self.cols(name);
        (0..cols)
            .map(|j| (0..x.len()).map(|i| x[i] * w[i * cols + j]).sum())
            .collect()
    }

    pub fn mlp(&self, prefix: &str, x: &[f64]) -> Row {
        let h: Row = {
            let w = self.t(&format!("{prefix}.w1"));
            let b = self.t(&format!("{prefix}.b1"));
            let hid = b.len();
            (0..hid)
                .map(|j| (b[j] + (0..x.len()).map(|i| x[i] * w[i * hid + j]).sum::<f64>()).max(0.0))
                .collect()
        };
        let w = self.t(&format!("{prefix}.w2"));
        let b = self.t(&format!("{prefix}.b2"));
        let out = b.len();
        (0..out)
            .map(|j| b[j] + (0..h.len()).map(|i| h[i] * w[i * out + j]).sum::<f64>())
            .collect()
    }

    fn mix(&self, pool: &str, routes: &[(usize, f64)], x: &[f64]) -> Row {
        let mut out = vec![0.0; x.len()];
        for &(j, w) in routes {
            for (o, v) in out.iter_mut().zip(self.mlp(&format!("{pool}.{j}"), x)) {
                *o += w * v;
            }
        }
        out
    }

    fn layer_norm(&self, prefix: &str, x: &[f64]) -> Row {
        let g = self.t(&format!("{prefix}.ln_gamma"));
        let b = self.t(&format!("{prefix}.ln_beta"));
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
            .collect()
    }

    /// Frame-synchronized attention of `query[t]` rows over `kv[t]` rows.
    pub fn cross_attention(&self, prefix: &str, query: &[Vec<Row>], kv: &[Vec<Row>]) -> Vec<Vec<Row>> {
        let c = query[0][0].len() as f64;
        query
            .iter()
            .zip(kv)
            .map(|(qf, kf)| {
                let keys: Vec<Row> = kf.iter().map(|r| self.matvec(&format!("{prefix}.wk"), r)).collect();
                let vals: Vec<Row> = kf.iter().map(|r| self.matvec(&format!("{prefix}.wv"), r)).collect();
                qf.iter()
                    .map(|x| {
                        let q = self.matvec(&format!("{prefix}.wq"), x);
                        let s: Row = keys.iter().map(|k| dot(&q, k) / c.sqrt()).collect();
                        let a = softmax(&s);
                        let mut ctx = vec![0.0; x.len()];
                        for (w, v) in a.iter().zip(&vals) {
                            for (o, vv) in ctx.iter_mut().zip(v) {
                                *o += w * vv;
                            }
                        }
                        let o = self.matvec(&format!("{prefix}.wo"), &ctx);
                        let resid: Row = x.iter().zip(&o).map(|(a, b)| a + b).collect();
                        self.layer_norm(prefix, &resid)
                    })
                    .collect()
            })
            .collect()
    }

    fn split(&self, sample: &SampleFeatures) -> (Vec<Vec<Row>>, Vec<Vec<Row>>) {
        let c = self.cfg.channels;
        let vs = sample.video.shape();
        let ts = sample.text.shape();
        let per_frame_v = vs[1] * vs[2];
        let video: Vec<Vec<Row>> = sample
            .video
            .data()
            .chunks(per_frame_v * c)
            .map(|f| f.chunks(c).map(|r| r.to_vec()).collect())
            .collect();
        let text: Vec<Vec<Row>> = sample
            .text
            .data()
            .chunks(ts[1] * c)
            .map(|f| f.chunks(c).map(|r| r.to_vec()).collect())
            .collect();
        (video, text)
    }

    fn fused(&self, sample: &SampleFeatures) -> (Vec<Vec<Row>>, Vec<Vec<Row>>) {
        let (video, text) = self.split(sample);
        if !self.cfg.fusion {
            return (video, text);
        }
        let fp = self.cross_attention("fuse.p", &video, &text);
        let fa = self.cross_attention("fuse.a", &text, &video);
        (fp, fa)
    }

    fn head(&self, name: &str, x: &[f64]) -> f64 {
        self.linear(name, x)[0]
    }

    /// Structured-routing forward with explicit loops.
    pub fn forward(&self, sample: &SampleFeatures) -> PredictionBundle {
        assert_eq!(self.cfg.perceptual_router, "s2d");
        assert_eq!(self.cfg.alignment_router, "s2d");
        let cfg = self.cfg;
        let (m, n, k, kj) = (cfg.spatial_experts, cfg.temporal_experts, cfg.top_k, cfg.joint_top_k);
        let (fp, fa) = self.fused(sample);
        let positions = fp[0].len();
        let f_s: Vec<Row> = (0..positions)
            .map(|p| mean_rows(&fp.iter().map(|f| f[p].clone()).collect::<Vec<_>>()))
            .collect();
        let f_t: Vec<Row> = fp.iter().map(|f| mean_rows(f)).collect();
        let f_o = mean_rows(&f_t);

        let gate = softmax(&self.linear("per.gate", &f_o));
        let rows: Row = (0..m).map(|i| (0..n).map(|j| gate[i * n + j]).sum::<f64>() / n as f64).collect();
        let cols: Row = (0..n).map(|j| (0..m).map(|i| gate[i * n + j]).sum::<f64>() / m as f64).collect();
        let w_s = topk(&rows, k);
        let w_t = topk(&cols, k);
        let joint = topk(&gate, kj);
        let mut os = vec![0.0; m];
        let mut ot = vec![0.0; n];
        for &(f, w) in &joint {
            os[f / n] += w;
            ot[f % n] += w;
        }
        let w_os: Vec<(usize, f64)> = (0..m).filter(|&i| os[i] > 0.0).map(|i| (i, os[i])).collect();
        let w_ot: Vec<(usize, f64)> = (0..n).filter(|&j| ot[j] > 0.0).map(|j| (j, ot[j])).collect();

        let (q_s, q_t) = if cfg.st_heads {
            let rs: Vec<Row> = f_s.iter().map(|x| self.mix("per.spatial", &w_s, x)).collect();
            let rt: Vec<Row> = f_t.iter().map(|x| self.mix("per.temporal", &w_t, x)).collect();
            (Some(self.head("per.fc_s", &mean_rows(&rs))), Some(self.head("per.fc_t", &mean_rows(&rt))))
        } else {
            (None, None)
        };
        let mut joined = self.mix("per.spatial", &w_os, &f_o);
        joined.extend(self.mix("per.temporal", &w_ot, &f_o));
        let q_o = self.head("per.fc_o", &joined);

        let tokens = fa[0].len();
        let pooled: Vec<Row> = (0..tokens)
            .map(|d| mean_rows(&fa.iter().map(|f| f[d].clone()).collect::<Vec<_>>()))
            .collect();
        let words = &pooled[1..];
        let z = cfg.alignment_experts;
        let logits: Row = words.iter().flat_map(|w| self.linear("aln.gate", w)).collect();
        let g = softmax(&logits);
        let valid: Vec<usize> = (0..words.len()).filter(|&i| sample.token_mask[i]).collect();
        let avg: Row = (0..z)
            .map(|e| valid.iter().map(|&i| g[i * z + e]).sum::<f64>() / valid.len() as f64)
            .collect();
        let q_word = if cfg.wl_heads {
            words
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let r = topk(&g[i * z..(i + 1) * z], k);
                    self.head("aln.fc_d", &self.mix("aln.expert", &r, w))
                })
                .collect()
        } else {
            Vec::new()
        };
        let q_sentence = self.head("aln.fc_s", &self.mix("aln.expert", &topk(&avg, k), &pooled[0]));
        PredictionBundle {
            q_spatial: q_s,
            q_temporal: q_t,
            q_overall_percept: q_o,
            q_word,
            q_sentence,
        }
    }

    /// The same network with one plain MLP per pool and no gating at all.
    pub fn forward_plain(&self, sample: &SampleFeatures) -> PredictionBundle {
        let cfg = self.cfg;
        let (fp, fa) = self.fused(sample);
        let positions = fp[0].len();
        let spatial_rows: Vec<Row> = (0..positions)
            .map(|p| self.mlp("per.spatial.0", &mean_rows(&fp.iter().map(|f| f[p].clone()).collect::<Vec<_>>())))
            .collect();
        let f_t: Vec<Row> = fp.iter().map(|f| mean_rows(f)).collect();
        let temporal_rows: Vec<Row> = f_t.iter().map(|x| self.mlp("per.temporal.0", x)).collect();
        let f_o = mean_rows(&f_t);
        let mut joined = self.mlp("per.spatial.0", &f_o);
        joined.extend(self.mlp("per.temporal.0", &f_o));
        let tokens = fa[0].len();
        let pooled: Vec<Row> = (0..tokens)
            .map(|d| mean_rows(&fa.iter().map(|f| f[d].clone()).collect::<Vec<_>>()))
            .collect();
        PredictionBundle {
            q_spatial: cfg.st_heads.then(|| self.head("per.fc_s", &mean_rows(&spatial_rows))),
            q_temporal: cfg.st_heads.then(|| self.head("per.fc_t", &mean_rows(&temporal_rows))),
            q_overall_percept: self.head("per.fc_o", &joined),
            q_word: if cfg.wl_heads {
                pooled[1..].iter().map(|w| self.head("aln.fc_d", &self.mlp("aln.expert.0", w))).collect()
            } else {
                Vec::new()
            },
            q_sentence: self.head("aln.fc_s", &self.mlp("aln.expert.0", &pooled[0])),
        }
    }
}

pub fn max_bundle_diff(a: &PredictionBundle, b: &PredictionBundle) -> f64 {
    assert_eq!(a.q_word.len(), b.q_word.len());
    assert_eq!(a.q_spatial.is_some(), b.q_spatial.is_some());
    let mut d = (a.q_overall_percept - b.q_overall_percept).abs().max((a.q_sentence - b.q_sentence).abs());
    if let (Some(x), Some(y)) = (a.q_spatial, b.q_spatial) {
        d = d.max((x - y).abs());
    }
    if let (Some(x), Some(y)) = (a.q_temporal, b.q_temporal) {
        d = d.max((x - y).abs());
    }
    for (x, y) in a.q_word.iter().zip(&b.q_word) {
        d = d.max((x - y).abs());
    }
    d
}

/// Ridge regression `(XᵀX + λI) w = Xᵀy` with an unpenalized intercept column.
pub fn ridge_fit(x: &[Row], y: &[f64], lambda: f64) -> Row {
    let d = x[0].len() + 1;
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        let r: Row = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..d {
            b[i] += r[i] * t;
            for j in 0..d {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        for j in 0..d {
            a[col][j] /= p;
        }
        b[col] /= p;
        for i in 0..d {
            if i != col {
                let f = a[i][col];
                for j in 0..d {
                    a[i][j] -= f * a[col][j];
                }
                b[i] -= f * b[col];
            }
        }
    }
    b
}

pub fn ridge_predict(w: &[f64], x: &[f64]) -> f64 {
    w[0] + dot(&w[1..], x)
}

/// Spearman correlation written out directly (average ranks, then Pearson).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Row {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Pooled features per dimension for the ridge oracle: the video features
/// averaged over every frame and position, and each text position averaged
/// over frames.
pub fn pooled_features(sample: &SampleFeatures) -> (Row, Vec<Row>) {
    let vs = sample.video.shape();
    let c = vs[3];
    let rows: Vec<Row> = sample.video.data().chunks(c).map(|r| r.to_vec()).collect();
    let video = mean_rows(&rows);
    let ts = sample.text.shape();
    let (t, d) = (ts[0], ts[1]);
    let text: Vec<Row> = (0..d)
        .map(|pos| {
            let frames: Vec<Row> = (0..t)
                .map(|f| sample.text.data()[(f * d + pos) * c..(f * d + pos + 1) * c].to_vec())
                .collect();
            mean_rows(&frames)
        })
        .collect();
    (video, text)
}

/// Init plus uniform noise on every entry so biases and LN affine are non-trivial.
pub fn jittered(model: &EduVqa, seed: u64) -> ParamStore {
    let mut params = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    params
}

/// Relabel experts: new expert `j` of each pool is old expert `perm[j]`, with
/// the gate columns moved to match.
pub fn permute_experts(
    params: &ParamStore,
    cfg: &ModelConfig,
    sp: &[usize],
    tp: &[usize],
    ap: &[usize],
) -> ParamStore {
    let mut out = params.clone();
    let mut move_pool = |pool: &str, perm: &[usize]| {
        for (j, &old) in perm.iter().enumerate() {
            for part in ["w1", "b1", "w2", "b2"] {
                out.insert(format!("{pool}.{j}.{part}"), params[&format!("{pool}.{old}.{part}")].clone());
            }
        }
    };
    move_pool("per.spatial", sp);
    move_pool("per.temporal", tp);
    move_pool("aln.expert", ap);
    let permute_cols = |out: &mut ParamStore, name: &str, map: &dyn Fn(usize) -> usize| {
        let w = &params[&format!("{name}.w")];
        let b = &params[&format!("{name}.b")];
        let cols = b.len();
        let rows = w.shape()[0];
        let mut wd = w.data().to_vec();
        let mut bd = b.data().to_vec();
        for c in 0..cols {
            bd[c] = b.data()[map(c)];
            for r in 0..rows {
                wd[r * cols + c] = w.data()[r * cols + map(c)];
            }
        }
        out.insert(format!("{name}.w"), Tensor::new(w.shape().to_vec(), wd).unwrap().cast(w.dtype()));
        out.insert(format!("{name}.b"), Tensor::new(b.shape().to_vec(), bd).unwrap().cast(b.dtype()));
    };
    let n = cfg.temporal_experts;
    permute_cols(&mut out, "per.gate", &|c| sp[c / n] * n + tp[c % n]);
    permute_cols(&mut out, "aln.gate", &|c| ap[c]);
    out
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// One randomized routing trial over a small structured model. Checks
/// permutation equivariance (bit-exact), sparsity, convexity, and that
/// unselected experts receive exactly zero gradient.
pub fn routing_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..=4);
    let n = rng.gen_range(2..=4);
    let z = rng.gen_range(2..=4);
    let k = rng.gen_range(1..=m.min(n).min(z));
    let kj = rng.gen_range(1..=m * n);
    let cfg = ModelConfig {
        frames: 2,
        height: 2,
        width: 2,
        tokens: 4,
        channels: 4,
        spatial_experts: m,
        temporal_experts: n,
        alignment_experts: z,
        top_k: k,
        joint_top_k: kj,
        expert_hidden: Some(5),
        dtype: DType::F64,
        ..Default::default()
    };
    let model = EduVqa::with_builtin_routers(cfg.clone()).map_err(|e| e.to_string())?;
    let params = jittered(&model, seed);
    let batch = random_batch(&cfg, 3, seed.wrapping_mul(31)).map_err(|e| e.to_string())?;

    let (sp, tp, ap) = (random_perm(&mut rng, m), random_perm(&mut rng, n), random_perm(&mut rng, z));
    let permuted = permute_experts(&params, &cfg, &sp, &tp, &ap);
    for e in &batch {
        let a = model.predict(&params, &e.features).map_err(|e| e.to_string())?;
        let b = model.predict(&permuted, &e.features).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("seed {seed}: expert relabeling changed predictions {a:?} vs {b:?}"));
        }
    }

    let mut g = Graph::new();
    let mut bundles = Vec::new();
    let mut used: [BTreeSet<usize>; 3] = Default::default();
    for e in &batch {
        let tr = model.forward(&mut g, &params, &e.features).map_err(|e| e.to_string())?;
        let pr = &tr.perceptual_routes;
        let checks: Vec<(&Routed, usize, usize)> = vec![
            (&pr.spatial, k, 0),
            (&pr.temporal, k, 1),
            (&pr.overall_spatial, kj, 0),
            (&pr.overall_temporal, kj, 1),
            (&tr.alignment_routes.sentence, k, 2),
        ]
        .into_iter()
        .chain(tr.alignment_routes.words.iter().map(|r| (r, k, 2)))
        .collect();
        for (r, limit, pool) in checks {
            let w = g.value(r.weights).data();
            let nonzero = w.iter().filter(|v| **v != 0.0).count();
            if nonzero > limit || r.indices.len() > limit {
                return Err(format!("seed {seed}: {nonzero} active experts with k = {limit}"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 || w.iter().any(|v| *v < 0.0) {
                return Err(format!("seed {seed}: routing weights {w:?} are not convex"));
            }
            used[pool].extend(r.indices.iter().copied());
        }
        bundles.push(tr.bundle);
    }
    let labels: Vec<_> = batch.iter().map(|e| &e.labels).collect();
    let masks: Vec<&[bool]> = batch.iter().map(|e| e.features.token_mask.as_slice()).collect();
    let loss = total_loss(&mut g, &bundles, &labels, &masks, &LossWeights::default())
        .map_err(|e| e.to_string())?
        .loss;
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    let named = g.param_grads(&grads, &params);
    for (pool, (prefix, count)) in [("per.spatial", m), ("per.temporal", n), ("aln.expert", z)].iter().enumerate() {
        for j in (0..*count).filter(|j| !used[pool].contains(j)) {
            for part in ["w1", "b1", "w2", "b2"] {
                let name = format!("{prefix}.{j}.{part}");
                if named[&name].data().iter().any(|v| *v != 0.0) {
                    return Err(format!("seed {seed}: unselected expert {name} has a gradient"));
                }
            }
        }
    }
    Ok(())
}

use eduvqa::datastore::Dimension;
use eduvqa::subjective::RatingRecord;

pub fn rating(annotator: &str, video: &str, dimension: Dimension, score: f64) -> RatingRecord {
    RatingRecord {
        annotator_id: annotator.into(),
        video_id: video.into(),
        dimension,
        score,
    }
}

/// One cell rated by 16 annotators: scores 1 and 5 once each, 2 and 4 three
/// times each, 3 eight times. Σd² = 14 and Σd⁴ = 38 about the mean of 3.
pub fn sixteen_rating_cell() -> Vec<RatingRecord> {
    let scores = [1.0, 5.0, 2.0, 2.0, 2.0, 4.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0];
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| rating(&format!("a{i:02}"), "fixture", Dimension::OverallPercept, s))
        .collect()
}

/// Ten raters who agree with a latent score up to ±1 noise, plus one rater
/// `random` who picks uniformly from 1..=5.
pub fn corpus_with_random_rater(seed: u64, videos: usize) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for v in 0..videos {
        let video = format!("v{v:03}");
        let latent: f64 = rng.gen_range(2..=4) as f64;
        for a in 0..10 {
            let noise = [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0][rng.gen_range(0..8)];
            out.push(rating(&format!("r{a}"), &video, Dimension::Sentence, latent + noise));
        }
        out.push(rating("random", &video, Dimension::Sentence, rng.gen_range(1..=5) as f64));
    }
    out
}

use eduvqa::datastore::{Category, GeneratorModel, Labels, SplitSpec, SyntheticVideo, VideoRecord};

/// Held-out SRCC of ridge regressions on mean-pooled features: overall
/// percept from the pooled video vector, sentence alignment from the pooled
/// sentence slot.
pub fn ridge_certificate(train: &[&SyntheticVideo], test: &[&SyntheticVideo]) -> (f64, f64) {
    let pooled = |set: &[&SyntheticVideo]| -> (Vec<Row>, Vec<Row>) {
        set.iter()
            .map(|v| {
                let (video, text) = pooled_features(&v.features);
                (video, text[0].clone())
            })
            .unzip()
    };
    let (vtr, str_) = pooled(train);
    let (vte, ste) = pooled(test);
    let target = |set: &[&SyntheticVideo], f: fn(&Labels) -> f64| -> Row { set.iter().map(|v| f(&v.record.labels)).collect() };
    let overall_w = ridge_fit(&vtr, &target(train, |l| l.overall_percept), 1e-3);
    let sentence_w = ridge_fit(&str_, &target(train, |l| l.sentence), 1e-3);
    let overall_pred: Row = vte.iter().map(|x| ridge_predict(&overall_w, x)).collect();
    let sentence_pred: Row = ste.iter().map(|x| ridge_predict(&sentence_w, x)).collect();
    (
        spearman(&overall_pred, &target(test, |l| l.overall_percept)),
        spearman(&sentence_pred, &target(test, |l| l.sentence)),
    )
}

/// Every generator × category stratum, with sizes cycling through 1..=13 so
/// that every remainder pattern of the 6:2:2 quotas occurs.
pub fn stratified_corpus() -> Vec<VideoRecord> {
    let mut out = Vec::new();
    let mut size_cycle = (1..=13).cycle();
    for model in GeneratorModel::ALL {
        for category in Category::ALL {
            let n = size_cycle.next().unwrap();
            for j in 0..n {
                let id = format!("{model:?}-{category:?}-{j}");
                out.push(VideoRecord {
                    video_id: id.clone(),
                    prompt: format!("prompt for {id}"),
                    tokens: 2,
                    generator_model: model,
                    category,
                    vst_path: format!("{id}.vst.edut").into(),
                    blip_path: format!("{id}.blip.edut").into(),
                    labels: Labels {
                        spatial: 3.0,
                        temporal: 3.0,
                        overall_percept: 3.0,
                        word: vec![3.0],
                        sentence: 3.0,
                    },
                    token_mask: vec![true],
                });
            }
        }
    }
    out
}

/// Largest `|count − n·ratio|` over strata and partitions, or an error if the
/// split is not a partition of the corpus.
pub fn split_deviation(records: &[VideoRecord], spec: &SplitSpec) -> Result<f64, String> {
    use eduvqa::datastore::Partition;
    use std::collections::BTreeMap;
    if spec.assignment.len() != records.len() {
        return Err(format!("{} assigned for {} videos", spec.assignment.len(), records.len()));
    }
    let mut by_stratum: BTreeMap<(GeneratorModel, Category), [usize; 3]> = BTreeMap::new();
    for r in records {
        let p = spec.partition_of(&r.video_id).ok_or(format!("{} unassigned", r.video_id))?;
        let slot = Partition::ALL.iter().position(|q| *q == p).unwrap();
        by_stratum.entry((r.generator_model, r.category)).or_default()[slot] += 1;
    }
    let total: f64 = spec.ratios.iter().sum();
    let mut worst: f64 = 0.0;
    for counts in by_stratum.values() {
        let n: usize = counts.iter().sum();
        for (c, r) in counts.iter().zip(&spec.ratios) {
            worst = worst.max((*c as f64 - n as f64 * r / total).abs());
        }
    }
    Ok(worst)
}

/// All pairs with defender gap `<= eps`, ranked by attacker gap descending
/// then ids; `(attacker_delta, a, b, defender_delta)` with `a < b`.
pub fn gmad_brute_force(
    defender: &std::collections::BTreeMap<String, f64>,
    attacker: &std::collections::BTreeMap<String, f64>,
    eps: f64,
    top_n: usize,
) -> Vec<(f64, String, String, f64)> {
    let ids: Vec<&String> = defender.keys().collect();
    let mut all = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let dd = (defender[ids[i]] - defender[ids[j]]).abs();
            if dd <= eps {
                all.push(((attacker[ids[i]] - attacker[ids[j]]).abs(), ids[i].clone(), ids[j].clone(), dd));
            }
        }
    }
    all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    all.truncate(top_n);
    all
}
