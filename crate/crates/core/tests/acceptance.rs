//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use eduvqa::datastore::edut::{decode, encode};
use eduvqa::datastore::{generate, make_split, Checkpoint, Partition, SynthConfig};
use eduvqa::evaluation::{gmad_pairs, krcc, plcc, srcc, Orientation};
use eduvqa::gradcheck::{micro_config, micro_suite, random_batch, GradcheckSettings};
use eduvqa::model::{EduVqa, ModelConfig, ABLATION_ROWS};
use eduvqa::numerics::{DType, Graph, Tensor};
use eduvqa::subjective::{consolidate, kurtosis, select_lambda};
use eduvqa::training::{predict_all, total_loss, train, Example, LossWeights, TrainSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let settings = GradcheckSettings::default();
    let reports = micro_suite(0, &settings).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let params: usize = reports.iter().map(|r| r.params.len()).sum();
    for r in &reports {
        if let Some(p) = r.params.iter().find(|p| p.max_rel_error >= 1e-4) {
            return Err(format!(
                "{}: `{}` relative error {:.3e} (analytic {:.6e}, numeric {:.6e})",
                r.label, p.name, p.max_rel_error, p.analytic, p.numeric
            ));
        }
    }
    ensure(seconds < 60.0, || format!("took {seconds:.1} s"))?;
    Ok(format!("{params} parameter tensors over k=1,2; max rel error {worst:.2e} < 1e-4; {seconds:.1} s"))
}

fn routing_invariants() -> Outcome {
    for seed in 0..1000u64 {
        routing_trial(seed)?;
    }
    Ok("1000 trials: relabeling bit-exact, <= k active, sums 1 +/- 1e-9, unselected gradients 0".into())
}

fn degeneracy_oracle() -> Outcome {
    let mut cfg = micro_config(1);
    cfg.spatial_experts = 1;
    cfg.temporal_experts = 1;
    cfg.alignment_experts = 1;
    let model = EduVqa::with_builtin_routers(cfg.clone()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let params = jittered(&model, i);
        let sample = random_batch(&cfg, 1, 5000 + i).map_err(|e| e.to_string())?.remove(0).features;
        let got = model.predict(&params, &sample).map_err(|e| e.to_string())?;
        let want = Oracle::new(&params, &cfg).forward_plain(&sample);
        worst = worst.max(max_bundle_diff(&got, &want));
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("100 inputs, max deviation {worst:.2e} <= 1e-9"))
}

fn table_structure() -> Outcome {
    let base = micro_config(2);
    let mut lines = Vec::new();
    for row in ABLATION_ROWS {
        let cfg = base.clone().with_ablation(row.id).map_err(|e| e.to_string())?;
        let model = EduVqa::with_builtin_routers(cfg.clone()).map_err(|e| e.to_string())?;
        let params = model.init_params(row.id as u64);
        let names: Vec<&str> = params.keys().map(|s| s.as_str()).collect();
        let has = |prefix: &str| names.iter().any(|n| n.starts_with(prefix));
        let id = row.id;
        ensure(has("fuse.") == row.fusion, || format!("ID-{id}: fusion parameters present = {}", has("fuse.")))?;
        ensure(has("per.fc_s.") == row.st && has("per.fc_t.") == row.st, || format!("ID-{id}: sub-dimension heads"))?;
        ensure(has("aln.fc_d.") == row.wl, || format!("ID-{id}: word head"))?;
        let structured = |p: &str| has(&format!("{p}.gate."));
        let vanilla = |p: &str| has(&format!("{p}.gate_"));
        let expect = |moe: bool| (moe && !row.vanilla, moe && row.vanilla);
        ensure((structured("per"), vanilla("per")) == expect(row.perceptual_moe), || format!("ID-{id}: perceptual gating"))?;
        ensure((structured("aln"), vanilla("aln")) == expect(row.alignment_moe), || format!("ID-{id}: alignment gating"))?;
        let experts = |p: &str| names.iter().filter(|n| n.starts_with(p) && n.ends_with(".w1")).count();
        let per_count = if row.perceptual_moe { 2 } else { 1 };
        let aln_count = if row.alignment_moe { 2 } else { 1 };
        ensure(experts("per.spatial.") == per_count && experts("per.temporal.") == per_count, || format!("ID-{id}: perceptual pool size"))?;
        ensure(experts("aln.expert.") == aln_count, || format!("ID-{id}: alignment pool size"))?;
        if row.vanilla {
            for g in ["per.gate_s.w", "per.gate_t.w", "per.gate_os.w", "per.gate_ot.w", "aln.gate_d.w", "aln.gate_s.w"] {
                ensure(names.contains(&g), || format!("ID-{id}: missing 1-D gate {g}"))?;
            }
        }
        // run a forward/backward pass on a batch
        let batch = random_batch(&cfg, 3, 77).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let mut bundles = Vec::new();
        for e in &batch {
            bundles.push(model.forward(&mut g, &params, &e.features).map_err(|e| e.to_string())?.bundle);
        }
        let b = bundles[0].values(&g);
        ensure(b.q_spatial.is_some() == row.st, || format!("ID-{id}: spatial output"))?;
        ensure(b.q_word.len() == if row.wl { cfg.tokens - 1 } else { 0 }, || format!("ID-{id}: word outputs"))?;
        let labels: Vec<_> = batch.iter().map(|e| &e.labels).collect();
        let masks: Vec<&[bool]> = batch.iter().map(|e| e.features.token_mask.as_slice()).collect();
        let loss = total_loss(&mut g, &bundles, &labels, &masks, &LossWeights::default()).map_err(|e| e.to_string())?;
        let grads = g.backward(loss.loss).map_err(|e| e.to_string())?;
        let named = g.param_grads(&grads, &params);
        ensure(named.values().all(|t| t.all_finite()), || format!("ID-{id}: non-finite gradient"))?;
        lines.push(format!("ID-{id}:{}", params.len()));
    }
    Ok(format!("7 rows instantiate and train a step; parameter tensors {}", lines.join(" ")))
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig { videos: 400, sigma: 0.1, ..Default::default() };
    let videos = generate(&synth).map_err(|e| e.to_string())?;
    let records: Vec<_> = videos.iter().map(|v| v.record.clone()).collect();
    let split = make_split(&records, 0, [0.6, 0.2, 0.2]).map_err(|e| e.to_string())?;
    let part = |p: Partition| -> Vec<&eduvqa::datastore::SyntheticVideo> {
        videos.iter().filter(|v| split.partition_of(&v.record.video_id) == Some(p)).collect()
    };
    let (tr, va, te) = (part(Partition::Train), part(Partition::Val), part(Partition::Test));
    let (ridge_o, ridge_s) = ridge_certificate(&tr, &te);
    ensure(ridge_o >= 0.9 && ridge_s >= 0.9, || {
        format!("ridge certificate failed: overall {ridge_o:.3}, sentence {ridge_s:.3}")
    })?;

    let examples = |set: &[&eduvqa::datastore::SyntheticVideo]| -> Vec<Example> {
        set.iter()
            .map(|v| Example {
                video_id: v.record.video_id.clone(),
                features: v.features.clone(),
                labels: v.record.labels.clone(),
            })
            .collect()
    };
    let (train_set, val_set, test_set) = (examples(&tr), examples(&va), examples(&te));
    let cfg = ModelConfig::full(synth.frames, synth.height, synth.width, synth.tokens, synth.channels);
    let model = EduVqa::with_builtin_routers(cfg).map_err(|e| e.to_string())?;
    let schedule = TrainSchedule { lr: 1e-3, epochs: 30, ..Default::default() };
    let outcome = train(&model, model.init_params(0), &train_set, &val_set, &schedule, |_| {}).map_err(|e| e.to_string())?;
    if let Some(why) = &outcome.aborted {
        return Err(format!("training aborted: {why}"));
    }
    let preds = predict_all(&model, &outcome.best_params, &test_set).map_err(|e| e.to_string())?;
    let col = |f: &dyn Fn(usize) -> (f64, f64)| -> (Vec<f64>, Vec<f64>) { (0..preds.len()).map(f).unzip() };
    let (po, lo) = col(&|i| (preds[i].q_overall_percept, test_set[i].labels.overall_percept));
    let (ps, ls) = col(&|i| (preds[i].q_sentence, test_set[i].labels.sentence));
    let so = srcc(&po, &lo).map_err(|e| e.to_string())?.value;
    let ss = srcc(&ps, &ls).map_err(|e| e.to_string())?.value;
    let seconds = start.elapsed().as_secs_f64();
    ensure(so >= 0.8 && ss >= 0.8, || format!("test SRCC overall {so:.3}, sentence {ss:.3}"))?;
    ensure(seconds < 600.0, || format!("took {seconds:.0} s"))?;
    Ok(format!(
        "ridge {ridge_o:.3}/{ridge_s:.3}; test SRCC overall {so:.3}, sentence {ss:.3} (best epoch {:?}); {seconds:.1} s",
        outcome.best_epoch
    ))
}

fn bt500_fixtures() -> Outcome {
    let cell = sixteen_rating_cell();
    let scores: Vec<f64> = cell.iter().map(|r| r.score).collect();
    let beta2 = kurtosis(&scores).ok_or("no kurtosis")?;
    let oracle = (38.0 / 16.0) / (14.0f64 / 16.0).powi(2);
    ensure((beta2 - oracle).abs() < 1e-12 && (beta2 - 3.10).abs() < 0.005, || format!("beta2 {beta2}"))?;
    ensure(select_lambda(&scores).lambda == 2.0, || "lambda".into())?;
    let report = consolidate(&cell).map_err(|e| e.to_string())?;
    let first = &report.first_pass[0];
    ensure(first.excluded.len() == 2, || format!("{} exclusions", first.excluded.len()))?;
    ensure(report.cells[0].mos == 42.0 / 14.0, || format!("MOS {}", report.cells[0].mos))?;

    let flat: Vec<_> = [1.0, 1.0, 1.0, 1.0, 5.0]
        .iter()
        .enumerate()
        .map(|(i, &s)| rating(&format!("a{i}"), "v", eduvqa::datastore::Dimension::Spatial, s))
        .collect();
    let r = consolidate(&flat).map_err(|e| e.to_string())?;
    ensure(r.cells[0].excluded.is_empty(), || "{1,1,1,1,5} had exclusions".into())?;

    let noisy = corpus_with_random_rater(0, 60);
    let r = consolidate(&noisy).map_err(|e| e.to_string())?;
    let random = r.annotators.iter().find(|a| a.annotator_id == "random").ok_or("missing rater")?;
    ensure(random.rejected, || format!("random rater outlier fraction {}", random.outlier_fraction))?;
    Ok(format!(
        "beta2 = {beta2:.4}, lambda 2, 2 exclusions, MOS 42/14; {{1,1,1,1,5}} keeps all; random rater {:.0}% outliers, rejected",
        random.outlier_fraction * 100.0
    ))
}

fn metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let n = rng.gen_range(3..60);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mos: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=5) as f64).collect();
        let warped: Vec<f64> = pred.iter().map(|x| x.powi(3) + x.exp()).collect();
        let e = |r: eduvqa::Result<eduvqa::evaluation::Stat>| r.map_err(|e| e.to_string());
        ensure(e(srcc(&pred, &mos))? == e(srcc(&warped, &mos))?, || format!("trial {trial}: SRCC changed"))?;
        ensure(e(krcc(&pred, &mos))? == e(krcc(&warped, &mos))?, || format!("trial {trial}: KRCC changed"))?;
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-50.0..50.0));
        let moved: Vec<f64> = pred.iter().map(|x| a * x + b).collect();
        let d = (e(plcc(&pred, &mos))?.value - e(plcc(&moved, &mos))?.value).abs();
        ensure(d <= 1e-9, || format!("trial {trial}: PLCC moved by {d:e}"))?;
    }
    let k = krcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).map_err(|e| e.to_string())?.value;
    ensure(k == 1.0 / 3.0, || format!("3-point KRCC {k}"))?;

    let mut checked = 0;
    for n in [2usize, 3, 10, 50, 120, 200] {
        for trial in 0..5 {
            let coarse = |rng: &mut ChaCha8Rng| rng.gen_range(0..30) as f64 / 6.0;
            let first: BTreeMap<String, f64> = (0..n).map(|i| (format!("v{i:03}"), coarse(&mut rng))).collect();
            let second: BTreeMap<String, f64> = (0..n).map(|i| (format!("v{i:03}"), coarse(&mut rng))).collect();
            let eps = (trial as f64) / 6.0;
            for (orientation, def, att) in [
                (Orientation::FirstDefends, &first, &second),
                (Orientation::SecondDefends, &second, &first),
            ] {
                let got = gmad_pairs(("a", &first), ("b", &second), eps, 10, orientation).map_err(|e| e.to_string())?;
                let want = gmad_brute_force(def, att, eps, 10);
                let same = got.len() == want.len()
                    && got.iter().zip(&want).all(|(g, w)| {
                        g.attacker_delta == w.0 && g.video_a == w.1 && g.video_b == w.2 && g.defender_delta == w.3
                    });
                ensure(same, || format!("gMAD differs from brute force at n = {n}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "200 monotone/affine trials exact and within 1e-9; KRCC = 1/3; gMAD equals brute force in {checked} cases up to n = 200"
    ))
}

fn split_balance() -> Outcome {
    let records = stratified_corpus();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let spec = make_split(&records, seed, [0.6, 0.2, 0.2]).map_err(|e| e.to_string())?;
        worst = worst.max(split_deviation(&records, &spec)?);
    }
    ensure(worst <= 1.0, || format!("deviation {worst}"))?;
    Ok(format!("{} videos in 40 strata, 10 seeds: max per-stratum deviation {worst:.2} <= 1", records.len()))
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for rank in 0..=5usize {
        for dtype in [DType::F32, DType::F64] {
            let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect()).map_err(|e| e.to_string())?.cast(dtype);
            let bytes = encode(&t).map_err(|e| e.to_string())?;
            let back = decode(&bytes, Path::new("mem")).map_err(|e| e.to_string())?;
            let exact = back.shape() == t.shape()
                && back.dtype() == dtype
                && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(exact, || format!("EDUT rank {rank} {dtype:?} not bit-identical"))?;
        }
    }

    let model = EduVqa::with_builtin_routers(micro_config(2)).map_err(|e| e.to_string())?;
    let data = random_batch(model.config(), 10, 1).map_err(|e| e.to_string())?;
    let schedule = TrainSchedule { lr: 1e-2, epochs: 3, batch_size: 4, seed: 5, ..Default::default() };
    let run = || train(&model, model.init_params(4), &data[..7], &data[7..], &schedule, |_| {});
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    ensure(a.last_params == b.last_params && a.best_params == b.best_params && a.optimizer == b.optimizer, || {
        "same-seed training runs differ".into()
    })?;

    let ckpt = Checkpoint {
        config: model.config().clone(),
        params: a.last_params.clone(),
        train_state: Some(a.optimizer.clone()),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("run.educ");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let bits_equal = back.params.len() == ckpt.params.len()
        && back.params.iter().all(|(k, t)| {
            let o = &ckpt.params[k];
            t.shape() == o.shape() && t.data().iter().zip(o.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    ensure(bits_equal && back.train_state == ckpt.train_state && back.config == ckpt.config, || {
        "checkpoint reload differs".into()
    })?;
    ensure(back.to_bytes().map_err(|e| e.to_string())? == ckpt.to_bytes().map_err(|e| e.to_string())?, || {
        "checkpoint re-encoding differs".into()
    })?;
    Ok("EDUT ranks 0-5 in f32/f64, checkpoint reload and same-seed training all bit-identical".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("routing invariants", routing_invariants),
        ("degeneracy oracle", degeneracy_oracle),
        ("ablation table structure", table_structure),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("BT.500 fixtures", bt500_fixtures),
        ("metric suite", metric_suite),
        ("split balance", split_balance),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
