use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

pub fn cross_attention_param_shapes(prefix: &str, channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = ["wq", "wk", "wv", "wo"]
        .iter()
        .map(|n| (format!("{prefix}.{n}"), vec![channels, channels]))
        .collect();
    out.push((format!("{prefix}.ln_gamma"), vec![channels]));
    out.push((format!("{prefix}.ln_beta"), vec![channels]));
    out
}

/// Frame-synchronized single-head cross-attention with a residual
/// connection and layer normalization.
///
/// `query: [T, Pq, C]`, `kv: [T, Pk, C]`; position `p` of frame `t` in the
/// query attends over the positions of frame `t` in `kv`. Output shape equals
/// the query shape.
pub fn cross_attention(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    query: Var,
    kv: Var,
) -> Result<Var> {
    let qs = g.value(query).shape().to_vec();
    let ks = g.value(kv).shape().to_vec();
    if qs.len() != 3 || ks.len() != 3 {
        return Err(Error::shape(
            "cross_attention",
            format!("expected [T, P, C] operands, got {qs:?} and {ks:?}"),
        ));
    }
    if qs[0] != ks[0] {
        return Err(Error::shape(
            "cross_attention",
            format!("frame counts differ: {} vs {}", qs[0], ks[0]),
        ));
    }
    if qs[2] != ks[2] {
        return Err(Error::shape(
            "cross_attention",
            format!("channel widths differ: {} vs {}", qs[2], ks[2]),
        ));
    }
    let p = |n: &str| format!("{prefix}.{n}");
    let wq = g.param(params, &p("wq"))?;
    let wk = g.param(params, &p("wk"))?;
    let wv = g.param(params, &p("wv"))?;
    let wo = g.param(params, &p("wo"))?;
    let gamma = g.param(params, &p("ln_gamma"))?;
    let beta = g.param(params, &p("ln_beta"))?;

    let q = g.matmul(query, wq)?;
    let k = g.matmul(kv, wk)?;
    let v = g.matmul(kv, wv)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (qs[2] as f64).sqrt())?;
    let attn = g.softmax(scores, 2)?;
    let context = g.matmul(attn, v)?;
    let out = g.matmul(context, wo)?;
    let residual = g.add(query, out)?;
    g.layer_norm(residual, gamma, beta)
}
