//! Finite-difference verification of the backward pass.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::Labels;
use crate::error::Result;
use crate::model::{EduVqa, ModelConfig, SampleFeatures};
use crate::numerics::{DType, Graph, ParamStore, Tensor};
use crate::training::{total_loss, Example, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSettings {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
    pub seconds: f64,
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn batch_loss(model: &EduVqa, params: &ParamStore, batch: &[Example], weights: &LossWeights) -> Result<(Graph, crate::numerics::Var)> {
    let mut g = Graph::new();
    let mut bundles = Vec::with_capacity(batch.len());
    for e in batch {
        bundles.push(model.forward(&mut g, params, &e.features)?.bundle);
    }
    let labels: Vec<&Labels> = batch.iter().map(|e| &e.labels).collect();
    let masks: Vec<&[bool]> = batch.iter().map(|e| e.features.token_mask.as_slice()).collect();
    let loss = total_loss(&mut g, &bundles, &labels, &masks, weights)?.loss;
    Ok((g, loss))
}

/// Compare every parameter gradient of the batch loss with central differences.
pub fn gradcheck(
    label: &str,
    model: &EduVqa,
    params: &ParamStore,
    batch: &[Example],
    weights: &LossWeights,
    settings: &GradcheckSettings,
) -> Result<GradcheckReport> {
    let start = Instant::now();
    let (g, loss) = batch_loss(model, params, batch, weights)?;
    let grads = g.backward(loss)?;
    let analytic = g.param_grads(&grads, params);
    drop(g);

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let n = params[&name].len();
        let mut worst = ParamCheck {
            name: name.clone(),
            elements: n,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..n {
            let x0 = params[&name].data()[i];
            let mut eval = |x: f64| -> Result<f64> {
                probe.get_mut(&name).expect("param").data_mut()[i] = x;
                let (g, l) = batch_loss(model, &probe, batch, weights)?;
                Ok(g.scalar_value(l))
            };
            let up = eval(x0 + settings.step)?;
            let down = eval(x0 - settings.step)?;
            probe.get_mut(&name).expect("param").data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * settings.step);
            let a = analytic[&name].data()[i];
            let rel = relative_error(a, numeric, settings.floor);
            if rel > worst.max_rel_error || i == 0 {
                worst.max_rel_error = rel;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        label: label.to_string(),
        max_rel_error,
        passed: max_rel_error < settings.tolerance,
        params: checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `T=2, H=W=2, C=4, D=3, M=N=Z=2` at top-`k`, computed in f64.
pub fn micro_config(k: usize) -> ModelConfig {
    ModelConfig {
        frames: 2,
        height: 2,
        width: 2,
        tokens: 3,
        channels: 4,
        spatial_experts: 2,
        temporal_experts: 2,
        alignment_experts: 2,
        top_k: k,
        joint_top_k: k,
        dtype: DType::F64,
        ..Default::default()
    }
}

/// Random features and labels shaped for `config`.
pub fn random_batch(config: &ModelConfig, size: usize, seed: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let (t, h, w, c, d) = (config.frames, config.height, config.width, config.channels, config.tokens);
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let video = Tensor::new(vec![t, h, w, c], normal(t * h * w * c))?;
        let text = Tensor::new(vec![t, d, c], normal(t * d * c))?;
        out.push((i, video, text));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    Ok(out
        .into_iter()
        .map(|(i, video, text)| {
            let mut score = || rng.gen_range(1.0..=5.0);
            let labels = Labels {
                spatial: score(),
                temporal: score(),
                overall_percept: score(),
                word: (1..d).map(|_| score()).collect(),
                sentence: score(),
            };
            // mask the last word of the first sample to exercise masked positions
            let token_mask = (1..d).map(|p| !(i == 0 && p == d - 1)).collect();
            Example {
                video_id: format!("g{i}"),
                features: SampleFeatures { video, text, token_mask },
                labels,
            }
        })
        .collect())
}

/// The standard suite: the micro-config at `k = 1` and `k = 2`.
pub fn micro_suite(seed: u64, settings: &GradcheckSettings) -> Result<Vec<GradcheckReport>> {
    [1usize, 2]
        .iter()
        .map(|&k| {
            let model = EduVqa::with_builtin_routers(micro_config(k))?;
            let params = model.init_params(seed);
            let batch = random_batch(model.config(), 4, seed.wrapping_add(100))?;
            gradcheck(
                &format!("micro k={k}"),
                &model,
                &params,
                &batch,
                &LossWeights::default(),
                settings,
            )
        })
        .collect()
}
