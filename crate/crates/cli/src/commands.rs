use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use eduvqa::datastore::splits::DEFAULT_RATIOS;
use eduvqa::datastore::{
    make_split, read_manifest, write_synthetic, Checkpoint, Dimension, Partition, SplitSpec, SynthConfig,
    VideoRecord,
};
use eduvqa::evaluation::{
    aggregate, annotator_consistency, default_eps, evaluate, gmad_pairs, render_table, report_values,
    MetricRegistry, Orientation, ScoreMap,
};
use eduvqa::gradcheck::{micro_suite, GradcheckSettings};
use eduvqa::model::EduVqa;
use eduvqa::subjective::{consolidate, mos_records};
use eduvqa::training::{predict_all, train, Example};
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::error::{data, numerical, usage};
use crate::io::{
    bundle_scores, dimension_column, ensure_dir, manifest_labels, read_ratings, read_scores, read_split,
    write_json, write_scores, write_text,
};
use crate::{
    Cli, Command, EvalArgs, GmadArgs, GradcheckArgs, MosArgs, PartitionArg, PredictArgs, SplitArgs, SynthArgs,
    TrainArgs,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

struct Run<'a> {
    cli: &'a Cli,
    config: FileConfig,
    out: &'a Path,
}

impl Run<'_> {
    /// Record everything needed to repeat the run.
    fn echo(&self, command: &str, args: &impl Serialize, resolved: serde_json::Value) -> Result<()> {
        write_json(
            &self.out.join(RESOLVED_CONFIG),
            &json!({
                "command": command,
                "shared": self.cli.shared,
                "args": args,
                "config": self.config,
                "resolved": resolved,
            }),
        )
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.shared.config.as_deref())?;
    let flags = FileConfig {
        seed: cli.shared.seed,
        dtype: cli.shared.dtype.map(Into::into),
        ..Default::default()
    };
    let out = ensure_dir(&cli.shared.out_dir)?;
    let run = Run { cli, config: file.overlay(&flags), out: &out };
    match &cli.command {
        Command::Synth(a) => synth(run, a),
        Command::Split(a) => split(run, a),
        Command::Mos(a) => mos(run, a),
        Command::Train(a) => train_cmd(run, a),
        Command::Predict(a) => predict(run, a),
        Command::Eval(a) => eval(run, a),
        Command::Gmad(a) => gmad(run, a),
        Command::Gradcheck(a) => gradcheck(run, a),
    }
}

fn synth(mut run: Run, a: &SynthArgs) -> Result<()> {
    run.config = run.config.overlay(&FileConfig {
        videos: a.videos,
        sigma: a.sigma,
        frames: a.frames,
        height: a.height,
        width: a.width,
        tokens: a.tokens,
        channels: a.channels,
        ..Default::default()
    });
    let c = &run.config;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        frames: c.frames.unwrap_or(d.frames),
        height: c.height.unwrap_or(d.height),
        width: c.width.unwrap_or(d.width),
        tokens: c.tokens.unwrap_or(d.tokens),
        channels: c.channels.unwrap_or(d.channels),
        videos: c.videos.unwrap_or(d.videos),
        sigma: c.sigma.unwrap_or(d.sigma),
        seed: c.seed.unwrap_or(d.seed),
        dtype: c.dtype.unwrap_or(d.dtype),
    };
    cfg.validate()?;
    run.echo("synth", a, serde_json::to_value(&cfg)?)?;
    let records = write_synthetic(run.out, &cfg)?;
    println!("wrote {} synthetic videos to {}", records.len(), run.out.display());
    Ok(())
}

fn split(run: Run, a: &SplitArgs) -> Result<()> {
    let records = read_manifest(&a.manifest)?;
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("--ratios needs three values, got {}", a.ratios.len())))?;
    let base = run.config.seed.unwrap_or(0);
    run.echo("split", a, json!({ "base_seed": base, "ratios": ratios }))?;
    for i in 0..a.count as u64 {
        let spec = make_split(&records, base + i, ratios)?;
        let name = format!("split_{i:02}.json");
        write_json(&run.out.join(&name), &spec)?;
        let counts: Vec<usize> = Partition::ALL.iter().map(|p| spec.members(*p).len()).collect();
        println!("{name}: seed {} train {} val {} test {}", spec.seed, counts[0], counts[1], counts[2]);
    }
    Ok(())
}

fn mos(run: Run, a: &MosArgs) -> Result<()> {
    let ratings = read_ratings(&a.ratings)?;
    run.echo("mos", a, json!({}))?;
    let report = consolidate(&ratings)?;
    let scores = report.mos();
    write_json(&run.out.join("mos_report.json"), &report)?;
    write_scores(&run.out.join("mos.csv"), &scores)?;
    write_json(&run.out.join("mos_records.json"), &mos_records(&report))?;
    write_json(&run.out.join("consistency.json"), &annotator_consistency(&ratings, &scores)?)?;

    println!("{} ratings, {} cells", ratings.len(), report.cells.len());
    let rejected = report.rejected();
    if rejected.is_empty() {
        println!("no annotator rejected");
    } else {
        println!("rejected annotators: {}", rejected.join(", "));
    }
    println!("{:<16} {:<16} {:>4} {:>8} {:>7} {:>5} {:>8}", "video", "dimension", "n", "beta2", "lambda", "excl", "mos");
    for (first, c) in report.first_pass.iter().zip(&report.cells) {
        let beta2 = first.beta2.map_or("-".to_string(), |b| format!("{b:.4}"));
        println!(
            "{:<16} {:<16} {:>4} {:>8} {:>7.4} {:>5} {:>8.4}",
            c.video_id,
            c.dimension.to_string(),
            first.n,
            beta2,
            first.lambda,
            first.excluded.len(),
            c.mos
        );
    }
    Ok(())
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_examples(records: &[&VideoRecord], base: &Path) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| Example::load(r, base).with_context(|| format!("loading features of `{}`", r.video_id)))
        .collect()
}

fn select<'a>(records: &'a [VideoRecord], split: &SplitSpec, part: Partition) -> Vec<&'a VideoRecord> {
    records.iter().filter(|r| split.partition_of(&r.video_id) == Some(part)).collect()
}

fn train_cmd(mut run: Run, a: &TrainArgs) -> Result<()> {
    run.config = run.config.overlay(&FileConfig {
        ablation: a.ablation,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        ..Default::default()
    });
    let records = read_manifest(&a.manifest)?;
    let seed = run.config.seed.unwrap_or(0);
    let split = match &a.split {
        Some(p) => read_split(p)?,
        None => make_split(&records, seed, DEFAULT_RATIOS)?,
    };
    let unknown = split.assignment.keys().filter(|id| !records.iter().any(|r| &r.video_id == *id)).count();
    if unknown > 0 {
        log::warn!("{unknown} split entries do not appear in the manifest");
    }
    let base = manifest_dir(&a.manifest);
    let train_set = load_examples(&select(&records, &split, Partition::Train), base)?;
    let val_set = load_examples(&select(&records, &split, Partition::Val), base)?;
    let first = train_set.first().ok_or_else(|| data("the split has no training videos"))?;
    let vs = first.features.video.shape();
    let ts = first.features.text.shape();
    if vs.len() != 4 || ts.len() != 3 {
        return Err(data(format!("feature ranks {vs:?} / {ts:?}; expected [T,H,W,C] and [T,D,C]")));
    }
    let model_cfg = run.config.model(Some([vs[0], vs[1], vs[2], ts[1], vs[3]]))?;
    let schedule = run.config.schedule()?;
    run.echo("train", a, json!({ "model": model_cfg, "schedule": schedule }))?;
    write_json(&run.out.join("split.json"), &split)?;

    let model = EduVqa::with_builtin_routers(model_cfg.clone())?;
    let init = model.init_params(schedule.seed);
    println!(
        "training on {} videos, validating on {}, {} epochs",
        train_set.len(),
        val_set.len(),
        schedule.epochs
    );
    let outcome = train(&model, init, &train_set, &val_set, &schedule, |e| {
        let val: Vec<String> = e.val_srcc.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
        println!("epoch {:>3} lr {:.3e} loss {:.5} val SRCC [{}]", e.epoch, e.lr, e.train_loss, val.join(", "));
    })?;
    Checkpoint { config: model_cfg.clone(), params: outcome.best_params.clone(), train_state: None }
        .save(run.out.join("best.educ"))?;
    Checkpoint { config: model_cfg, params: outcome.last_params.clone(), train_state: Some(outcome.optimizer.clone()) }
        .save(run.out.join("last.educ"))?;
    write_json(
        &run.out.join("train_log.json"),
        &json!({ "best_epoch": outcome.best_epoch, "aborted": outcome.aborted, "epochs": outcome.log }),
    )?;
    if let Some(why) = outcome.aborted {
        return Err(numerical(format!("training stopped on a numerical failure: {why}")));
    }
    println!("best epoch {:?}; checkpoints in {}", outcome.best_epoch, run.out.display());
    Ok(())
}

fn predict(run: Run, a: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let records = read_manifest(&a.manifest)?;
    let split = a.split.as_deref().map(read_split).transpose()?;
    let partition = a.partition.unwrap_or(if split.is_some() { PartitionArg::Test } else { PartitionArg::All });
    let chosen: Vec<&VideoRecord> = match (partition, &split) {
        (PartitionArg::All, _) => records.iter().collect(),
        (_, None) => return Err(usage("--partition other than `all` needs --split")),
        (p, Some(s)) => {
            let part = match p {
                PartitionArg::Train => Partition::Train,
                PartitionArg::Val => Partition::Val,
                _ => Partition::Test,
            };
            select(&records, s, part)
        }
    };
    run.echo("predict", a, json!({ "partition": partition, "videos": chosen.len(), "model": ckpt.config }))?;
    let examples = load_examples(&chosen, manifest_dir(&a.manifest))?;
    let model = EduVqa::with_builtin_routers(ckpt.config.clone())?;
    let bundles = predict_all(&model, &ckpt.params, &examples)?;
    let ids: Vec<String> = examples.iter().map(|e| e.video_id.clone()).collect();
    let path = run.out.join("predictions.csv");
    write_scores(&path, &bundle_scores(&ids, &bundles))?;
    println!("scored {} videos -> {}", ids.len(), path.display());
    Ok(())
}

fn eval(run: Run, a: &EvalArgs) -> Result<()> {
    let labels: ScoreMap = match (&a.manifest, &a.mos) {
        (Some(m), _) => manifest_labels(&read_manifest(m)?),
        (None, Some(p)) => read_scores(p)?,
        (None, None) => return Err(usage("one of --manifest or --mos is required")),
    };
    run.echo("eval", a, json!({ "logistic": !a.no_logistic, "splits": a.predictions.len() }))?;
    let registry = MetricRegistry::standard();
    let multi = a.predictions.len() > 1;
    let mut reports = Vec::new();
    for (i, path) in a.predictions.iter().enumerate() {
        let preds = read_scores(path)?;
        let videos: std::collections::BTreeSet<&str> = preds.keys().map(|(v, _)| v.as_str()).collect();
        let subset: ScoreMap = labels
            .iter()
            .filter(|((v, _), _)| videos.contains(v.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        if subset.is_empty() {
            return Err(data(format!("{}: no predicted video has labels", path.display())));
        }
        let report = evaluate(&preds, &subset, &registry, !a.no_logistic, multi.then_some(i as u64))
            .with_context(|| format!("evaluating {}", path.display()))?;
        reports.push(report);
    }
    let table = if multi {
        let agg = aggregate(reports)?;
        write_json(&run.out.join("metrics.json"), &agg)?;
        render_table(&a.method, &registry, &agg.mean, Some(&agg.std))
    } else {
        let report = reports.remove(0);
        write_json(&run.out.join("metrics.json"), &report)?;
        render_table(&a.method, &registry, &report_values(&report), None)
    };
    write_text(&run.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn named_scores(arg: &str) -> Result<(String, ScoreMap)> {
    let (name, path) = arg
        .split_once('=')
        .ok_or_else(|| usage(format!("expected NAME=PATH, got `{arg}`")))?;
    Ok((name.to_string(), read_scores(Path::new(path))?))
}

fn gmad(run: Run, a: &GmadArgs) -> Result<()> {
    let dim: Dimension = a.dimension.parse().map_err(|e| usage(format!("--dimension: {e}")))?;
    let eps = a.eps.unwrap_or_else(|| default_eps(a.mos_range));
    let (n1, s1) = named_scores(&a.first)?;
    let (n2, s2) = named_scores(&a.second)?;
    if n1 == n2 {
        return Err(usage("the two models need different names"));
    }
    run.echo("gmad", a, json!({ "eps": eps, "dimension": dim }))?;
    let (c1, c2) = (dimension_column(&s1, dim), dimension_column(&s2, dim));
    let mut result = BTreeMap::new();
    for (key, orientation) in [("first_defends", Orientation::FirstDefends), ("second_defends", Orientation::SecondDefends)] {
        let pairs = gmad_pairs((&n1, &c1), (&n2, &c2), eps, a.top_n, orientation)?;
        if let Some(p) = pairs.first() {
            println!("{} defends, {} attacks ({} pairs):", p.defender, p.attacker, pairs.len());
        } else {
            println!("{key}: no pair within eps {eps}");
        }
        for p in &pairs {
            println!(
                "  {} vs {}: defender gap {:.4}, attacker gap {:.4}",
                p.video_a, p.video_b, p.defender_delta, p.attacker_delta
            );
        }
        result.insert(key, pairs);
    }
    write_json(
        &run.out.join("gmad.json"),
        &json!({ "dimension": dim, "eps": eps, "pairs": result }),
    )
}

fn gradcheck(run: Run, a: &GradcheckArgs) -> Result<()> {
    let settings = GradcheckSettings { step: a.step, tolerance: a.tolerance, ..Default::default() };
    let seed = run.config.seed.unwrap_or(0);
    run.echo("gradcheck", a, json!({ "seed": seed, "settings": settings }))?;
    let reports = micro_suite(seed, &settings)?;
    write_json(&run.out.join("gradcheck.json"), &reports)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{}: {} tensors, max relative error {:.3e} ({}) in {:.2} s",
            r.label,
            r.params.len(),
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" },
            r.seconds
        );
        if !r.passed {
            failed.push(r.label.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
