use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grasp_core::datasets::{split, GraspSet, Stratify, WindowConfig};
use grasp_core::evaluation::{
    cross_condition_matrix, evaluate_sets, prediction_dump_csv, report_table, run_experiment,
    CrossConfig, EvalReport, ExperimentConfig, ExperimentMode,
};
use grasp_core::load_checkpoint;
use grasp_core::model::checkpoint::encode;
use grasp_core::model::{grad_check_instance, TrainHistory, Variant};
use grasp_core::registry::Registry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    apply_labels, check_channels, emit, fitted_channels, load_sets, parse_channels, prepare_out,
    read_json, resolve_config, usage,
};
use crate::args::{CrossEvalArgs, EvalArgs, ExperimentArgs, GradCheckArgs, ModeArg, TrainArgs};
use crate::{CliError, Ctx, Outcome};

pub(crate) const CHECKPOINT_FILE: &str = "model.ckpt";
pub(crate) const SPLIT_FILE: &str = "split.json";

/// Which sets `train` used and held out, and how windows were cut, so that
/// `eval` can score the same held-out sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SplitFile {
    pub model: String,
    pub seed: u64,
    pub ratio: f64,
    pub stratify: Stratify,
    pub channels: Vec<usize>,
    pub window: WindowConfig,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn history_csv(h: &TrainHistory) -> String {
    let mut out = String::from("epoch,mean_loss,train_success,val_success\n");
    for e in &h.epochs {
        let val = e.val_success.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(out, "{},{},{},{val}", e.epoch, e.mean_loss, e.train_success);
    }
    out
}

pub(crate) fn train(ctx: &Ctx, a: &TrainArgs) -> anyhow::Result<Outcome> {
    let registry = Registry::with_defaults();
    registry
        .resolve(&a.model)
        .map_err(|e| usage(e.to_string()))?;
    let (sets, files) = load_sets(&a.data)?;
    let mut cfg = resolve_config(&a.config, &sets)?;
    cfg.models = vec![a.model.clone()];
    cfg.seeds = vec![ctx.seed];
    cfg.train.seed = ctx.seed;
    cfg.baseline.seed = ctx.seed;
    prepare_out(ctx, &[&a.data])?;
    let sp = split(&sets, cfg.ratio, ctx.seed, cfg.stratify)?;
    let (train_sets, test_sets) = sp.select(&sets);
    log::info!(
        "training {} on {} sets ({} held out), {} channels",
        a.model,
        train_sets.len(),
        test_sets.len(),
        cfg.channels.len()
    );
    let (model, history) = cfg.fit(&registry, &a.model, &train_sets, ctx.seed)?;
    let split_file = SplitFile {
        model: a.model.clone(),
        seed: ctx.seed,
        ratio: cfg.ratio,
        stratify: cfg.stratify,
        channels: cfg.channels.clone(),
        window: cfg.window.clone(),
        train: train_sets.iter().map(|s| s.id.clone()).collect(),
        test: test_sets.iter().map(|s| s.id.clone()).collect(),
    };
    let outputs = vec![
        emit(ctx, CHECKPOINT_FILE, &encode(model.as_ref()))?,
        emit(ctx, "history.csv", history_csv(&history).as_bytes())?,
        emit(
            ctx,
            SPLIT_FILE,
            (serde_json::to_string_pretty(&split_file)? + "\n").as_bytes(),
        )?,
    ];
    let mut summary = format!(
        "{}: trained {}",
        ctx.out.join(CHECKPOINT_FILE).display(),
        model.display_name()
    );
    if let Some(e) = history.epochs.last() {
        let _ = write!(
            summary,
            ", {} epochs, loss {:.4}, train success {:.4}",
            history.epochs.len(),
            e.mean_loss,
            e.train_success
        );
    }
    summary.push('\n');
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs: files,
        outputs,
        summary,
        verdict: None,
    })
}

pub(crate) fn eval(ctx: &Ctx, a: &EvalArgs) -> anyhow::Result<Outcome> {
    let registry = Registry::with_defaults();
    let (sets, mut inputs) = load_sets(&a.data)?;
    let split_file: Option<SplitFile> = a.split.as_ref().map(|p| read_json(p)).transpose()?;
    let selected: Vec<&GraspSet> = match &split_file {
        Some(s) => {
            let by_id: BTreeMap<&str, &GraspSet> =
                sets.iter().map(|g| (g.id.as_str(), g)).collect();
            s.test
                .iter()
                .map(|id| {
                    by_id.get(id.as_str()).copied().ok_or_else(|| {
                        usage(format!(
                            "split names set '{id}', not found in {}",
                            a.data.display()
                        ))
                    })
                })
                .collect::<anyhow::Result<_>>()?
        }
        None => sets.iter().collect(),
    };
    if selected.is_empty() {
        return Err(usage("no sets to evaluate"));
    }
    let models = a
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p, &registry))
        .collect::<grasp_core::Result<Vec<_>>>()?;
    let channels = match (&a.channels, &split_file) {
        (Some(c), _) => parse_channels(c)?,
        (None, Some(s)) => s.channels.clone(),
        (None, None) => match models.first().and_then(|m| fitted_channels(m.as_ref())) {
            Some(c) => c,
            None => (0..sets.iter().map(GraspSet::n_channels).min().unwrap_or(0)).collect(),
        },
    };
    check_channels(&channels, &sets)?;
    let mut window = split_file
        .as_ref()
        .map(|s| s.window.clone())
        .unwrap_or_default();
    apply_labels(&a.labels, &mut window);

    let mut guard: Vec<&Path> = vec![&a.data];
    guard.extend(a.checkpoints.iter().map(PathBuf::as_path));
    prepare_out(ctx, &guard)?;

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut outputs = Vec::new();
    for (path, model) in a.checkpoints.iter().zip(models) {
        log::info!(
            "scoring {} on {} sets",
            model.display_name(),
            selected.len()
        );
        let (report, windows, preds) =
            evaluate_sets(model.as_ref(), &selected, &channels, &window)?;
        let name = if a.checkpoints.len() == 1 {
            "predictions.csv".to_string()
        } else {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            format!("predictions-{}-{stem}.csv", reports.len())
        };
        outputs.push(emit(
            ctx,
            &name,
            prediction_dump_csv(&windows, &preds).as_bytes(),
        )?);
        reports.push(report);
        inputs.push(path.clone());
    }
    if let Some(p) = &a.split {
        inputs.push(p.clone());
    }
    let table = report_table(&reports);
    outputs.push(emit(
        ctx,
        "report.json",
        (serde_json::to_string_pretty(&reports)? + "\n").as_bytes(),
    )?);
    outputs.push(emit(ctx, "report.txt", table.as_bytes())?);
    Ok(Outcome {
        config: json!({
            "channels": channels,
            "window": window,
            "sets": selected.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
        }),
        inputs,
        outputs,
        summary: table,
        verdict: None,
    })
}

pub(crate) fn cross_eval(ctx: &Ctx, a: &CrossEvalArgs) -> anyhow::Result<Outcome> {
    let registry = Registry::with_defaults();
    registry
        .resolve(&a.model)
        .map_err(|e| usage(e.to_string()))?;
    let (sets, files) = load_sets(&a.data)?;
    let mut cfg = resolve_config(&a.config, &sets)?;
    cfg.models = vec![a.model.clone()];
    cfg.seeds = vec![ctx.seed];
    prepare_out(ctx, &[&a.data])?;
    let cross = CrossConfig {
        ratio: cfg.ratio,
        seed: ctx.seed,
        channels: cfg.channels.clone(),
        window: cfg.window.clone(),
    };
    log::info!("cross-condition matrix for {}", a.model);
    let m = cross_condition_matrix(&sets, &cross, |train| {
        cfg.fit(&registry, &a.model, train, ctx.seed)
            .map(|(m, _)| m)
    })?;
    let text = m.to_text();
    let outputs = vec![
        emit(ctx, "cross.csv", m.to_csv().as_bytes())?,
        emit(ctx, "cross.txt", text.as_bytes())?,
        emit(
            ctx,
            "cross.json",
            (serde_json::to_string_pretty(&m)? + "\n").as_bytes(),
        )?,
    ];
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs: files,
        outputs,
        summary: text,
        verdict: None,
    })
}

pub(crate) fn grad_check(ctx: &Ctx, a: &GradCheckArgs) -> anyhow::Result<Outcome> {
    let variants: Vec<Variant> = if a.models.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.models
            .iter()
            .map(|m| {
                m.parse()
                    .map_err(|_| usage(format!("'{m}' is not an LSTM variant")))
            })
            .collect::<anyhow::Result<_>>()?
    };
    if a.instances == 0 {
        return Err(usage("--instances must be at least 1"));
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(format!("--eps must be positive, got {}", a.eps)));
    }
    prepare_out(ctx, &[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let seeds: Vec<u64> = (0..a.instances).map(|_| rng.random()).collect();
    let mut csv = String::from("model,instance,seed,max_rel_error,pass\n");
    let mut summary = String::new();
    let mut failed = Vec::new();
    for v in &variants {
        let mut worst = 0.0f64;
        for (i, &s) in seeds.iter().enumerate() {
            let err = grad_check_instance(*v, a.hidden, a.steps, s, a.eps)
                .map_err(|e| usage(e.to_string()))?;
            let pass = err < a.tolerance;
            let _ = writeln!(csv, "{},{i},{s},{err:e},{pass}", v.name());
            worst = worst.max(err);
        }
        let ok = worst < a.tolerance;
        let _ = writeln!(
            summary,
            "{:<16} max relative error {worst:.3e} over {} instances: {}",
            v.name(),
            a.instances,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(v.name());
        }
    }
    let outputs = vec![emit(ctx, "gradcheck.csv", csv.as_bytes())?];
    let verdict = (!failed.is_empty()).then(|| {
        CliError::Numeric(format!(
            "gradient check above {} for {}",
            a.tolerance,
            failed.join(", ")
        ))
    });
    Ok(Outcome {
        config: json!({
            "models": variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
            "hidden": a.hidden,
            "steps": a.steps,
            "instances": a.instances,
            "eps": a.eps,
            "tolerance": a.tolerance,
        }),
        inputs: Vec::new(),
        outputs,
        summary,
        verdict,
    })
}

pub(crate) fn experiment(ctx: &Ctx, a: &ExperimentArgs) -> anyhow::Result<Outcome> {
    let registry = Registry::with_defaults();
    let (sets, files) = load_sets(&a.data)?;
    let mut cfg: ExperimentConfig = resolve_config(&a.config, &sets)?;
    if !a.models.is_empty() {
        cfg.models = a.models.clone();
    }
    for m in &cfg.models {
        registry.resolve(m).map_err(|e| usage(e.to_string()))?;
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    } else if a.config.config.is_none() {
        cfg.seeds = vec![ctx.seed];
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Pooled => ExperimentMode::Pooled,
            ModeArg::PerDirection => ExperimentMode::PerDirection,
        };
    }
    prepare_out(ctx, &[&a.data])?;
    log::info!(
        "experiment: {} models x {} seeds on {} sets",
        cfg.models.len(),
        cfg.seeds.len(),
        sets.len()
    );
    let result = run_experiment(&cfg, &sets, &registry)?;
    let written = result.write(&ctx.out)?;
    let outputs = written
        .iter()
        .map(|p| {
            p.strip_prefix(&ctx.out)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.clone())
        })
        .collect();
    let mut summary = result.aggregate_text();
    for r in result.rows.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(
            summary,
            "failed: {} / {} / seed {}: {}",
            r.model,
            r.condition,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        inputs: files,
        outputs,
        summary,
        verdict: None,
    })
}
