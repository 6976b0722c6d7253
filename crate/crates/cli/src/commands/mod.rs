pub(crate) mod data;
pub(crate) mod model;
pub(crate) mod simulate;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use grasp_core::datasets::trace_file::trace_files;
use grasp_core::datasets::{load_dataset, GraspSet, WindowConfig};
use grasp_core::evaluation::ExperimentConfig;
use grasp_core::io::write_atomic;
use grasp_core::registry::Classifier;
use serde::de::DeserializeOwned;

use crate::args::{ConfigArgs, LabelArgs};
use crate::{CliError, Ctx};

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

/// Creates the output directory, refusing a non-empty one without
/// `--force`, and refusing any directory that is also an input.
pub(crate) fn prepare_out(ctx: &Ctx, inputs: &[&Path]) -> anyhow::Result<()> {
    if ctx.out.exists() {
        let out = ctx.out.canonicalize()?;
        for i in inputs {
            if let Ok(c) = i.canonicalize() {
                if c == out || (c.is_file() && c.parent() == Some(out.as_path())) {
                    return Err(usage(format!(
                        "output directory {} contains the input {}",
                        ctx.out.display(),
                        i.display()
                    )));
                }
            }
        }
        let non_empty = fs::read_dir(&ctx.out)
            .with_context(|| format!("reading {}", ctx.out.display()))?
            .next()
            .is_some();
        if non_empty && !ctx.force {
            return Err(usage(format!(
                "output directory {} is not empty (use --force to write into it)",
                ctx.out.display()
            )));
        }
    }
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    Ok(())
}

/// Writes `name` inside the output directory and returns its relative path.
pub(crate) fn emit(ctx: &Ctx, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
    write_atomic(&ctx.out.join(name), bytes)?;
    Ok(PathBuf::from(name))
}

pub(crate) fn load_sets(dir: &Path) -> anyhow::Result<(Vec<GraspSet>, Vec<PathBuf>)> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(usage(format!("no .trace files in {}", dir.display())));
    }
    let sets = load_dataset(dir)?;
    Ok((sets, files))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Parses a kebab/lowercase enum name the way it appears in JSON configs.
pub(crate) fn parse_name<T: DeserializeOwned>(value: &str, what: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| usage(format!("unknown {what} '{value}'")))
}

/// `0-15`, `0,3,9`, `0-3,8`.
pub(crate) fn parse_channels(spec: &str) -> anyhow::Result<Vec<usize>> {
    let bad = || usage(format!("bad channel list '{spec}'"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    let mut seen = out.clone();
    seen.sort_unstable();
    seen.dedup();
    if out.is_empty() || seen.len() != out.len() {
        return Err(bad());
    }
    Ok(out)
}

/// Channels present in every set.
pub(crate) fn check_channels(channels: &[usize], sets: &[GraspSet]) -> anyhow::Result<()> {
    let n = sets.iter().map(GraspSet::n_channels).min().unwrap_or(0);
    match channels.iter().find(|&&c| c >= n) {
        Some(c) => Err(usage(format!(
            "channel {c} out of range (sets have {n} channels)"
        ))),
        None => Ok(()),
    }
}

/// Channels the model holds normalization stats for, if any.
pub(crate) fn fitted_channels(model: &dyn Classifier) -> Option<Vec<usize>> {
    let c: Vec<usize> = model.featurizer().stats.channels.keys().copied().collect();
    (!c.is_empty()).then_some(c)
}

pub(crate) fn apply_labels(a: &LabelArgs, w: &mut WindowConfig) {
    if let Some(v) = a.drop_threshold {
        w.labels.drop_rule.threshold = v;
    }
    if let Some(v) = a.drop_sustain {
        w.labels.drop_rule.sustain = v;
    }
    if let Some(v) = a.lead {
        w.labels.lead = v;
    }
    if let Some(v) = a.pressure_margin {
        w.labels.pressure_margin = v;
    }
    if a.no_slip_onset {
        w.labels.use_slip_onset = false;
    }
    if let Some(v) = a.window_len {
        w.window_len = v;
    }
}

/// `--config` file, then flags. Channels default to every channel of the
/// data unless the file or a flag names them.
pub(crate) fn resolve_config(
    a: &ConfigArgs,
    sets: &[GraspSet],
) -> anyhow::Result<ExperimentConfig> {
    let (mut cfg, file_channels) = match &a.config {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            let has = v.get("channels").is_some();
            let cfg: ExperimentConfig =
                serde_json::from_value(v).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            (cfg, has)
        }
        None => (ExperimentConfig::default(), false),
    };
    if let Some(c) = &a.channels {
        cfg.channels = parse_channels(c)?;
    } else if !file_channels {
        let n = sets.iter().map(GraspSet::n_channels).min().unwrap_or(0);
        cfg.channels = (0..n).collect();
    }
    check_channels(&cfg.channels, sets)?;
    if let Some(v) = a.ratio {
        cfg.ratio = v;
    }
    if let Some(v) = &a.stratify {
        cfg.stratify = parse_name(v, "stratification")?;
    }
    if let Some(v) = a.validation_ratio {
        if !(v > 0.0 && v < 1.0) {
            return Err(usage(format!(
                "--validation-ratio must be in (0, 1), got {v}"
            )));
        }
        cfg.validation_ratio = Some(v);
    }
    let t = &mut cfg.train;
    if let Some(v) = a.hidden {
        t.lstm_units = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.clip_norm {
        t.clip_norm = Some(v);
    }
    if a.no_clip {
        t.clip_norm = None;
    }
    if let Some(v) = a.patience {
        t.patience = Some(v);
    }
    if a.no_patience {
        t.patience = None;
    }
    if let Some(v) = a.init_scale {
        t.init_scale = v;
    }
    if let Some(v) = &a.init_mode {
        t.init_mode = parse_name(v, "init mode")?;
    }
    if let Some(v) = &a.loss_mode {
        t.loss_mode = parse_name(v, "loss mode")?;
    }
    if let Some(v) = &a.feature_variant {
        cfg.feature_variant = v
            .parse()
            .map_err(|_| usage(format!("unknown variant '{v}'")))?;
    }
    let b = &mut cfg.baseline;
    if let Some(v) = a.knn_k {
        b.k = v;
    }
    if let Some(v) = a.context {
        b.context = v;
    }
    if let Some(v) = a.svm_epochs {
        b.svm_epochs = v;
    }
    if let Some(v) = a.svm_lambda {
        b.svm_lambda = v;
    }
    if let Some(v) = a.svm_lr0 {
        b.svm_lr0 = v;
    }
    if a.nb_empirical_priors {
        b.nb_empirical_priors = true;
    }
    if let Some(v) = a.max_train_samples {
        b.max_train_samples = v;
    }
    apply_labels(&a.labels, &mut cfg.window);
    cfg.train.window_len = cfg.window.window_len;
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    if !(cfg.ratio > 0.0 && cfg.ratio < 1.0) {
        return Err(usage(format!(
            "--ratio must be in (0, 1), got {}",
            cfg.ratio
        )));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_lists() {
        assert_eq!(parse_channels("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_channels("9, 0,4-5").unwrap(), vec![9, 0, 4, 5]);
        for bad in ["", "3-1", "a", "1,1", "0-2,2"] {
            assert!(parse_channels(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn enum_names() {
        let m: grasp_core::model::LossMode = parse_name("last-step", "loss mode").unwrap();
        assert_eq!(m, grasp_core::model::LossMode::LastStep);
        assert!(parse_name::<grasp_core::model::LossMode>("sometimes", "loss mode").is_err());
    }
}
