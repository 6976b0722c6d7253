use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use grasp_core::datasets::trace_file::{
    read_csv_channels, trace_files, MANIFEST_FILE, TRACE_EXTENSION,
};
use grasp_core::datasets::{
    load_trace_file, parse_trace, synth_dataset, write_trace, DatasetManifest, GraspSet,
    SynthProfile,
};
use grasp_core::signal::SensorSource;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{emit, prepare_out, usage};
use crate::args::{ConvertArgs, GenDataArgs, ProfileArg};
use crate::{Ctx, Outcome};

fn profile(p: ProfileArg) -> SynthProfile {
    match p {
        ProfileArg::Force => SynthProfile::Force,
        ProfileArg::Pressure => SynthProfile::Pressure,
    }
}

/// Drops trace files and the dataset manifest left by an earlier run.
fn clear_dataset(dir: &Path) -> anyhow::Result<()> {
    for p in trace_files(dir)? {
        fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
    }
    let m = dir.join(MANIFEST_FILE);
    if m.exists() {
        fs::remove_file(&m)?;
    }
    Ok(())
}

/// Writes the sets as `<id>.trace` plus the dataset manifest, checking each
/// file parses back to the same set.
fn write_dataset(ctx: &Ctx, sets: &[GraspSet]) -> anyhow::Result<(Vec<PathBuf>, DatasetManifest)> {
    let mut outputs = Vec::new();
    for s in sets {
        let name = format!("{}.{TRACE_EXTENSION}", s.id);
        let text = write_trace(s)?;
        let back = parse_trace(&text, Path::new(&name))?;
        if &back != s {
            anyhow::bail!("{name} does not round-trip");
        }
        outputs.push(emit(ctx, &name, text.as_bytes())?);
    }
    let manifest = DatasetManifest::scan(&ctx.out)?;
    manifest.write(&ctx.out)?;
    outputs.push(PathBuf::from(MANIFEST_FILE));
    Ok((outputs, manifest))
}

fn dataset_summary(dir: &Path, m: &DatasetManifest) -> String {
    format!(
        "{}: {} sets ({} success, {} failure), {} steps\n",
        dir.display(),
        m.stats.n_sets,
        m.stats.n_success,
        m.stats.n_failure,
        m.stats.total_steps
    )
}

pub(crate) fn gen_data(ctx: &Ctx, a: &GenDataArgs) -> anyhow::Result<Outcome> {
    prepare_out(ctx, &[])?;
    clear_dataset(&ctx.out)?;
    let p = profile(a.profile);
    log::info!(
        "generating {} {} sets, seed {}",
        a.n_sets,
        p.as_str(),
        ctx.seed
    );
    let sets = synth_dataset(ctx.seed, a.n_sets, p)?;
    let (outputs, manifest) = write_dataset(ctx, &sets)?;
    Ok(Outcome {
        config: json!({ "n_sets": a.n_sets, "profile": p.as_str() }),
        inputs: Vec::new(),
        outputs,
        summary: dataset_summary(&ctx.out, &manifest),
        verdict: None,
    })
}

/// Per-file header values, from a `<stem>.json` next to a CSV input. Any
/// field set here wins over the command-line value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub(crate) struct SetMeta {
    pub freq_hz: Option<f64>,
    pub outcome: Option<String>,
    pub direction: Option<String>,
    pub object: Option<String>,
    pub weight: Option<String>,
    pub force_level: Option<String>,
    pub initial: Option<Vec<f64>>,
    pub lift_step: Option<usize>,
    pub slip_onset: Option<usize>,
    pub drop_step: Option<usize>,
}

impl SetMeta {
    fn from_args(a: &ConvertArgs) -> Self {
        Self {
            freq_hz: a.freq_hz,
            outcome: a.outcome.clone(),
            direction: a.direction.clone(),
            object: a.object.clone(),
            weight: a.weight.clone(),
            force_level: a.force_level.clone(),
            initial: a.initial.clone(),
            lift_step: a.lift_step,
            slip_onset: a.slip_onset,
            drop_step: a.drop_step,
        }
    }

    fn overlay(self, o: SetMeta) -> Self {
        Self {
            freq_hz: o.freq_hz.or(self.freq_hz),
            outcome: o.outcome.or(self.outcome),
            direction: o.direction.or(self.direction),
            object: o.object.or(self.object),
            weight: o.weight.or(self.weight),
            force_level: o.force_level.or(self.force_level),
            initial: o.initial.or(self.initial),
            lift_step: o.lift_step.or(self.lift_step),
            slip_onset: o.slip_onset.or(self.slip_onset),
            drop_step: o.drop_step.or(self.drop_step),
        }
    }
}

fn csv_to_set(path: &Path, source: SensorSource, meta: SetMeta) -> anyhow::Result<GraspSet> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| usage(format!("{} has no file name", path.display())))?;
    let channels = read_csv_channels(path)?;
    let need = |v: Option<String>, key: &str| {
        v.ok_or_else(|| {
            usage(format!(
                "{}: no {key} (flag or sidecar json)",
                path.display()
            ))
        })
    };
    let outcome = need(meta.outcome, "outcome")?;
    let outcome = outcome
        .parse()
        .map_err(|_| usage(format!("{}: bad outcome '{outcome}'", path.display())))?;
    let (direction, freq_default) = match source {
        SensorSource::Force => {
            let d = need(meta.direction, "direction")?;
            let d = d
                .parse()
                .map_err(|_| usage(format!("{}: bad direction '{d}'", path.display())))?;
            (Some(d), 16.7)
        }
        SensorSource::Pressure => (None, 71.0),
    };
    let text_default = |v: Option<String>| {
        v.unwrap_or_else(|| {
            if source == SensorSource::Pressure {
                "n/a"
            } else {
                "unknown"
            }
            .into()
        })
    };
    let initial = match source {
        SensorSource::Force => meta.initial,
        SensorSource::Pressure => Some(meta.initial.unwrap_or_else(|| {
            channels
                .iter()
                .map(|c| c.first().copied().unwrap_or(0.0))
                .collect()
        })),
    };
    let set = GraspSet {
        id,
        source,
        freq_hz: meta.freq_hz.unwrap_or(freq_default),
        outcome,
        direction,
        object: text_default(meta.object),
        weight: text_default(meta.weight),
        force_level: text_default(meta.force_level),
        channels,
        slip_onset: meta.slip_onset,
        drop_step: meta.drop_step,
        lift_step: meta.lift_step,
        initial,
    };
    set.validate()
        .with_context(|| format!("converting {}", path.display()))?;
    Ok(set)
}

/// Strided copy at `1/factor` of the rate; step markers scale down.
pub(crate) fn downsample_set(set: &GraspSet, factor: usize) -> anyhow::Result<GraspSet> {
    if factor == 0 {
        return Err(usage("--downsample must be at least 1"));
    }
    if factor == 1 {
        return Ok(set.clone());
    }
    let mut out = set.clone();
    out.channels = set
        .channels
        .iter()
        .map(|c| c.iter().step_by(factor).copied().collect())
        .collect();
    out.freq_hz = set.freq_hz / factor as f64;
    let scale = |s: Option<usize>| s.map(|v| v / factor);
    out.slip_onset = scale(set.slip_onset);
    out.drop_step = scale(set.drop_step);
    out.lift_step = scale(set.lift_step);
    out.validate()?;
    Ok(out)
}

fn expand_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for i in inputs {
        if i.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(i)
                .with_context(|| format!("reading {}", i.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && matches!(
                            p.extension().and_then(|e| e.to_str()),
                            Some("csv") | Some(TRACE_EXTENSION)
                        )
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if i.is_file() {
            files.push(i.clone());
        } else {
            return Err(usage(format!("{} does not exist", i.display())));
        }
    }
    if files.is_empty() {
        return Err(usage("no .csv or .trace inputs found"));
    }
    Ok(files)
}

pub(crate) fn convert(ctx: &Ctx, a: &ConvertArgs) -> anyhow::Result<Outcome> {
    let files = expand_inputs(&a.inputs)?;
    let input_refs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    prepare_out(ctx, &input_refs)?;
    clear_dataset(&ctx.out)?;
    let source = match a.source {
        ProfileArg::Force => SensorSource::Force,
        ProfileArg::Pressure => SensorSource::Pressure,
    };
    let base = SetMeta::from_args(a);
    let mut sets = Vec::new();
    let mut ids = BTreeSet::new();
    let mut inputs = Vec::new();
    for f in &files {
        let set = if f.extension().and_then(|e| e.to_str()) == Some(TRACE_EXTENSION) {
            load_trace_file(f)?
        } else {
            let side = f.with_extension("json");
            let meta = if side.is_file() {
                inputs.push(side.clone());
                base.clone().overlay(super::read_json(&side)?)
            } else {
                base.clone()
            };
            csv_to_set(f, source, meta)?
        };
        let set = downsample_set(&set, a.downsample)?;
        if !ids.insert(set.id.clone()) {
            return Err(usage(format!("two inputs map to set id '{}'", set.id)));
        }
        inputs.push(f.clone());
        sets.push(set);
    }
    log::info!("converting {} files into {}", sets.len(), ctx.out.display());
    let (outputs, manifest) = write_dataset(ctx, &sets)?;
    Ok(Outcome {
        config: json!({
            "source": source.as_str(),
            "defaults": base,
            "downsample": a.downsample,
        }),
        inputs,
        outputs,
        summary: dataset_summary(&ctx.out, &manifest),
        verdict: None,
    })
}
