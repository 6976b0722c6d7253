use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aligned_table, evaluate_sets, fmt_rate, EvalReport};
use crate::baselines::BaselineConfig;
use crate::datasets::{
    build_windows, fit_norm_stats, split, GraspSet, Stratify, WindowConfig, FORCE_CHANNELS,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{TrainConfig, TrainHistory, Variant};
use crate::registry::{Classifier, ModelSpec, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    /// All sets together.
    Pooled,
    /// One train/test split and model per direction.
    PerDirection,
}

/// Model list × dataset × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    pub channels: Vec<usize>,
    /// Train share of the set-level split.
    pub ratio: f64,
    pub stratify: Stratify,
    pub mode: ExperimentMode,
    /// Share of the training sets held out for early stopping; none by
    /// default.
    pub validation_ratio: Option<f64>,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Feature pipeline of the baselines.
    pub feature_variant: Variant,
    pub window: WindowConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            seeds: vec![0],
            channels: (0..FORCE_CHANNELS).collect(),
            ratio: 0.8,
            stratify: Stratify::Outcome,
            mode: ExperimentMode::Pooled,
            validation_ratio: None,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            feature_variant: Variant::DataStftLstm,
            window: WindowConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Model spec for one seed; stats are fitted on `train`.
    pub fn spec(&self, train: &[&GraspSet], seed: u64) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(fit_norm_stats(train, &self.channels)?);
        spec.feature_variant = self.feature_variant;
        spec.train = TrainConfig {
            seed,
            window_len: self.window.window_len,
            ..self.train.clone()
        };
        spec.baseline = BaselineConfig {
            seed,
            ..self.baseline.clone()
        };
        Ok(spec)
    }

    /// Builds and fits `name` on `train`.
    pub fn fit(
        &self,
        registry: &Registry,
        name: &str,
        train: &[&GraspSet],
        seed: u64,
    ) -> Result<(Box<dyn Classifier>, TrainHistory)> {
        let (fit_sets, val_sets): (Vec<&GraspSet>, Vec<&GraspSet>) = match self.validation_ratio {
            Some(r) if train.len() >= 2 => {
                let owned: Vec<GraspSet> = train.iter().map(|s| (*s).clone()).collect();
                let sp = split(&owned, 1.0 - r, seed, self.stratify)?;
                (
                    sp.train.iter().map(|&i| train[i]).collect(),
                    sp.test.iter().map(|&i| train[i]).collect(),
                )
            }
            _ => (train.to_vec(), Vec::new()),
        };
        let spec = self.spec(&fit_sets, seed)?;
        let mut model = registry.build(name, &spec)?;
        let windows = build_windows(&fit_sets, &self.channels, model.featurizer(), &self.window)?;
        let val = if val_sets.is_empty() {
            Vec::new()
        } else {
            build_windows(&val_sets, &self.channels, model.featurizer(), &self.window)?
        };
        let history = model.fit(&windows, &val)?;
        Ok((model, history))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: String,
    pub display_name: String,
    pub condition: String,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub epochs_run: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub display_name: String,
    pub condition: String,
    /// Seeds that produced a report.
    pub n_seeds: usize,
    pub success_rate: Option<f64>,
    pub window_success_rate: Option<f64>,
    pub ahead_drop_rate: Option<f64>,
    pub failed_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub aggregate: Vec<AggregateRow>,
}

const ROW_HEADER: &str =
    "model,condition,seed,success_rate,window_success_rate,ahead_drop_rate,n_windows,n_steps,n_failure_units,tp,fp,tn,fn,error";
const AGG_HEADER: &str =
    "model,condition,n_seeds,success_rate,window_success_rate,ahead_drop_rate,failed_seeds";

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ExperimentResult {
    pub fn seed_csv(&self, seed: u64) -> String {
        let mut out = format!("{ROW_HEADER}\n");
        for r in self.rows.iter().filter(|r| r.seed == seed) {
            let _ = write!(out, "{},{},{},", r.model, r.condition, r.seed);
            match &r.report {
                Some(rep) => {
                    let c = &rep.totals.confusion;
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},",
                        fmt_rate(Some(rep.success_rate)),
                        fmt_rate(Some(rep.window_success_rate)),
                        fmt_rate(rep.ahead_drop_rate),
                        rep.n_windows,
                        rep.n_steps,
                        rep.n_failure_units,
                        c.tp,
                        c.fp,
                        c.tn,
                        c.fn_
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "n/a,n/a,n/a,0,0,0,0,0,0,0,{}",
                        csv_field(r.error.as_deref().unwrap_or(""))
                    );
                }
            }
        }
        out
    }

    pub fn seed_text(&self, seed: u64) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| {
                let rep = r.report.as_ref();
                vec![
                    r.display_name.clone(),
                    r.condition.clone(),
                    fmt_rate(rep.map(|x| x.success_rate)),
                    fmt_rate(rep.and_then(|x| x.ahead_drop_rate)),
                    fmt_rate(rep.map(|x| x.window_success_rate)),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        format!(
            "seed {seed}\n{}",
            aligned_table(
                &[
                    "Model",
                    "Condition",
                    "Success rate",
                    "Ahead-drop rate",
                    "Window success",
                    "Error"
                ],
                &rows
            )
        )
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{AGG_HEADER}\n");
        for a in &self.aggregate {
            let failed: Vec<String> = a.failed_seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                a.model,
                a.condition,
                a.n_seeds,
                fmt_rate(a.success_rate),
                fmt_rate(a.window_success_rate),
                fmt_rate(a.ahead_drop_rate),
                failed.join(" ")
            );
        }
        out
    }

    pub fn aggregate_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .aggregate
            .iter()
            .map(|a| {
                vec![
                    a.display_name.clone(),
                    a.condition.clone(),
                    a.n_seeds.to_string(),
                    fmt_rate(a.success_rate),
                    fmt_rate(a.ahead_drop_rate),
                    fmt_rate(a.window_success_rate),
                ]
            })
            .collect();
        format!(
            "mean over seeds\n{}",
            aligned_table(
                &[
                    "Model",
                    "Condition",
                    "Seeds",
                    "Success rate",
                    "Ahead-drop rate",
                    "Window success"
                ],
                &rows
            )
        )
    }

    /// Writes `seed_<s>.csv/.txt`, `aggregate.csv/.txt` and `results.json`
    /// into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files: Vec<(PathBuf, String)> = Vec::new();
        for &seed in &self.config.seeds {
            files.push((dir.join(format!("seed_{seed}.csv")), self.seed_csv(seed)));
            files.push((dir.join(format!("seed_{seed}.txt")), self.seed_text(seed)));
        }
        files.push((dir.join("aggregate.csv"), self.aggregate_csv()));
        files.push((dir.join("aggregate.txt"), self.aggregate_text()));
        files.push((
            dir.join("results.json"),
            serde_json::to_string_pretty(self)? + "\n",
        ));
        for (p, text) in &files {
            write_atomic(p, text.as_bytes())?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Runs every (model, condition, seed) cell, in parallel. Cells share the
/// split of their (condition, seed), so models are compared on the same
/// held-out sets. A failing cell is recorded and the run continues.
pub fn run_experiment(
    config: &ExperimentConfig,
    sets: &[GraspSet],
    registry: &Registry,
) -> Result<ExperimentResult> {
    if config.models.is_empty() || config.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "experiment needs at least one model and one seed".into(),
        ));
    }
    for m in &config.models {
        registry.resolve(m)?;
    }
    let mut groups: BTreeMap<String, Vec<&GraspSet>> = BTreeMap::new();
    for s in sets {
        let key = match config.mode {
            ExperimentMode::Pooled => "all".to_string(),
            ExperimentMode::PerDirection => s.condition(),
        };
        groups.entry(key).or_default().push(s);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }

    type SplitSets<'a> = std::result::Result<(Vec<&'a GraspSet>, Vec<&'a GraspSet>), String>;
    let mut splits: BTreeMap<(String, u64), SplitSets> = BTreeMap::new();
    for (cond, members) in &groups {
        for &seed in &config.seeds {
            let owned: Vec<GraspSet> = members.iter().map(|s| (*s).clone()).collect();
            let sp = split(&owned, config.ratio, seed, config.stratify)
                .map(|sp| {
                    (
                        sp.train.iter().map(|&i| members[i]).collect(),
                        sp.test.iter().map(|&i| members[i]).collect(),
                    )
                })
                .map_err(|e| e.to_string());
            splits.insert((cond.clone(), seed), sp);
        }
    }

    let mut cells = Vec::new();
    for m in &config.models {
        for cond in groups.keys() {
            for &seed in &config.seeds {
                cells.push((m.clone(), cond.clone(), seed));
            }
        }
    }
    let rows: Vec<ExperimentRow> = cells
        .par_iter()
        .map(|(name, cond, seed)| {
            let entry = registry.resolve(name).expect("resolved above");
            let mut row = ExperimentRow {
                model: entry.name.to_string(),
                display_name: display_name_of(entry.name),
                condition: cond.clone(),
                seed: *seed,
                report: None,
                epochs_run: 0,
                error: None,
            };
            let outcome = splits[&(cond.clone(), *seed)]
                .clone()
                .map_err(Error::InvalidArgument)
                .and_then(|(train, test)| {
                    let (model, history) = config.fit(registry, name, &train, *seed)?;
                    let (report, _, _) =
                        evaluate_sets(model.as_ref(), &test, &config.channels, &config.window)?;
                    Ok((report, history.epochs.len(), model.display_name()))
                });
            match outcome {
                Ok((report, epochs, display)) => {
                    row.report = Some(report);
                    row.epochs_run = epochs;
                    row.display_name = display;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();

    let mut aggregate = Vec::new();
    for m in &config.models {
        let name = registry.resolve(m)?.name;
        for cond in groups.keys() {
            let mine: Vec<&ExperimentRow> = rows
                .iter()
                .filter(|r| r.model == name && &r.condition == cond)
                .collect();
            let ok: Vec<&EvalReport> = mine.iter().filter_map(|r| r.report.as_ref()).collect();
            aggregate.push(AggregateRow {
                model: name.to_string(),
                display_name: mine
                    .first()
                    .map_or_else(|| display_name_of(name), |r| r.display_name.clone()),
                condition: cond.clone(),
                n_seeds: ok.len(),
                success_rate: mean(ok.iter().map(|r| r.success_rate)),
                window_success_rate: mean(ok.iter().map(|r| r.window_success_rate)),
                ahead_drop_rate: mean(ok.iter().filter_map(|r| r.ahead_drop_rate)),
                failed_seeds: mine
                    .iter()
                    .filter(|r| r.report.is_none())
                    .map(|r| r.seed)
                    .collect(),
            });
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        rows,
        aggregate,
    })
}

fn display_name_of(name: &str) -> String {
    match name.parse::<Variant>() {
        Ok(v) => v.display_name().to_string(),
        Err(_) => name.to_uppercase(),
    }
}
