use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aligned_table, evaluate_sets, fmt_rate};
use crate::datasets::{split, GraspSet, Stratify, WindowConfig};
use crate::error::Result;
use crate::registry::Classifier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossConfig {
    /// Train share inside each condition.
    pub ratio: f64,
    pub seed: u64,
    pub channels: Vec<usize>,
    pub window: WindowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub success_rate: f64,
    pub ahead_drop_rate: Option<f64>,
    pub n_steps: usize,
}

/// Rows: training condition. Columns: test condition. `None` marks a cell
/// that could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub model: String,
    pub conditions: Vec<String>,
    pub cells: Vec<Vec<Option<CellScore>>>,
    /// `condition: message` for rows whose training failed.
    pub errors: Vec<String>,
}

impl CrossMatrix {
    /// `train,test,success_rate,ahead_drop_rate,n_steps`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train,test,success_rate,ahead_drop_rate,n_steps\n");
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                let (s, a, n) = match cell {
                    Some(x) => (
                        fmt_rate(Some(x.success_rate)),
                        fmt_rate(x.ahead_drop_rate),
                        x.n_steps.to_string(),
                    ),
                    None => ("n/a".into(), "n/a".into(), "0".into()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{s},{a},{n}",
                    self.conditions[r], self.conditions[c]
                );
            }
        }
        out
    }

    /// Success-rate and ahead-drop matrices as aligned text.
    pub fn to_text(&self) -> String {
        let mut header = vec!["train \\ test"];
        header.extend(self.conditions.iter().map(String::as_str));
        let table = |f: &dyn Fn(&CellScore) -> Option<f64>| {
            let rows: Vec<Vec<String>> = self
                .cells
                .iter()
                .zip(&self.conditions)
                .map(|(row, name)| {
                    std::iter::once(name.clone())
                        .chain(row.iter().map(|c| fmt_rate(c.as_ref().and_then(f))))
                        .collect()
                })
                .collect();
            aligned_table(&header, &rows)
        };
        let mut out = format!("{}: success rate\n", self.model);
        out.push_str(&table(&|c| Some(c.success_rate)));
        let _ = write!(out, "\n{}: ahead-drop rate\n", self.model);
        out.push_str(&table(&|c| c.ahead_drop_rate));
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        out
    }
}

/// Splits every direction condition into train/test sets, trains one model
/// per condition with `train_fn`, and scores it on every condition's test
/// sets. Rows run in parallel; failures leave "n/a" cells.
pub fn cross_condition_matrix<F>(
    sets: &[GraspSet],
    cfg: &CrossConfig,
    train_fn: F,
) -> Result<CrossMatrix>
where
    F: Fn(&[&GraspSet]) -> Result<Box<dyn Classifier>> + Sync,
{
    let mut groups: BTreeMap<String, Vec<&GraspSet>> = BTreeMap::new();
    for s in sets {
        groups.entry(s.condition()).or_default().push(s);
    }
    let conditions: Vec<String> = groups.keys().cloned().collect();
    let parts: Vec<(Vec<&GraspSet>, Vec<&GraspSet>)> = groups
        .values()
        .map(|members| {
            if members.len() < 2 {
                return Ok((Vec::new(), members.clone()));
            }
            let owned: Vec<GraspSet> = members.iter().map(|s| (*s).clone()).collect();
            let sp = split(&owned, cfg.ratio, cfg.seed, Stratify::Outcome)?;
            Ok((
                sp.train.iter().map(|&i| members[i]).collect(),
                sp.test.iter().map(|&i| members[i]).collect(),
            ))
        })
        .collect::<Result<_>>()?;

    // (cells, error, model display name)
    type Row = (Vec<Option<CellScore>>, Option<String>, Option<String>);
    let rows: Vec<Row> = parts
        .par_iter()
        .zip(&conditions)
        .map(|((train, _), cond)| {
            let empty = vec![None; conditions.len()];
            if train.is_empty() {
                return (empty, Some(format!("{cond}: no training sets")), None);
            }
            let model = match train_fn(train) {
                Ok(m) => m,
                Err(e) => return (empty, Some(format!("{cond}: {e}")), None),
            };
            let name = model.display_name();
            let cells = parts
                .iter()
                .map(|(_, test)| {
                    if test.is_empty() {
                        return None;
                    }
                    evaluate_sets(model.as_ref(), test, &cfg.channels, &cfg.window)
                        .ok()
                        .map(|(r, _, _)| CellScore {
                            success_rate: r.success_rate,
                            ahead_drop_rate: r.ahead_drop_rate,
                            n_steps: r.n_steps,
                        })
                })
                .collect();
            (cells, None, Some(name))
        })
        .collect();

    let model = rows.iter().find_map(|r| r.2.clone()).unwrap_or_default();
    let errors = rows.iter().filter_map(|r| r.1.clone()).collect();
    Ok(CrossMatrix {
        model,
        conditions,
        cells: rows.into_iter().map(|r| r.0).collect(),
        errors,
    })
}
