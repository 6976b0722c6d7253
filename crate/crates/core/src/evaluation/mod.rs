//! Success rate, ahead-drop rate, per-condition breakdowns and the
//! experiment runner.

mod cross;
mod experiment;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cross::{cross_condition_matrix, CrossConfig, CrossMatrix};
pub use experiment::{
    run_experiment, AggregateRow, ExperimentConfig, ExperimentMode, ExperimentResult, ExperimentRow,
};

use crate::datasets::{build_windows, GraspSet, LabeledWindow, WindowConfig};
use crate::error::{Error, Result};
use crate::model::predicted_stable;
use crate::registry::Classifier;

/// Fraction of steps whose predicted stability equals the label.
pub fn success_rate(predicted_stable: &[bool], labels: &[bool]) -> Result<f64> {
    if predicted_stable.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predicted_stable.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted_stable
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// First step predicted unstable.
pub fn first_unstable(predicted_stable: &[bool]) -> Option<usize> {
    predicted_stable.iter().position(|&s| !s)
}

/// One failure unit: where the first unstable prediction fell, and the drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AheadUnit {
    pub first_unstable: Option<usize>,
    pub drop_step: usize,
}

impl AheadUnit {
    /// Strictly before the drop.
    pub fn is_ahead(&self) -> bool {
        self.first_unstable.is_some_and(|f| f < self.drop_step)
    }
}

/// Fraction of failure units flagged strictly before their drop.
pub fn ahead_drop_rate(units: &[AheadUnit]) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::UndefinedMetric(
            "ahead-drop rate needs at least one failure set".into(),
        ));
    }
    Ok(units.iter().filter(|u| u.is_ahead()).count() as f64 / units.len() as f64)
}

/// Step counts with "unstable" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted_stable: bool, label_stable: bool) {
        match (predicted_stable, label_stable) {
            (false, false) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, true) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Counts for one condition (or the whole evaluation).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub confusion: Confusion,
    pub n_windows: usize,
    /// Sum of per-window success rates, for the macro average.
    pub window_success_sum: f64,
    pub n_failure_units: usize,
    pub n_ahead: usize,
}

impl ConditionStats {
    pub fn success_rate(&self) -> Option<f64> {
        let n = self.confusion.total();
        (n > 0).then(|| self.confusion.correct() as f64 / n as f64)
    }

    pub fn window_success_rate(&self) -> Option<f64> {
        (self.n_windows > 0).then(|| self.window_success_sum / self.n_windows as f64)
    }

    pub fn ahead_drop_rate(&self) -> Option<f64> {
        (self.n_failure_units > 0).then(|| self.n_ahead as f64 / self.n_failure_units as f64)
    }

    pub fn merge(&mut self, o: &ConditionStats) {
        self.confusion.merge(&o.confusion);
        self.n_windows += o.n_windows;
        self.window_success_sum += o.window_success_sum;
        self.n_failure_units += o.n_failure_units;
        self.n_ahead += o.n_ahead;
    }
}

/// Evaluation of one classifier on one set of windows.
///
/// The headline success rate is micro-averaged over steps; the window
/// macro average is reported alongside. Ahead-drop units are (set, channel)
/// pairs of failed grasps whose drop lies inside the evaluated windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub display_name: String,
    pub success_rate: f64,
    pub window_success_rate: f64,
    pub ahead_drop_rate: Option<f64>,
    pub n_windows: usize,
    pub n_steps: usize,
    pub n_failure_units: usize,
    pub totals: ConditionStats,
    /// Keyed by direction ("n/a" when a set has none).
    pub breakdown: BTreeMap<String, ConditionStats>,
}

impl EvalReport {
    fn from_stats(
        model: &str,
        display_name: &str,
        totals: ConditionStats,
        breakdown: BTreeMap<String, ConditionStats>,
    ) -> Result<Self> {
        Ok(Self {
            model: model.to_string(),
            display_name: display_name.to_string(),
            success_rate: totals.success_rate().ok_or(Error::EmptyInput)?,
            window_success_rate: totals.window_success_rate().ok_or(Error::EmptyInput)?,
            ahead_drop_rate: totals.ahead_drop_rate(),
            n_windows: totals.n_windows,
            n_steps: totals.confusion.total(),
            n_failure_units: totals.n_failure_units,
            totals,
            breakdown,
        })
    }

    /// Pools the counts of two reports on disjoint data.
    pub fn merge(&self, other: &EvalReport) -> Result<EvalReport> {
        let mut totals = self.totals.clone();
        totals.merge(&other.totals);
        let mut breakdown = self.breakdown.clone();
        for (k, v) in &other.breakdown {
            breakdown.entry(k.clone()).or_default().merge(v);
        }
        Self::from_stats(&self.model, &self.display_name, totals, breakdown)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-step output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub p_unstable: Vec<f64>,
}

impl WindowPrediction {
    pub fn stable(&self) -> Vec<bool> {
        self.p_unstable
            .iter()
            .map(|&p| predicted_stable(p))
            .collect()
    }
}

/// Predicts every window (in parallel) and scores the predictions.
pub fn evaluate(
    classifier: &dyn Classifier,
    windows: &[LabeledWindow],
) -> Result<(EvalReport, Vec<WindowPrediction>)> {
    if windows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let preds: Vec<WindowPrediction> = windows
        .par_iter()
        .map(|w| {
            let p = classifier.predict_proba(&w.input)?;
            if p.len() != w.labels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} predictions for {} steps",
                    p.len(),
                    w.labels.len()
                )));
            }
            Ok(WindowPrediction { p_unstable: p })
        })
        .collect::<Result<_>>()?;
    let report = score(
        classifier.name(),
        &classifier.display_name(),
        windows,
        &preds,
    )?;
    Ok((report, preds))
}

fn condition_key(w: &LabeledWindow) -> String {
    w.direction
        .map_or_else(|| "n/a".to_string(), |d| d.to_string())
}

/// Scores precomputed predictions.
pub fn score(
    model: &str,
    display_name: &str,
    windows: &[LabeledWindow],
    preds: &[WindowPrediction],
) -> Result<EvalReport> {
    if windows.len() != preds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} windows",
            preds.len(),
            windows.len()
        )));
    }
    let mut totals = ConditionStats::default();
    let mut breakdown: BTreeMap<String, ConditionStats> = BTreeMap::new();
    // (set, channel) -> (condition, drop, [(start, end, first unstable)])
    type Unit = (String, usize, Vec<(usize, usize, Option<usize>)>);
    let mut units: BTreeMap<(&str, usize), Unit> = BTreeMap::new();
    for (w, p) in windows.iter().zip(preds) {
        let stable = p.stable();
        let mut c = Confusion::default();
        for (&ps, &ls) in stable.iter().zip(&w.labels) {
            c.add(ps, ls);
        }
        let s = ConditionStats {
            confusion: c,
            n_windows: 1,
            window_success_sum: success_rate(&stable, &w.labels)?,
            ..ConditionStats::default()
        };
        totals.merge(&s);
        breakdown.entry(condition_key(w)).or_default().merge(&s);
        if let Some(drop) = w.set_drop_step {
            units
                .entry((w.set_id.as_str(), w.channel_id))
                .or_insert_with(|| (condition_key(w), drop, Vec::new()))
                .2
                .push((
                    w.start,
                    w.start + w.len(),
                    first_unstable(&stable).map(|f| w.start + f),
                ));
        }
    }
    for (cond, drop, mut spans) in units.into_values() {
        spans.sort_unstable();
        if !spans.iter().any(|&(a, b, _)| (a..b).contains(&drop)) {
            continue;
        }
        let first = spans.iter().filter_map(|s| s.2).min();
        let unit = AheadUnit {
            first_unstable: first,
            drop_step: drop,
        };
        let add = ConditionStats {
            n_failure_units: 1,
            n_ahead: usize::from(unit.is_ahead()),
            ..ConditionStats::default()
        };
        totals.merge(&add);
        breakdown.entry(cond).or_default().merge(&add);
    }
    EvalReport::from_stats(model, display_name, totals, breakdown)
}

/// Windows the listed channels of `sets` with the classifier's featurizer
/// and evaluates them.
pub fn evaluate_sets<S: AsRef<GraspSet> + Sync>(
    classifier: &dyn Classifier,
    sets: &[S],
    channels: &[usize],
    cfg: &WindowConfig,
) -> Result<(EvalReport, Vec<LabeledWindow>, Vec<WindowPrediction>)> {
    let windows = build_windows(sets, channels, classifier.featurizer(), cfg)?;
    let (report, preds) = evaluate(classifier, &windows)?;
    Ok((report, windows, preds))
}

/// Plot dump: `set,channel,step,force,label,prediction,p_unstable`, with
/// labels and predictions as 1 = unstable.
pub fn prediction_dump_csv(windows: &[LabeledWindow], preds: &[WindowPrediction]) -> String {
    let mut out = String::from("set,channel,step,force,label,prediction,p_unstable\n");
    for (w, p) in windows.iter().zip(preds) {
        for (t, ((&x, &l), &pu)) in w.raw.iter().zip(&w.labels).zip(&p.p_unstable).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6}",
                w.set_id,
                w.channel_id,
                w.start + t,
                x,
                u8::from(!l),
                u8::from(!predicted_stable(pu)),
                pu
            );
        }
    }
    out
}

/// One row per report, then the per-condition breakdown of each.
pub fn report_table(reports: &[EvalReport]) -> String {
    let header = [
        "Model",
        "Success rate",
        "Ahead-drop rate",
        "Windows",
        "Steps",
        "Failure units",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.display_name.clone(),
                fmt_rate(Some(r.success_rate)),
                fmt_rate(r.ahead_drop_rate),
                r.n_windows.to_string(),
                r.n_steps.to_string(),
                r.n_failure_units.to_string(),
            ]
        })
        .collect();
    let mut out = aligned_table(&header, &rows);
    for r in reports {
        let rows: Vec<Vec<String>> = r
            .breakdown
            .iter()
            .map(|(cond, st)| {
                vec![
                    cond.clone(),
                    fmt_rate(st.success_rate()),
                    fmt_rate(st.ahead_drop_rate()),
                    st.n_windows.to_string(),
                    st.confusion.total().to_string(),
                    st.n_failure_units.to_string(),
                ]
            })
            .collect();
        let _ = write!(out, "\n{} by condition\n", r.display_name);
        let mut h = header;
        h[0] = "Condition";
        out.push_str(&aligned_table(&h, &rows));
    }
    out
}

pub(crate) fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

/// Left-aligned first column, right-aligned rest.
pub(crate) fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = width[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn success_rate_examples() {
        let labels: Vec<bool> = (0..160).map(|t| t < 100).collect();
        assert_eq!(success_rate(&labels, &labels).unwrap(), 1.0);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(success_rate(&flipped, &labels).unwrap(), 0.0);
        let mut p = labels.clone();
        for t in (0..160).step_by(6).take(24) {
            p[t] = !p[t];
        }
        let mismatches = p.iter().zip(&labels).filter(|(a, b)| a != b).count();
        assert_eq!(mismatches, 24);
        assert_eq!(success_rate(&p, &labels).unwrap(), 0.85);
        assert!(success_rate(&p[..10], &labels).is_err());
        assert!(success_rate(&[], &[]).is_err());
    }

    #[test]
    fn ahead_examples() {
        let u = |f: Option<usize>| AheadUnit {
            first_unstable: f,
            drop_step: 100,
        };
        assert!(u(Some(95)).is_ahead());
        assert!(u(Some(99)).is_ahead());
        assert!(!u(Some(100)).is_ahead());
        assert!(!u(None).is_ahead());
        let units: Vec<_> = (0..20)
            .map(|i| u(Some(if i < 17 { 90 } else { 120 })))
            .collect();
        assert_eq!(ahead_drop_rate(&units).unwrap(), 0.85);
        let e = ahead_drop_rate(&[]).unwrap_err();
        assert!(e.to_string().contains("undefined metric"));
    }

    #[test]
    fn aligned_table_pads() {
        let t = aligned_table(
            &["model", "x"],
            &[
                vec!["a".into(), "1.5".into()],
                vec!["long name".into(), "2".into()],
            ],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "model        x");
        assert_eq!(lines[1], "--------------");
        assert_eq!(lines[2], "a          1.5");
        assert_eq!(lines[3], "long name    2");
    }

    proptest! {
        #[test]
        fn success_rate_permutation_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (p, l): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (ps, ls): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
            prop_assert_eq!(success_rate(&p, &l).unwrap(), success_rate(&ps, &ls).unwrap());
        }

        #[test]
        fn ahead_rate_monotone(firsts in prop::collection::vec(prop::option::of(0usize..200), 1..30), which in any::<prop::sample::Index>(), earlier in 1usize..50) {
            let units: Vec<AheadUnit> = firsts.iter().map(|&f| AheadUnit { first_unstable: f, drop_step: 100 }).collect();
            let base = ahead_drop_rate(&units).unwrap();
            let mut moved = units.clone();
            let i = which.index(moved.len());
            moved[i].first_unstable = Some(moved[i].first_unstable.unwrap_or(200).saturating_sub(earlier));
            prop_assert!(ahead_drop_rate(&moved).unwrap() >= base);
        }
    }
}
