use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labeling::{set_labels, LabelConfig};
use super::{Direction, GraspSet};
use crate::error::{Error, Result};
use crate::model::{Featurizer, ModelInput, NormStats};

/// One training/evaluation unit: a window of a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub input: ModelInput,
    /// Raw samples of the window, for plot dumps.
    pub raw: Vec<f64>,
    /// `true` = stable, one per step.
    pub labels: Vec<bool>,
    /// Drop step relative to the window start, when it falls inside.
    pub drop_step: Option<usize>,
    /// Drop step of the whole set, when the set failed.
    pub set_drop_step: Option<usize>,
    pub channel_id: usize,
    pub set_id: String,
    pub direction: Option<Direction>,
    pub object: String,
    /// First step of the window within its set.
    pub start: usize,
}

impl LabeledWindow {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_len: usize,
    pub labels: LabelConfig,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 160,
            labels: LabelConfig::default(),
        }
    }
}

/// Non-overlapping windows of one channel; the trailing remainder is
/// dropped. Each window is featurized on its own.
pub fn window_batches(
    set: &GraspSet,
    channel: usize,
    featurizer: &Featurizer,
    cfg: &WindowConfig,
) -> Result<Vec<LabeledWindow>> {
    let w = cfg.window_len;
    if w == 0 {
        return Err(Error::InvalidArgument(
            "window length must be positive".into(),
        ));
    }
    let samples = set.channels.get(channel).ok_or_else(|| {
        Error::InvalidArgument(format!("set {} has no channel {channel}", set.id))
    })?;
    if samples.len() < w {
        return Err(Error::InvalidTrace(format!(
            "set {} has {} steps, shorter than the {w}-step window",
            set.id,
            samples.len()
        )));
    }
    let labels = set_labels(set, &cfg.labels)?;
    (0..samples.len() / w)
        .map(|k| {
            let start = k * w;
            let end = start + w;
            Ok(LabeledWindow {
                input: featurizer.featurize(&samples[start..end], channel)?,
                raw: samples[start..end].to_vec(),
                labels: labels.stable[start..end].to_vec(),
                drop_step: labels
                    .drop_step
                    .filter(|d| (start..end).contains(d))
                    .map(|d| d - start),
                set_drop_step: labels.drop_step,
                channel_id: channel,
                set_id: set.id.clone(),
                direction: set.direction,
                object: set.object.clone(),
                start,
            })
        })
        .collect()
}

/// Windows for every (set, channel) pair, in set-then-channel order.
pub fn build_windows<S: AsRef<GraspSet> + Sync>(
    sets: &[S],
    channels: &[usize],
    featurizer: &Featurizer,
    cfg: &WindowConfig,
) -> Result<Vec<LabeledWindow>> {
    let pairs: Vec<(&GraspSet, usize)> = sets
        .iter()
        .flat_map(|s| channels.iter().map(move |&c| (s.as_ref(), c)))
        .collect();
    let nested: Vec<Vec<LabeledWindow>> = pairs
        .par_iter()
        .map(|&(s, c)| window_batches(s, c, featurizer, cfg))
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Min/max of each listed channel over the given sets.
pub fn fit_norm_stats<S: AsRef<GraspSet>>(sets: &[S], channels: &[usize]) -> Result<NormStats> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut stats = NormStats::default();
    for s in sets {
        let s = s.as_ref();
        for &c in channels {
            let ch = s.channels.get(c).ok_or_else(|| {
                Error::InvalidArgument(format!("set {} has no channel {c}", s.id))
            })?;
            stats.observe(c, ch)?;
        }
    }
    stats.check()?;
    Ok(stats)
}

impl AsRef<GraspSet> for GraspSet {
    fn as_ref(&self) -> &GraspSet {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_grasp, Outcome, SynthParams, SynthProfile};
    use crate::model::Variant;

    fn failure_set() -> GraspSet {
        let mut p = SynthParams::profile(SynthProfile::Force);
        p.slip_onset = Some(230);
        p.drop_step = Some(262);
        synth_grasp(4, &p).unwrap()
    }

    fn featurizer(set: &GraspSet, variant: Variant) -> Featurizer {
        Featurizer::new(
            variant,
            fit_norm_stats(std::slice::from_ref(set), &[0, 1, 2]).unwrap(),
        )
    }

    #[test]
    fn four_hundred_steps_give_two_windows() {
        let s = failure_set();
        let f = featurizer(&s, Variant::DataStftLstm);
        let w = window_batches(&s, 1, &f, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].start, w[1].start), (0, 160));
        assert_eq!(w[1].drop_step, Some(102));
        assert_eq!(w[0].drop_step, None);
        assert!(w[0].labels.iter().all(|&s| s));
        assert_eq!(w[1].labels.iter().filter(|&&s| !s).count(), 160 - 70);
    }

    #[test]
    fn long_stream_window_count() {
        let mut s = failure_set();
        s.outcome = Outcome::Success;
        s.slip_onset = None;
        s.drop_step = None;
        s.channels = vec![vec![100.0; 50_560]; 16];
        let mut stats = NormStats::default();
        stats.insert(0, crate::signal::MinMax::new(0.0, 200.0).unwrap());
        let f = Featurizer::new(Variant::Lstm, stats);
        assert_eq!(
            window_batches(&s, 0, &f, &WindowConfig::default())
                .unwrap()
                .len(),
            316
        );
    }

    #[test]
    fn short_trace_is_an_error() {
        let s = failure_set();
        let f = featurizer(&s, Variant::Lstm);
        let cfg = WindowConfig {
            window_len: 401,
            ..WindowConfig::default()
        };
        assert!(window_batches(&s, 0, &f, &cfg).is_err());
    }

    #[test]
    fn window_features_equal_slice_featurize() {
        let s = failure_set();
        for v in Variant::ALL {
            let f = featurizer(&s, v);
            let w = window_batches(&s, 2, &f, &WindowConfig::default()).unwrap();
            for win in &w {
                let slice = &s.channels[2][win.start..win.start + 160];
                assert_eq!(win.input, f.featurize(slice, 2).unwrap());
                assert_eq!(win.raw, slice);
            }
        }
    }

    #[test]
    fn build_orders_by_set_then_channel() {
        let s = failure_set();
        let mut t = s.clone();
        t.id = "other".into();
        let f = featurizer(&s, Variant::Lstm);
        let w = build_windows(&[s, t], &[0, 2], &f, &WindowConfig::default()).unwrap();
        let keys: Vec<(String, usize, usize)> = w
            .iter()
            .map(|w| (w.set_id.clone(), w.channel_id, w.start))
            .collect();
        assert_eq!(keys[0].1, 0);
        assert_eq!(keys[2].1, 2);
        assert_eq!(keys[4].0, "other");
        assert_eq!(w.len(), 8);
    }
}
