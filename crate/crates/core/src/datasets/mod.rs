//! Grasp recordings: on-disk format, drop detection and slip labeling,
//! windowing, splitting, and a synthetic generator with exact labels.

mod labeling;
mod split;
mod synth;
pub mod trace_file;
mod windows;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use labeling::{
    detect_drop, label_slip, label_slip_with_lead, set_labels, DropRule, LabelConfig, SetLabels,
    SLIP_LEAD_STEPS,
};
pub use split::{split, Split, Stratify};
pub use synth::{synth_dataset, synth_grasp, SynthParams, SynthProfile};
pub use trace_file::{
    load_dataset, load_force_dataset, load_trace_file, parse_trace, write_trace, DatasetManifest,
};
pub use windows::{build_windows, fit_norm_stats, window_batches, LabeledWindow, WindowConfig};

use crate::error::{Error, Result};
use crate::signal::{SensorSource, SensorTrace};

/// Force channels per grasp set.
pub const FORCE_CHANNELS: usize = 16;
/// Suction-cup pressure channels per run.
pub const PRESSURE_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Back,
    Right,
    Top,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Back, Direction::Right, Direction::Top];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Back => "back",
            Direction::Right => "right",
            Direction::Top => "top",
        }
    }
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("direction must be back, right or top, got '{s}'"))
            })
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "success" => Ok(Outcome::Success),
            "failure" => Ok(Outcome::Failure),
            _ => Err(Error::InvalidArgument(format!(
                "outcome must be success or failure, got '{s}'"
            ))),
        }
    }
}

/// One recorded grasp: equally long channels plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspSet {
    pub id: String,
    pub source: SensorSource,
    pub freq_hz: f64,
    pub outcome: Outcome,
    /// Required for force recordings.
    pub direction: Option<Direction>,
    pub object: String,
    pub weight: String,
    pub force_level: String,
    /// Channel samples, all of the same length.
    pub channels: Vec<Vec<f64>>,
    /// Ground-truth first unstable step, when known (synthetic data).
    pub slip_onset: Option<usize>,
    /// Ground-truth drop step, when known.
    pub drop_step: Option<usize>,
    /// Step at which lifting starts; drop detection scans from here.
    pub lift_step: Option<usize>,
    /// Pressure zero positions, one per channel.
    pub initial: Option<Vec<f64>>,
}

impl GraspSet {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn expected_channels(source: SensorSource) -> usize {
        match source {
            SensorSource::Force => FORCE_CHANNELS,
            SensorSource::Pressure => PRESSURE_CHANNELS,
        }
    }

    /// Condition key used by per-condition breakdowns.
    pub fn condition(&self) -> String {
        self.direction
            .map_or_else(|| "n/a".to_string(), |d| d.to_string())
    }

    /// One channel as a validated-shape trace with the set's metadata.
    pub fn trace(&self, channel: usize) -> Result<SensorTrace> {
        let samples = self.channels.get(channel).ok_or_else(|| {
            Error::InvalidArgument(format!("set {} has no channel {channel}", self.id))
        })?;
        let mut t = SensorTrace::new(samples.clone(), self.freq_hz, channel)
            .with_meta("source", self.source.as_str())
            .with_meta("set", self.id.clone())
            .with_meta("outcome", self.outcome.as_str())
            .with_meta("object", self.object.clone())
            .with_meta("weight", self.weight.clone())
            .with_meta("force_level", self.force_level.clone());
        if let Some(d) = self.direction {
            t = t.with_meta("direction", d.as_str());
        }
        Ok(t)
    }

    /// Sum of all channels, used for set-level drop detection.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for ch in &self.channels {
            for (o, v) in out.iter_mut().zip(ch) {
                *o += v;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::expected_channels(self.source);
        if self.channels.len() != expected {
            return Err(Error::InvalidTrace(format!(
                "expected {expected} channels, found {}",
                self.channels.len()
            )));
        }
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidTrace("channels differ in length".into()));
        }
        if self.source == SensorSource::Force && self.direction.is_none() {
            return Err(Error::InvalidTrace(
                "force recordings need a direction".into(),
            ));
        }
        if let Some(init) = &self.initial {
            if init.len() != self.channels.len() {
                return Err(Error::InvalidTrace(format!(
                    "{} initial values for {} channels",
                    init.len(),
                    self.channels.len()
                )));
            }
        }
        for (k, name) in [
            (self.slip_onset, "slip_onset"),
            (self.drop_step, "drop_step"),
            (self.lift_step, "lift_step"),
        ] {
            if let Some(v) = k {
                if v >= n {
                    return Err(Error::InvalidTrace(format!("{name} {v} beyond {n} steps")));
                }
            }
        }
        for c in 0..self.channels.len() {
            self.trace(c)?.validate()?;
        }
        Ok(())
    }
}

/// A continuous four-channel suction-cup pressure log.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureRun {
    pub id: String,
    pub freq_hz: f64,
    pub channels: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub outcome: Outcome,
    pub slip_onset: Option<usize>,
    pub drop_step: Option<usize>,
}

impl PressureRun {
    pub fn into_grasp_set(self) -> GraspSet {
        GraspSet {
            id: self.id,
            source: SensorSource::Pressure,
            freq_hz: self.freq_hz,
            outcome: self.outcome,
            direction: None,
            object: "n/a".into(),
            weight: "n/a".into(),
            force_level: "n/a".into(),
            channels: self.channels,
            slip_onset: self.slip_onset,
            drop_step: self.drop_step,
            lift_step: None,
            initial: Some(self.initial),
        }
    }

    /// Strided copy, for the reduced-rate experiments.
    pub fn downsample(&self, factor: usize) -> Result<PressureRun> {
        if factor < 1 {
            return Err(Error::InvalidArgument(
                "downsample factor must be >= 1".into(),
            ));
        }
        Ok(PressureRun {
            id: self.id.clone(),
            freq_hz: self.freq_hz / factor as f64,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().step_by(factor).copied().collect())
                .collect(),
            initial: self.initial.clone(),
            outcome: self.outcome,
            slip_onset: self.slip_onset.map(|s| s.div_ceil(factor)),
            drop_step: self.drop_step.map(|s| s.div_ceil(factor)),
        })
    }
}
