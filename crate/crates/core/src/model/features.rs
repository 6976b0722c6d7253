use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::SeqMatrix;
use crate::signal::{MinMax, StftPlan, STFT_BANDS, STFT_WINDOW};

/// The four LSTM framework options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Normalized force into one LSTM.
    #[serde(rename = "lstm")]
    Lstm,
    /// STFT band magnitudes into one LSTM.
    #[serde(rename = "stft-lstm")]
    StftLstm,
    /// Bands and force concatenated into one LSTM.
    #[serde(rename = "data-stft-lstm")]
    DataStftLstm,
    /// Force and bands into two separate LSTMs, hidden states concatenated.
    #[serde(rename = "lstm-stft-lstm")]
    LstmPlusStftLstm,
}

/// Feature columns produced per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Force,
    Bands,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Force => 1,
            FeatureKind::Bands => STFT_BANDS,
        }
    }
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lstm,
        Variant::StftLstm,
        Variant::DataStftLstm,
        Variant::LstmPlusStftLstm,
    ];

    pub fn tag(self) -> char {
        match self {
            Variant::Lstm => 'A',
            Variant::StftLstm => 'B',
            Variant::DataStftLstm => 'C',
            Variant::LstmPlusStftLstm => 'D',
        }
    }

    pub fn from_tag(tag: char) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == tag.to_ascii_uppercase())
    }

    /// Registry name.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::StftLstm => "stft-lstm",
            Variant::DataStftLstm => "data-stft-lstm",
            Variant::LstmPlusStftLstm => "lstm-stft-lstm",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Lstm => "LSTM",
            Variant::StftLstm => "STFT & LSTM",
            Variant::DataStftLstm => "(Data + STFT) & LSTM",
            Variant::LstmPlusStftLstm => "LSTM + STFT & LSTM",
        }
    }

    /// One entry per LSTM, listing the feature blocks it reads in column order.
    pub fn streams(self) -> &'static [&'static [FeatureKind]] {
        use FeatureKind::*;
        match self {
            Variant::Lstm => &[&[Force]],
            Variant::StftLstm => &[&[Bands]],
            Variant::DataStftLstm => &[&[Bands, Force]],
            Variant::LstmPlusStftLstm => &[&[Force], &[Bands]],
        }
    }

    pub fn stream_dims(self) -> Vec<usize> {
        self.streams()
            .iter()
            .map(|kinds| kinds.iter().map(|k| k.dim()).sum())
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower.len() == 1 {
            if let Some(v) = Variant::from_tag(lower.chars().next().unwrap_or(' ')) {
                return Ok(v);
            }
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Per-channel min/max bounds, fitted on training data only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: BTreeMap<usize, MinMax>,
}

impl NormStats {
    pub fn get(&self, channel: usize) -> Result<MinMax> {
        self.channels
            .get(&channel)
            .copied()
            .ok_or(Error::MissingStats(channel))
    }

    pub fn insert(&mut self, channel: usize, stats: MinMax) {
        self.channels.insert(channel, stats);
    }

    /// Widens the stored range of `channel` to include `samples`.
    pub fn observe(&mut self, channel: usize, samples: &[f64]) -> Result<()> {
        let mm = MinMax::of(samples)?;
        let merged = match self.channels.get(&channel) {
            Some(prev) => prev.merge(mm),
            None => mm,
        };
        self.channels.insert(channel, merged);
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        self.channels.values().try_for_each(MinMax::check)
    }
}

/// Per-variant model input: one sequence per LSTM stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub streams: Vec<SeqMatrix>,
}

impl ModelInput {
    pub fn steps(&self) -> usize {
        self.streams.first().map_or(0, SeqMatrix::rows)
    }

    pub fn prefix(&self, rows: usize) -> ModelInput {
        ModelInput {
            streams: self.streams.iter().map(|s| s.prefix(rows)).collect(),
        }
    }

    /// All streams side by side.
    pub fn flattened(&self) -> Result<SeqMatrix> {
        let parts: Vec<&SeqMatrix> = self.streams.iter().collect();
        SeqMatrix::hconcat(&parts)
    }
}

/// Turns raw samples of one channel into a variant's model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub variant: Variant,
    pub stats: NormStats,
}

impl Featurizer {
    pub fn new(variant: Variant, stats: NormStats) -> Self {
        Self { variant, stats }
    }

    pub fn plan() -> StftPlan {
        StftPlan::new(STFT_WINDOW, STFT_BANDS).expect("static STFT shape is valid")
    }

    pub fn normalized(&self, samples: &[f64], channel: usize) -> Result<Vec<f64>> {
        let stats = self.stats.get(channel)?;
        stats.check()?;
        Ok(samples.iter().map(|&x| stats.apply(x)).collect())
    }

    /// Features for every step of `samples`. The STFT restarts (pads from the
    /// first sample) at the start of the slice.
    pub fn featurize(&self, samples: &[f64], channel: usize) -> Result<ModelInput> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let force = self.normalized(samples, channel)?;
        let n = force.len();
        let needs_bands = self
            .variant
            .streams()
            .iter()
            .any(|s| s.contains(&FeatureKind::Bands));
        let bands = if needs_bands {
            Some(Self::plan().sliding(&force)?)
        } else {
            None
        };
        let streams = self
            .variant
            .streams()
            .iter()
            .map(|kinds| {
                let dim: usize = kinds.iter().map(|k| k.dim()).sum();
                let mut data = Vec::with_capacity(n * dim);
                for t in 0..n {
                    for kind in kinds.iter() {
                        match kind {
                            FeatureKind::Force => data.push(force[t]),
                            FeatureKind::Bands => {
                                let b = bands.as_ref().expect("bands computed");
                                data.extend_from_slice(&b[t * STFT_BANDS..(t + 1) * STFT_BANDS]);
                            }
                        }
                    }
                }
                SeqMatrix::new(n, dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelInput { streams })
    }
}
