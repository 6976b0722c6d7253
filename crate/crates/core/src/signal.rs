//! Signal front end: differencing, min/max normalization, causal sliding
//! short-time Fourier magnitudes and strided downsampling.
//!
//! Everything here is a pure function of its inputs.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per STFT window.
pub const STFT_WINDOW: usize = 20;
/// Magnitude bands kept per window (bins 1..=10; DC dropped).
pub const STFT_BANDS: usize = 10;

/// Upper bound of the force sensors, in mN.
pub const FORCE_RANGE_MAX: f64 = 10_000.0;
/// Upper bound of the 16-bit pressure sensors, in raw counts.
pub const PRESSURE_RANGE_MAX: f64 = 65_535.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorSource {
    Force,
    Pressure,
}

impl SensorSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorSource::Force => "force",
            SensorSource::Pressure => "pressure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "force" => Some(SensorSource::Force),
            "pressure" => Some(SensorSource::Pressure),
            _ => None,
        }
    }

    pub fn range_max(self) -> f64 {
        match self {
            SensorSource::Force => FORCE_RANGE_MAX,
            SensorSource::Pressure => PRESSURE_RANGE_MAX,
        }
    }
}

/// One channel's time-ordered readings.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub samples: Vec<f64>,
    pub freq_hz: f64,
    pub channel_id: usize,
    pub meta: BTreeMap<String, String>,
}

impl SensorTrace {
    pub fn new(samples: Vec<f64>, freq_hz: f64, channel_id: usize) -> Self {
        Self {
            samples,
            freq_hz,
            channel_id,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> Option<SensorSource> {
        self.meta.get("source").and_then(|s| SensorSource::parse(s))
    }

    /// Checks the trace invariants: non-empty, finite, positive frequency and
    /// values inside the sensor range when the source is known.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "sampling frequency must be positive, got {}",
                self.freq_hz
            )));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidTrace(format!(
                "non-finite sample at step {i}"
            )));
        }
        if let Some(source) = self.source() {
            let max = source.range_max();
            if let Some(i) = self.samples.iter().position(|&x| !(0.0..=max).contains(&x)) {
                return Err(Error::InvalidTrace(format!(
                    "{} sample {} at step {i} outside [0, {max}]",
                    source.as_str(),
                    self.samples[i]
                )));
            }
        }
        Ok(())
    }

    fn map_samples(&self, samples: Vec<f64>) -> SensorTrace {
        SensorTrace {
            samples,
            freq_hz: self.freq_hz,
            channel_id: self.channel_id,
            meta: self.meta.clone(),
        }
    }
}

/// First difference with `d[0] = 0`, so lengths stay aligned.
///
/// The output carries no source tag: differences can be negative.
pub fn frame_difference(trace: &SensorTrace) -> Result<SensorTrace> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(trace.len());
    out.push(0.0);
    out.extend(trace.samples.windows(2).map(|w| w[1] - w[0]));
    let mut diff = trace.map_samples(out);
    diff.meta.remove("source");
    Ok(diff)
}

/// Min/max normalization bounds for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let stats = MinMax { min, max };
        stats.check()?;
        Ok(stats)
    }

    /// Bounds of a sample slice.
    pub fn of(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (min, max) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        Ok(MinMax { min, max })
    }

    pub fn merge(self, other: MinMax) -> MinMax {
        MinMax {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max <= self.min {
            return Err(Error::DegenerateChannel {
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// `(x - min) / (max - min)` clamped to `[0, 1]`.
pub fn normalize(trace: &SensorTrace, stats: MinMax) -> Result<SensorTrace> {
    stats.check()?;
    if trace.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = trace.map_samples(trace.samples.iter().map(|&x| stats.apply(x)).collect());
    out.meta.remove("source");
    Ok(out)
}

/// Keeps every `factor`-th sample starting at index 0. No anti-alias filter.
pub fn downsample(trace: &SensorTrace, factor: usize) -> Result<SensorTrace> {
    if factor < 1 {
        return Err(Error::InvalidArgument(
            "downsample factor must be >= 1".into(),
        ));
    }
    let mut out = trace.map_samples(trace.samples.iter().step_by(factor).copied().collect());
    out.freq_hz = trace.freq_hz / factor as f64;
    Ok(out)
}

/// Precomputed rectangular-window DFT for a fixed window length, evaluating
/// bins `1..=bands`.
#[derive(Debug, Clone)]
pub struct StftPlan {
    window_len: usize,
    bands: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl StftPlan {
    pub fn new(window_len: usize, bands: usize) -> Result<Self> {
        if window_len < 2 || bands == 0 || bands > window_len / 2 {
            return Err(Error::InvalidArgument(format!(
                "{bands} bands do not fit a {window_len}-sample window"
            )));
        }
        let step = 2.0 * PI / window_len as f64;
        let cos = (0..window_len).map(|m| (step * m as f64).cos()).collect();
        let sin = (0..window_len).map(|m| (step * m as f64).sin()).collect();
        Ok(Self {
            window_len,
            bands,
            cos,
            sin,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Writes `|X_k|` for `k = 1..=bands` into `out`.
    ///
    /// Samples are referenced to `window[0]` before the transform. That only
    /// moves energy in the (discarded) DC bin, and makes a constant window
    /// produce exact zeros.
    pub fn magnitudes_into(&self, window: &[f64], out: &mut [f64]) -> Result<()> {
        if window.len() != self.window_len {
            return Err(Error::WindowSizeMismatch {
                expected: self.window_len,
                actual: window.len(),
            });
        }
        debug_assert_eq!(out.len(), self.bands);
        let reference = window[0];
        for (k, slot) in (1..=self.bands).zip(out.iter_mut()) {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &x) in window.iter().enumerate() {
                let m = (k * n) % self.window_len;
                let v = x - reference;
                re += v * self.cos[m];
                im -= v * self.sin[m];
            }
            *slot = re.hypot(im);
        }
        Ok(())
    }

    pub fn magnitudes(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.bands];
        self.magnitudes_into(window, &mut out)?;
        Ok(out)
    }

    /// Center frequency of each kept band: `k * freq_hz / window_len`.
    pub fn band_freqs_hz(&self, freq_hz: f64) -> Vec<f64> {
        (1..=self.bands)
            .map(|k| k as f64 * freq_hz / self.window_len as f64)
            .collect()
    }

    /// Causal sliding magnitudes, one frame per sample (hop 1), left-padding
    /// with `samples[0]`.
    pub fn sliding(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut stream = SlidingStft::new(self.clone());
        let mut out = Vec::with_capacity(samples.len() * self.bands);
        for &x in samples {
            out.extend_from_slice(stream.push(x));
        }
        Ok(out)
    }
}

/// Per-step band magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major, `bands` values per frame.
    pub data: Vec<f64>,
    pub bands: usize,
    pub window_len: usize,
    pub band_freqs_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.len() / self.bands
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.bands)
    }
}

/// `|X_k|`, `k = 1..=band_count`, of one rectangular window.
pub fn stft_window(window: &[f64], band_count: usize) -> Result<Vec<f64>> {
    if window.len() != STFT_WINDOW {
        return Err(Error::WindowSizeMismatch {
            expected: STFT_WINDOW,
            actual: window.len(),
        });
    }
    if let Some(i) = window.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidTrace(format!("non-finite sample at {i}")));
    }
    StftPlan::new(STFT_WINDOW, band_count)?.magnitudes(window)
}

/// Causal sliding STFT. Frame `t` covers samples `t-window_len+1..=t`, padded
/// on the left with `samples[0]`. Frames are emitted every `hop` samples.
pub fn sliding_stft(trace: &SensorTrace, window_len: usize, hop: usize) -> Result<Spectrogram> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if hop < 1 {
        return Err(Error::InvalidArgument("hop must be >= 1".into()));
    }
    let plan = StftPlan::new(window_len, STFT_BANDS.min(window_len / 2))?;
    let bands = plan.bands();
    let all = plan.sliding(&trace.samples)?;
    let data = if hop == 1 {
        all
    } else {
        all.chunks_exact(bands)
            .step_by(hop)
            .flatten()
            .copied()
            .collect()
    };
    Ok(Spectrogram {
        data,
        bands,
        window_len,
        band_freqs_hz: plan.band_freqs_hz(trace.freq_hz),
    })
}

/// Incremental form of [`sliding_stft`]: one `push` per incoming sample.
///
/// Produces bit-identical frames to the offline path.
#[derive(Debug, Clone)]
pub struct SlidingStft {
    plan: StftPlan,
    ring: VecDeque<f64>,
    scratch: Vec<f64>,
    out: Vec<f64>,
}

impl SlidingStft {
    pub fn new(plan: StftPlan) -> Self {
        let n = plan.window_len();
        let bands = plan.bands();
        Self {
            plan,
            ring: VecDeque::with_capacity(n),
            scratch: vec![0.0; n],
            out: vec![0.0; bands],
        }
    }

    pub fn reset(&mut self) {
        self.ring.clear();
    }

    pub fn push(&mut self, x: f64) -> &[f64] {
        let n = self.plan.window_len();
        if self.ring.is_empty() {
            self.ring.extend(std::iter::repeat_n(x, n));
        } else {
            self.ring.pop_front();
            self.ring.push_back(x);
        }
        for (dst, &src) in self.scratch.iter_mut().zip(self.ring.iter()) {
            *dst = src;
        }
        self.plan
            .magnitudes_into(&self.scratch, &mut self.out)
            .expect("ring length equals plan window");
        &self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the DFT sum, without the first-sample reference.
    fn dft_oracle(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re, im)
            })
            .collect()
    }

    fn trace(samples: Vec<f64>) -> SensorTrace {
        SensorTrace::new(samples, 16.7, 0)
    }

    #[test]
    fn difference_of_constant_is_zero() {
        let d = frame_difference(&trace(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(d.samples, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn difference_of_ramp() {
        let d = frame_difference(&trace(vec![0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(d.samples, vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn difference_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..10_000.0)).collect();
        let d = frame_difference(&trace(x.clone())).unwrap();
        let mut expected = vec![0.0; x.len()];
        for k in 1..x.len() {
            expected[k] = x[k] - x[k - 1];
        }
        assert_eq!(d.samples, expected);
        assert_eq!(d.freq_hz, 16.7);
    }

    #[test]
    fn difference_rejects_empty() {
        assert!(matches!(
            frame_difference(&trace(vec![])),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn stft_zero_and_constant_windows() {
        assert_eq!(stft_window(&[0.0; 20], 10).unwrap(), vec![0.0; 10]);
        for c in [1.0, -3.5, 6458.0, 1e-7] {
            assert_eq!(stft_window(&[c; 20], 10).unwrap(), vec![0.0; 10]);
        }
    }

    #[test]
    fn stft_bin_three_cosine() {
        let x: Vec<f64> = (0..20)
            .map(|n| (2.0 * PI * 3.0 * n as f64 / 20.0).cos())
            .collect();
        let mags = stft_window(&x, 10).unwrap();
        for (k, m) in mags.iter().enumerate() {
            let band = k + 1;
            let expected = if band == 3 { 10.0 } else { 0.0 };
            assert!((m - expected).abs() < 1e-9, "band {band}: {m}");
        }
    }

    #[test]
    fn stft_rejects_wrong_length() {
        assert!(matches!(
            stft_window(&[0.0; 19], 10),
            Err(Error::WindowSizeMismatch {
                expected: 20,
                actual: 19
            })
        ));
    }

    #[test]
    fn stft_matches_dft_sum_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-100.0..100.0)).collect();
            let mags = stft_window(&x, 10).unwrap();
            let full = dft_oracle(&x);
            for k in 1..=10 {
                let (re, im) = full[k];
                assert!((mags[k - 1] - re.hypot(im)).abs() < 1e-9);
            }
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spectral: f64 = full.iter().map(|(r, i)| r * r + i * i).sum::<f64>() / 20.0;
            assert!((energy - spectral).abs() <= 1e-9 * energy);
        }
    }

    #[test]
    fn band_freqs_are_bin_centers() {
        let s = sliding_stft(&trace(vec![1.0; 30]), 20, 1).unwrap();
        assert_eq!(s.band_freqs_hz.len(), 10);
        for (k, f) in s.band_freqs_hz.iter().enumerate() {
            assert!((f - (k + 1) as f64 * 16.7 / 20.0).abs() < 1e-12);
        }
        assert!(s.band_freqs_hz.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sliding_constant_is_zero_and_length_preserving() {
        for n in [1, 7, 20, 64] {
            let s = sliding_stft(&trace(vec![42.0; n]), 20, 1).unwrap();
            assert_eq!(s.n_frames(), n);
            assert!(s.data.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn sliding_bin_three_cosine_settles_at_nineteen() {
        let x: Vec<f64> = (0..100)
            .map(|n| (2.0 * PI * 3.0 * n as f64 / 20.0).cos())
            .collect();
        let s = sliding_stft(&trace(x), 20, 1).unwrap();
        for t in 19..100 {
            let f = s.frame(t);
            assert!((f[2] - 10.0).abs() < 1e-9, "frame {t}");
            for (k, m) in f.iter().enumerate() {
                if k != 2 {
                    assert!(m.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sliding_matches_explicit_padded_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..60);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s = sliding_stft(&trace(x.clone()), 20, 1).unwrap();
            for t in 0..n {
                let window: Vec<f64> = (0..20)
                    .map(|j| {
                        let idx = t as isize - 19 + j as isize;
                        if idx < 0 {
                            x[0]
                        } else {
                            x[idx as usize]
                        }
                    })
                    .collect();
                assert_eq!(s.frame(t), stft_window(&window, 10).unwrap().as_slice());
            }
        }
    }

    #[test]
    fn sliding_hop_subsamples_frames() {
        let x: Vec<f64> = (0..50).map(|n| (n as f64 * 0.7).sin()).collect();
        let full = sliding_stft(&trace(x.clone()), 20, 1).unwrap();
        let hopped = sliding_stft(&trace(x), 20, 4).unwrap();
        assert_eq!(hopped.n_frames(), 13);
        assert_eq!(hopped.frame(3), full.frame(12));
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let stats = MinMax::new(100.0, 300.0).unwrap();
        let n = normalize(&trace(vec![100.0, 300.0, 200.0, 50.0, 900.0]), stats).unwrap();
        assert_eq!(n.samples, vec![0.0, 1.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let stats = MinMax { min: 5.0, max: 5.0 };
        assert!(matches!(
            normalize(&trace(vec![5.0]), stats),
            Err(Error::DegenerateChannel { .. })
        ));
    }

    #[test]
    fn downsample_examples() {
        let t = SensorTrace::new((1..=8).map(f64::from).collect(), 71.0, 2);
        assert_eq!(downsample(&t, 1).unwrap(), t);
        let d = downsample(&t, 4).unwrap();
        assert_eq!(d.samples, vec![1.0, 5.0]);
        assert_eq!(d.freq_hz, 17.75);
        assert!(downsample(&t, 0).is_err());
        for n in 1..30 {
            let t = trace(vec![0.0; n]);
            for f in 1..6 {
                assert_eq!(downsample(&t, f).unwrap().len(), n.div_ceil(f));
            }
        }
    }

    #[test]
    fn validate_ranges() {
        let good = trace(vec![0.0, 10_000.0]).with_meta("source", "force");
        assert!(good.validate().is_ok());
        let bad = trace(vec![10_001.0]).with_meta("source", "force");
        assert!(bad.validate().is_err());
        let p = trace(vec![65_535.0]).with_meta("source", "pressure");
        assert!(p.validate().is_ok());
        assert!(trace(vec![f64::NAN]).validate().is_err());
        assert!(trace(vec![]).validate().is_err());
    }

    proptest! {
        #[test]
        fn stft_is_positively_homogeneous(
            x in proptest::collection::vec(-1e3f64..1e3, 20),
            a in 0.0f64..50.0,
        ) {
            let base = stft_window(&x, 10).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
            let s = stft_window(&scaled, 10).unwrap();
            for (m, b) in s.iter().zip(&base) {
                prop_assert!((m - a * b).abs() <= 1e-9 * (1.0 + a * b));
            }
        }

        #[test]
        fn sliding_is_shift_consistent(x in proptest::collection::vec(0.0f64..1.0, 21..80)) {
            let full = sliding_stft(&trace(x.clone()), 20, 1).unwrap();
            let shifted = sliding_stft(&trace(x[1..].to_vec()), 20, 1).unwrap();
            for t in 20..x.len() {
                prop_assert_eq!(full.frame(t), shifted.frame(t - 1));
            }
        }

        #[test]
        fn difference_cumsum_reconstructs(x in proptest::collection::vec(0u32..10_000, 1..200)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let d = frame_difference(&trace(x.clone())).unwrap();
            let mut acc = x[0];
            let mut rebuilt = vec![acc];
            for v in &d.samples[1..] {
                acc += v;
                rebuilt.push(acc);
            }
            prop_assert_eq!(rebuilt, x);
        }
    }
}
