//! Sample-by-sample inference, replay with timing, and the grip-current
//! policy driven by predicted slips.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{head_logits, LstmNetwork, UNSTABLE};
use crate::model::{predicted_stable, FeatureKind, Featurizer};
use crate::neural::softmax2;
use crate::registry::Classifier;
use crate::signal::{MinMax, SensorTrace, SlidingStft};

/// Causal predictor for one channel.
pub trait StreamPredictor {
    /// Consumes the next raw sample and returns P(unstable) for it.
    fn push(&mut self, sample: f64) -> Result<f64>;

    /// Forgets all history.
    fn reset(&mut self);
}

struct Cell {
    h: Vec<f64>,
    c: Vec<f64>,
    h_next: Vec<f64>,
    c_next: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    gates: Vec<f64>,
}

/// Incremental LSTM inference: O(window) STFT update plus one cell step per
/// stream. Matches the offline forward pass bit for bit.
pub struct LstmStream<'a> {
    network: &'a LstmNetwork,
    kinds: &'static [&'static [FeatureKind]],
    stats: MinMax,
    stft: SlidingStft,
    cells: Vec<Cell>,
}

impl<'a> LstmStream<'a> {
    pub fn new(network: &'a LstmNetwork, featurizer: &Featurizer, channel: usize) -> Result<Self> {
        network.check()?;
        let stats = featurizer.stats.get(channel)?;
        stats.check()?;
        let variant = featurizer.variant;
        if variant != network.variant {
            return Err(Error::DimensionMismatch(format!(
                "featurizer for {variant}, network for {}",
                network.variant
            )));
        }
        let cells = network
            .lstms
            .iter()
            .map(|l| Cell {
                h: vec![0.0; l.hidden_dim],
                c: vec![0.0; l.hidden_dim],
                h_next: vec![0.0; l.hidden_dim],
                c_next: vec![0.0; l.hidden_dim],
                x: Vec::with_capacity(l.input_dim),
                z: vec![0.0; l.row_len()],
                gates: vec![0.0; 4 * l.hidden_dim],
            })
            .collect();
        Ok(Self {
            network,
            kinds: variant.streams(),
            stats,
            stft: SlidingStft::new(Featurizer::plan()),
            cells,
        })
    }
}

impl StreamPredictor for LstmStream<'_> {
    fn push(&mut self, sample: f64) -> Result<f64> {
        if !sample.is_finite() {
            return Err(Error::InvalidTrace(format!("non-finite sample {sample}")));
        }
        let x = self.stats.apply(sample);
        let bands = self.stft.push(x);
        for ((cell, params), kinds) in self
            .cells
            .iter_mut()
            .zip(&self.network.lstms)
            .zip(self.kinds)
        {
            cell.x.clear();
            for kind in kinds.iter() {
                match kind {
                    FeatureKind::Force => cell.x.push(x),
                    FeatureKind::Bands => cell.x.extend_from_slice(bands),
                }
            }
            params.step_into(
                &cell.x,
                &cell.h,
                &cell.c,
                &mut cell.z,
                &mut cell.gates,
                &mut cell.c_next,
                &mut cell.h_next,
            );
            std::mem::swap(&mut cell.h, &mut cell.h_next);
            std::mem::swap(&mut cell.c, &mut cell.c_next);
        }
        let hs: Vec<&[f64]> = self.cells.iter().map(|c| c.h.as_slice()).collect();
        Ok(softmax2(head_logits(&self.network.head, &hs))[UNSTABLE])
    }

    fn reset(&mut self) {
        self.stft.reset();
        for cell in &mut self.cells {
            cell.h.fill(0.0);
            cell.c.fill(0.0);
        }
    }
}

/// Generic fallback: keeps the history, re-featurizes it and asks the
/// classifier for the newest step.
pub struct BufferedStream<'a, C: Classifier + ?Sized> {
    classifier: &'a C,
    channel: usize,
    buf: Vec<f64>,
}

impl<'a, C: Classifier + ?Sized> BufferedStream<'a, C> {
    pub fn new(classifier: &'a C, channel: usize) -> Self {
        Self {
            classifier,
            channel,
            buf: Vec::new(),
        }
    }
}

impl<C: Classifier + ?Sized> StreamPredictor for BufferedStream<'_, C> {
    fn push(&mut self, sample: f64) -> Result<f64> {
        self.buf.push(sample);
        let input = self
            .classifier
            .featurizer()
            .featurize(&self.buf, self.channel)?;
        self.classifier.predict_step(&input, self.buf.len() - 1)
    }

    fn reset(&mut self) {
        self.buf.clear();
    }
}

/// One stream plus an optional periodic state reset, so that streaming can
/// mirror window-by-window offline evaluation.
pub struct StreamSession<'a> {
    predictor: Box<dyn StreamPredictor + 'a>,
    reset_every: Option<usize>,
    step: usize,
}

impl<'a> StreamSession<'a> {
    pub fn new(predictor: Box<dyn StreamPredictor + 'a>, reset_every: Option<usize>) -> Self {
        Self {
            predictor,
            reset_every: reset_every.filter(|&n| n > 0),
            step: 0,
        }
    }

    pub fn push(&mut self, sample: f64) -> Result<f64> {
        if let Some(n) = self.reset_every {
            if self.step > 0 && self.step.is_multiple_of(n) {
                self.predictor.reset();
            }
        }
        self.step += 1;
        self.predictor.push(sample)
    }
}

/// Frame timing: one sample per sensor per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameClock {
    pub freq_hz: f64,
    /// Inference budget per sensor and frame.
    pub budget_us: f64,
    pub sensors: usize,
}

impl FrameClock {
    pub const MAX_SENSORS: usize = 16;

    pub fn new(freq_hz: f64, sensors: usize) -> Result<Self> {
        if !(freq_hz > 0.0 && freq_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {freq_hz}"
            )));
        }
        if sensors == 0 || sensors > Self::MAX_SENSORS {
            return Err(Error::InvalidArgument(format!(
                "sensors per frame must be 1..={}, got {sensors}",
                Self::MAX_SENSORS
            )));
        }
        Ok(Self {
            freq_hz,
            budget_us: 4000.0,
            sensors,
        })
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.freq_hz
    }

    pub fn total_budget_ms(&self) -> f64 {
        self.sensors as f64 * self.budget_us / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepLabel {
    Stable,
    Unstable,
}

impl StepLabel {
    pub fn from_proba(p_unstable: f64) -> Self {
        if predicted_stable(p_unstable) {
            StepLabel::Stable
        } else {
            StepLabel::Unstable
        }
    }
}

/// One per-step prediction of the replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub step: usize,
    pub channel: usize,
    pub probability: f64,
    pub label: StepLabel,
    pub latency_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Reset stream state every this many samples.
    pub reset_every: Option<usize>,
}

/// Streams every trace through its own session (in parallel) and returns
/// the merged log ordered by step, then channel. Steps slower than the
/// per-sensor budget carry a warning.
pub fn replay(
    traces: &[SensorTrace],
    classifier: &dyn Classifier,
    clock: &FrameClock,
    opts: ReplayOptions,
) -> Result<Vec<StreamEvent>> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(t) = traces.iter().find(|t| t.freq_hz != clock.freq_hz) {
        return Err(Error::InvalidArgument(format!(
            "channel {} sampled at {} Hz, clock runs at {} Hz",
            t.channel_id, t.freq_hz, clock.freq_hz
        )));
    }
    let per_channel: Vec<Vec<StreamEvent>> = traces
        .par_iter()
        .map(|trace| {
            let mut session =
                StreamSession::new(classifier.stream(trace.channel_id)?, opts.reset_every);
            trace
                .samples
                .iter()
                .enumerate()
                .map(|(step, &x)| {
                    let t0 = Instant::now();
                    let p = session.push(x)?;
                    let latency_us = t0.elapsed().as_secs_f64() * 1e6;
                    Ok(StreamEvent {
                        step,
                        channel: trace.channel_id,
                        probability: p,
                        label: StepLabel::from_proba(p),
                        latency_us,
                        warning: (latency_us > clock.budget_us).then(|| {
                            format!(
                                "over budget: {latency_us:.0} us > {:.0} us",
                                clock.budget_us
                            )
                        }),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut events: Vec<StreamEvent> = per_channel.into_iter().flatten().collect();
    events.sort_by_key(|e| (e.step, e.channel));
    Ok(events)
}

/// Line-delimited JSON, one event per line.
pub fn events_to_jsonl(events: &[StreamEvent]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn events_from_jsonl(text: &str) -> Result<Vec<StreamEvent>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripConfig {
    pub pj_init_ma: f64,
    pub mj_init_ma: f64,
    pub pj_step_ma: f64,
    pub mj_step_ma: f64,
    pub pj_max_ma: f64,
    pub mj_max_ma: f64,
}

impl Default for GripConfig {
    fn default() -> Self {
        Self {
            pj_init_ma: 50.0,
            mj_init_ma: 25.0,
            pj_step_ma: 5.0,
            mj_step_ma: 10.0,
            pj_max_ma: 200.0,
            mj_max_ma: 400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripRecord {
    pub step: usize,
    pub pj_ma: f64,
    pub mj_ma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripState {
    pub pj_ma: f64,
    pub mj_ma: f64,
    pub slip_events: usize,
    /// Currents after each logged step.
    pub history: Vec<GripRecord>,
}

impl GripState {
    pub fn new(cfg: &GripConfig) -> Self {
        Self {
            pj_ma: cfg.pj_init_ma,
            mj_ma: cfg.mj_init_ma,
            slip_events: 0,
            history: Vec::new(),
        }
    }

    fn slip(&mut self, cfg: &GripConfig) {
        self.slip_events += 1;
        self.pj_ma = (self.pj_ma + cfg.pj_step_ma).min(cfg.pj_max_ma);
        self.mj_ma = (self.mj_ma + cfg.mj_step_ma).min(cfg.mj_max_ma);
    }

    /// `step,pj_mA,mj_mA` rows.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,pj_mA,mj_mA\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{}\n", r.step, r.pj_ma, r.mj_ma));
        }
        out
    }
}

/// Folds the log into currents. Each stable→unstable transition of a
/// channel is one slip event; every channel starts out stable.
pub fn grip_controller(events: &[StreamEvent], cfg: &GripConfig) -> GripState {
    let mut state = GripState::new(cfg);
    let mut last: BTreeMap<usize, StepLabel> = BTreeMap::new();
    let mut i = 0;
    while i < events.len() {
        let step = events[i].step;
        while i < events.len() && events[i].step == step {
            let e = &events[i];
            let prev = last.insert(e.channel, e.label).unwrap_or(StepLabel::Stable);
            if prev == StepLabel::Stable && e.label == StepLabel::Unstable {
                state.slip(cfg);
            }
            i += 1;
        }
        state.history.push(GripRecord {
            step,
            pj_ma: state.pj_ma,
            mj_ma: state.mj_ma,
        });
    }
    state
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub events: usize,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
    pub budget_us: f64,
    pub sensors: usize,
    /// Largest summed latency over the sensors of one step.
    pub max_frame_ms: f64,
    /// `sensors × p95`.
    pub frame_p95_ms: f64,
    pub frame_budget_ms: f64,
    pub overruns: usize,
    pub pass: bool,
}

/// Per-sensor latency percentiles and the budget verdict: pass when
/// p95 < budget and `sensors × p95` < the frame budget.
pub fn latency_report(events: &[StreamEvent], clock: &FrameClock) -> Result<LatencyReport> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("no events".into()));
    }
    let mut lat: Vec<f64> = events.iter().map(|e| e.latency_us).collect();
    lat.sort_by(f64::total_cmp);
    let mut frames: BTreeMap<usize, f64> = BTreeMap::new();
    for e in events {
        *frames.entry(e.step).or_default() += e.latency_us;
    }
    let p95 = percentile(&lat, 95.0);
    let frame_p95_ms = clock.sensors as f64 * p95 / 1000.0;
    let frame_budget_ms = clock.total_budget_ms();
    Ok(LatencyReport {
        events: lat.len(),
        p50_us: percentile(&lat, 50.0),
        p95_us: p95,
        max_us: lat[lat.len() - 1],
        budget_us: clock.budget_us,
        sensors: clock.sensors,
        max_frame_ms: frames.values().copied().fold(0.0, f64::max) / 1000.0,
        frame_p95_ms,
        frame_budget_ms,
        overruns: lat.iter().filter(|&&l| l > clock.budget_us).count(),
        pass: p95 < clock.budget_us && frame_p95_ms < frame_budget_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(step: usize, channel: usize, unstable: bool, latency_us: f64) -> StreamEvent {
        let p = if unstable { 0.9 } else { 0.1 };
        StreamEvent {
            step,
            channel,
            probability: p,
            label: StepLabel::from_proba(p),
            latency_us,
            warning: None,
        }
    }

    #[test]
    fn controller_arithmetic() {
        let cfg = GripConfig::default();
        let s = grip_controller(&[], &cfg);
        assert_eq!((s.pj_ma, s.mj_ma), (50.0, 25.0));
        let s = grip_controller(
            &[
                ev(0, 0, false, 1.0),
                ev(1, 0, true, 1.0),
                ev(2, 0, true, 1.0),
            ],
            &cfg,
        );
        assert_eq!((s.pj_ma, s.mj_ma, s.slip_events), (55.0, 35.0, 1));
        let events: Vec<_> = (0..30).map(|t| ev(t, 0, t % 2 == 1, 1.0)).collect();
        let s = grip_controller(&events, &cfg);
        assert_eq!((s.pj_ma, s.mj_ma, s.slip_events), (125.0, 175.0, 15));
        assert_eq!(s.history.len(), 30);
    }

    #[test]
    fn controller_clamps_and_tracks_channels() {
        let cfg = GripConfig::default();
        let events: Vec<_> = (0..200).map(|t| ev(t, 0, t % 2 == 1, 1.0)).collect();
        let s = grip_controller(&events, &cfg);
        assert_eq!((s.pj_ma, s.mj_ma), (200.0, 400.0));
        // two channels rising on the same step are two events
        let s = grip_controller(&[ev(0, 0, true, 1.0), ev(0, 1, true, 1.0)], &cfg);
        assert_eq!(s.slip_events, 2);
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.trajectory_csv(), "step,pj_mA,mj_mA\n0,60,45\n");
    }

    #[test]
    fn percentiles_nearest_rank() {
        let events: Vec<_> = (1..=100).map(|i| ev(i, 0, false, i as f64)).collect();
        let clock = FrameClock::new(16.7, 16).unwrap();
        let r = latency_report(&events, &clock).unwrap();
        assert_eq!((r.p50_us, r.p95_us, r.max_us), (50.0, 95.0, 100.0));
        assert!(r.pass);
        assert!(r.frame_p95_ms < 64.0);
        let e = latency_report(&[], &clock).unwrap_err();
        assert!(e.to_string().contains("no events"));
        let slow: Vec<_> = (0..10).map(|i| ev(i, 0, false, 5000.0)).collect();
        assert!(!latency_report(&slow, &clock).unwrap().pass);
    }

    #[test]
    fn jsonl_round_trip() {
        let events = vec![ev(0, 3, true, 12.5), ev(1, 3, false, 7.25)];
        let text = events_to_jsonl(&events).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"label\":\"unstable\""));
        assert_eq!(events_from_jsonl(&text).unwrap(), events);
    }

    #[test]
    fn clock_bounds() {
        assert!(FrameClock::new(16.7, 17).is_err());
        let c = FrameClock::new(16.0, 16).unwrap();
        assert_eq!(c.total_budget_ms(), 64.0);
        assert_eq!(c.period_ms(), 62.5);
    }
}
