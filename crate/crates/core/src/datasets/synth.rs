use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Direction, GraspSet, Outcome, FORCE_CHANNELS, PRESSURE_CHANNELS};
use crate::error::{Error, Result};
use crate::signal::SensorSource;

/// Zero positions of the four suction-cup pressure sensors.
pub const PRESSURE_INITIAL: [f64; 4] = [6458.0, 6263.0, 6357.0, 6458.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthProfile {
    /// 16 force channels, 400 steps at 16.7 Hz.
    Force,
    /// 4 pressure channels, 640 steps at 71 Hz.
    Pressure,
}

impl SynthProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthProfile::Force => "force",
            SynthProfile::Pressure => "pressure",
        }
    }

    pub fn source(self) -> SensorSource {
        match self {
            SynthProfile::Force => SensorSource::Force,
            SynthProfile::Pressure => SensorSource::Pressure,
        }
    }
}

impl fmt::Display for SynthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "force" => Ok(SynthProfile::Force),
            "pressure" => Ok(SynthProfile::Pressure),
            _ => Err(Error::InvalidArgument(format!(
                "profile must be force or pressure, got '{s}'"
            ))),
        }
    }
}

/// Shape of one synthetic grasp.
///
/// Every channel follows `base + grasp_force * pattern[c] * envelope`:
/// rest, linear ramp from `contact_step`, plateau with a decaying bump at
/// `lift_step`, then for failures a sinusoidal vibration at `slip_band_hz`
/// from `slip_onset` with a slow decline, a linear decay, and rest from
/// `drop_step` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub profile: SynthProfile,
    pub freq_hz: f64,
    pub steps: usize,
    pub direction: Option<Direction>,
    pub object: String,
    pub weight: String,
    pub force_level: String,
    /// Resting value per channel.
    pub base: Vec<f64>,
    /// Plateau height above rest, before the channel pattern.
    pub grasp_force: f64,
    /// Relative channel gains.
    pub pattern: Vec<f64>,
    pub contact_step: usize,
    pub ramp_steps: usize,
    pub lift_step: usize,
    /// Lift transient height as a fraction of the plateau.
    pub lift_bump: f64,
    pub slip_onset: Option<usize>,
    pub drop_step: Option<usize>,
    pub slip_band_hz: f64,
    /// Vibration amplitude as a fraction of the plateau.
    pub vibration: f64,
    /// Fraction of the plateau lost linearly between onset and drop.
    pub slip_decline: f64,
    pub decay_steps: usize,
    pub noise_sd: f64,
}

impl SynthParams {
    /// A successful grasp with the profile's nominal shape.
    pub fn profile(profile: SynthProfile) -> Self {
        match profile {
            SynthProfile::Force => Self {
                profile,
                freq_hz: 16.7,
                steps: 400,
                direction: Some(Direction::Back),
                object: "obj0".into(),
                weight: "medium".into(),
                force_level: "medium".into(),
                base: vec![0.0; FORCE_CHANNELS],
                grasp_force: 2500.0,
                pattern: direction_pattern(Direction::Back),
                contact_step: 5,
                ramp_steps: 30,
                lift_step: 120,
                lift_bump: 0.1,
                slip_onset: None,
                drop_step: None,
                slip_band_hz: 4.0,
                vibration: 0.12,
                slip_decline: 0.2,
                decay_steps: 4,
                noise_sd: 20.0,
            },
            SynthProfile::Pressure => Self {
                profile,
                freq_hz: 71.0,
                steps: 640,
                direction: None,
                object: "n/a".into(),
                weight: "n/a".into(),
                force_level: "n/a".into(),
                base: PRESSURE_INITIAL.to_vec(),
                grasp_force: 15_000.0,
                pattern: vec![1.0, 0.96, 1.03, 0.98],
                contact_step: 10,
                ramp_steps: 40,
                lift_step: 180,
                lift_bump: 0.03,
                slip_onset: None,
                drop_step: None,
                slip_band_hz: 4.0,
                vibration: 0.06,
                slip_decline: 0.3,
                decay_steps: 8,
                noise_sd: 30.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let channels = match self.profile {
            SynthProfile::Force => FORCE_CHANNELS,
            SynthProfile::Pressure => PRESSURE_CHANNELS,
        };
        if self.base.len() != channels || self.pattern.len() != channels {
            return bad(format!(
                "{} profile needs {channels} base and pattern values",
                self.profile
            ));
        }
        if self.freq_hz.is_nan() || self.freq_hz <= 0.0 || self.steps == 0 || self.ramp_steps == 0 {
            return bad("freq_hz, steps and ramp_steps must be positive".into());
        }
        if self.pattern.iter().any(|&g| g.is_nan() || g <= 0.0)
            || self.grasp_force.is_nan()
            || self.grasp_force <= 0.0
        {
            return bad("grasp force and channel gains must be positive".into());
        }
        if self.contact_step + self.ramp_steps > self.lift_step || self.lift_step >= self.steps {
            return bad(format!(
                "need contact + ramp <= lift < steps, got {} + {} / {} / {}",
                self.contact_step, self.ramp_steps, self.lift_step, self.steps
            ));
        }
        if self.profile == SynthProfile::Force && self.direction.is_none() {
            return bad("force sets need a direction".into());
        }
        match (self.slip_onset, self.drop_step) {
            (None, None) => {}
            (Some(s), Some(d)) => {
                if !(self.lift_step <= s && s < d && d < self.steps) {
                    return bad(format!(
                        "need lift <= slip_onset < drop_step < steps, got {} / {s} / {d} / {}",
                        self.lift_step, self.steps
                    ));
                }
            }
            _ => return bad("slip_onset and drop_step come together".into()),
        }
        if !(3.0..=5.0).contains(&self.slip_band_hz) || self.slip_band_hz >= self.freq_hz / 2.0 {
            return bad(format!(
                "slip band {} Hz must lie in [3, 5] and below Nyquist",
                self.slip_band_hz
            ));
        }
        if !(self.noise_sd >= 0.0 && self.vibration >= 0.0 && self.lift_bump >= 0.0) {
            return bad("noise, vibration and bump must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.slip_decline) {
            return bad("slip_decline must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Noise-free envelope and vibration weight at step `t`.
    fn shape(&self, t: usize) -> (f64, f64) {
        let mut env = if t < self.contact_step {
            0.0
        } else if t < self.contact_step + self.ramp_steps {
            (t - self.contact_step + 1) as f64 / self.ramp_steps as f64
        } else {
            1.0
        };
        if t >= self.lift_step {
            env += self.lift_bump * (-((t - self.lift_step) as f64) / 3.0).exp();
        }
        let (Some(onset), Some(drop)) = (self.slip_onset, self.drop_step) else {
            return (env, 0.0);
        };
        if t < onset {
            return (env, 0.0);
        }
        if t >= drop {
            return (0.0, 0.0);
        }
        let decline =
            |t: usize| 1.0 - self.slip_decline * (t - onset) as f64 / (drop - onset) as f64;
        let decay_start = drop.saturating_sub(self.decay_steps).max(onset);
        if t < decay_start {
            (env * decline(t), decline(t))
        } else {
            let at = self.shape_plateau(decay_start) * decline(decay_start);
            (at * (drop - t) as f64 / (drop - decay_start) as f64, 0.0)
        }
    }

    fn shape_plateau(&self, t: usize) -> f64 {
        let p = SynthParams {
            slip_onset: None,
            drop_step: None,
            ..self.clone()
        };
        p.shape(t).0
    }
}

/// Relative gains of the 4×4 force array for a pull direction.
fn direction_pattern(direction: Direction) -> Vec<f64> {
    (0..FORCE_CHANNELS)
        .map(|c| {
            let (row, col) = ((c / 4) as f64, (c % 4) as f64);
            match direction {
                Direction::Back => 1.0 - 0.15 * row,
                Direction::Right => 0.55 + 0.15 * col,
                Direction::Top => 1.0 - 0.12 * ((row - 1.5).abs() + (col - 1.5).abs()),
            }
        })
        .collect()
}

/// One synthetic set with exact ground truth. The set is a failure iff the
/// params carry a slip; the id is `synth-<seed>`.
pub fn synth_grasp(seed: u64, params: &SynthParams) -> Result<GraspSet> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, params.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let source = params.profile.source();
    let max = source.range_max();
    let omega = 2.0 * PI * params.slip_band_hz / params.freq_hz;
    let onset = params.slip_onset.unwrap_or(0);
    let shapes: Vec<(f64, f64)> = (0..params.steps).map(|t| params.shape(t)).collect();
    let channels = params
        .base
        .iter()
        .zip(&params.pattern)
        .map(|(&base, &gain)| {
            let phase = rng.random_range(0.0..2.0 * PI);
            let height = params.grasp_force * gain;
            shapes
                .iter()
                .enumerate()
                .map(|(t, &(env, vib_w))| {
                    let vib = if vib_w > 0.0 {
                        params.vibration * vib_w * (omega * (t - onset) as f64 + phase).sin()
                    } else {
                        0.0
                    };
                    // unloaded force sensors read exactly zero
                    let live = env > 0.0 || base > 0.0;
                    let n = if params.noise_sd > 0.0 && live {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (base + height * (env + vib) + n).round().clamp(0.0, max)
                })
                .collect()
        })
        .collect();
    let set = GraspSet {
        id: format!("synth-{seed}"),
        source,
        freq_hz: params.freq_hz,
        outcome: if params.slip_onset.is_some() {
            Outcome::Failure
        } else {
            Outcome::Success
        },
        direction: params.direction,
        object: params.object.clone(),
        weight: params.weight.clone(),
        force_level: params.force_level.clone(),
        channels,
        slip_onset: params.slip_onset,
        drop_step: params.drop_step,
        lift_step: Some(params.lift_step),
        initial: (params.profile == SynthProfile::Pressure).then(|| params.base.clone()),
    };
    set.validate()?;
    Ok(set)
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// Params for set `index` of a generated dataset. Odd indices fail; force
/// directions cycle back, right, top.
fn draw_params(rng: &mut ChaCha8Rng, index: usize, profile: SynthProfile) -> SynthParams {
    let mut p = SynthParams::profile(profile);
    let failure = index % 2 == 1;
    match profile {
        SynthProfile::Force => {
            let direction = Direction::ALL[index % 3];
            let level = pick(rng, &["low", "medium", "high"]);
            p.direction = Some(direction);
            p.object = format!("obj{}", rng.random_range(0..10));
            p.weight = pick(rng, &["light", "medium", "heavy"]).to_string();
            p.force_level = level.to_string();
            let nominal = match level {
                "low" => 1500.0,
                "medium" => 2500.0,
                _ => 3500.0,
            };
            p.grasp_force = nominal * rng.random_range(0.9..1.1);
            p.pattern = direction_pattern(direction)
                .into_iter()
                .map(|g| (g * rng.random_range(0.9..1.1)).max(0.31))
                .collect();
            p.contact_step = rng.random_range(2..=10);
            p.ramp_steps = rng.random_range(20..=40);
            p.lift_step = rng.random_range(100..=140);
            p.lift_bump = rng.random_range(0.05..0.15);
            if failure {
                let onset = rng.random_range((p.lift_step + 20).max(170)..=270);
                let duration = rng.random_range(20..=40);
                p.decay_steps = rng.random_range(3..=6);
                p.slip_onset = Some(onset);
                p.drop_step = Some(onset + duration + p.decay_steps);
                p.slip_band_hz = rng.random_range(3.0..=5.0);
                p.vibration = rng.random_range(0.08..0.16);
                p.slip_decline = rng.random_range(0.1..0.3);
            }
        }
        SynthProfile::Pressure => {
            p.grasp_force = rng.random_range(13_500.0..16_500.0);
            p.pattern = (0..PRESSURE_CHANNELS)
                .map(|_| rng.random_range(0.95..1.05))
                .collect();
            p.contact_step = rng.random_range(5..=20);
            p.ramp_steps = rng.random_range(30..=60);
            p.lift_step = rng.random_range(150..=220);
            p.lift_bump = rng.random_range(0.01..0.04);
            if failure {
                let onset = rng.random_range(490..=545);
                let duration = rng.random_range(40..=70);
                p.decay_steps = rng.random_range(5..=10);
                p.slip_onset = Some(onset);
                p.drop_step = Some(onset + duration + p.decay_steps);
                p.slip_band_hz = rng.random_range(3.0..=5.0);
                p.vibration = rng.random_range(0.04..0.08);
                p.slip_decline = rng.random_range(0.2..0.4);
            }
        }
    }
    p
}

/// `n` sets with ids `set-0000`, `set-0001`, …; half of them fail.
pub fn synth_dataset(seed: u64, n: usize, profile: SynthProfile) -> Result<Vec<GraspSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = draw_params(&mut rng, i, profile);
            let mut set = synth_grasp(rng.random(), &p)?;
            set.id = format!("set-{i:04}");
            Ok(set)
        })
        .collect()
}
