use serde::{Deserialize, Serialize};

use super::{GraspSet, Outcome};
use crate::error::{Error, Result};
use crate::signal::{SensorSource, SensorTrace};

/// Steps before the drop that are labeled unstable.
pub const SLIP_LEAD_STEPS: usize = 20;

/// A drop is the first step from which the signal stays below `threshold`
/// for `sustain` consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropRule {
    pub threshold: f64,
    pub sustain: usize,
    /// Scan start. Without it the scan starts at the first sample at or above
    /// the threshold, so pre-contact zeros never count as a drop.
    pub lift_onset: Option<usize>,
}

impl Default for DropRule {
    fn default() -> Self {
        Self {
            threshold: 50.0,
            sustain: 3,
            lift_onset: None,
        }
    }
}

pub fn detect_drop(trace: &SensorTrace, rule: &DropRule) -> Option<usize> {
    let x = &trace.samples;
    let sustain = rule.sustain.max(1);
    let start = match rule.lift_onset {
        Some(s) => s,
        None => x.iter().position(|&v| v >= rule.threshold)?,
    };
    (start..x.len().saturating_sub(sustain - 1))
        .find(|&t| x[t..t + sustain].iter().all(|&v| v < rule.threshold))
}

/// Stability flags (`true` = stable) for `len` steps: unstable from
/// `drop - lead` (clamped at 0) onward; all stable without a drop.
pub fn label_slip_with_lead(
    len: usize,
    drop_step: Option<usize>,
    lead: usize,
) -> Result<Vec<bool>> {
    match drop_step {
        None => Ok(vec![true; len]),
        Some(d) if d >= len => Err(Error::InvalidArgument(format!(
            "drop step {d} outside {len} steps"
        ))),
        Some(d) => {
            let from = d.saturating_sub(lead);
            Ok((0..len).map(|t| t < from).collect())
        }
    }
}

/// Per-step labels for `trace` under the 20-step lead rule.
pub fn label_slip(trace: &SensorTrace, drop_step: Option<usize>) -> Result<Vec<bool>> {
    label_slip_with_lead(trace.len(), drop_step, SLIP_LEAD_STEPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Force drop threshold in mN and sustain length.
    pub drop_rule: DropRule,
    pub lead: usize,
    /// Pressure drop threshold above the summed zero positions, in counts.
    pub pressure_margin: f64,
    /// Prefer a recorded `slip_onset` over the lead rule.
    pub use_slip_onset: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            drop_rule: DropRule::default(),
            lead: SLIP_LEAD_STEPS,
            pressure_margin: 200.0,
            use_slip_onset: true,
        }
    }
}

/// Labels shared by every channel of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLabels {
    pub stable: Vec<bool>,
    pub drop_step: Option<usize>,
}

/// Set-level drop step and labels.
///
/// Successful grasps are stable throughout. For failures the drop comes from
/// the recording when present, else from [`detect_drop`] on the summed
/// channels; labels start at the recorded slip onset when present, else at
/// `drop - lead`.
pub fn set_labels(set: &GraspSet, cfg: &LabelConfig) -> Result<SetLabels> {
    let n = set.len();
    if set.outcome == Outcome::Success {
        return Ok(SetLabels {
            stable: vec![true; n],
            drop_step: None,
        });
    }
    let drop_step = match set.drop_step {
        Some(d) => Some(d),
        None => {
            let threshold = match set.source {
                SensorSource::Force => cfg.drop_rule.threshold,
                SensorSource::Pressure => {
                    let init = set.initial.as_ref().ok_or_else(|| {
                        Error::InvalidTrace(format!(
                            "pressure set {} has no initial values",
                            set.id
                        ))
                    })?;
                    init.iter().sum::<f64>() + cfg.pressure_margin
                }
            };
            let rule = DropRule {
                threshold,
                sustain: cfg.drop_rule.sustain,
                lift_onset: set.lift_step.or(cfg.drop_rule.lift_onset),
            };
            let total = SensorTrace::new(set.total(), set.freq_hz, 0);
            detect_drop(&total, &rule)
        }
    };
    let stable = match (cfg.use_slip_onset, set.slip_onset) {
        (true, Some(onset)) => (0..n).map(|t| t < onset).collect(),
        _ => label_slip_with_lead(n, drop_step, cfg.lead)?,
    };
    Ok(SetLabels { stable, drop_step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(x: Vec<f64>) -> SensorTrace {
        SensorTrace::new(x, 16.7, 0)
    }

    /// Independent scan: walks the signal keeping a run counter.
    fn scan_oracle(x: &[f64], threshold: f64, sustain: usize) -> Option<usize> {
        let mut contact = false;
        let mut run = 0;
        for (t, &v) in x.iter().enumerate() {
            if !contact {
                contact = v >= threshold;
                continue;
            }
            if v < threshold {
                run += 1;
                if run == sustain {
                    return Some(t + 1 - sustain);
                }
            } else {
                run = 0;
            }
        }
        None
    }

    #[test]
    fn constant_grip_never_drops() {
        assert_eq!(
            detect_drop(&trace(vec![500.0; 200]), &DropRule::default()),
            None
        );
    }

    #[test]
    fn step_to_zero_drops_at_the_step() {
        let mut x = vec![2000.0; 100];
        x.extend(vec![0.0; 60]);
        assert_eq!(detect_drop(&trace(x), &DropRule::default()), Some(100));
    }

    #[test]
    fn single_dip_is_not_a_drop() {
        let mut x = vec![2000.0; 50];
        x[20] = 0.0;
        assert_eq!(detect_drop(&trace(x.clone()), &DropRule::default()), None);
        assert_eq!(scan_oracle(&x, 50.0, 3), None);
    }

    #[test]
    fn pre_contact_zeros_are_ignored() {
        let mut x = vec![0.0; 10];
        x.extend(vec![800.0; 40]);
        x.extend(vec![0.0; 10]);
        assert_eq!(detect_drop(&trace(x), &DropRule::default()), Some(50));
    }

    #[test]
    fn detector_matches_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let x: Vec<f64> = (0..80)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { 1000.0 })
                .collect();
            assert_eq!(
                detect_drop(&trace(x.clone()), &DropRule::default()),
                scan_oracle(&x, 50.0, 3)
            );
        }
    }

    #[test]
    fn lead_rule_examples() {
        assert_eq!(
            label_slip(&trace(vec![0.0; 160]), None).unwrap(),
            vec![true; 160]
        );
        let l = label_slip(&trace(vec![0.0; 160]), Some(100)).unwrap();
        assert!(l[..80].iter().all(|&s| s));
        assert!(l[80..].iter().all(|&s| !s));
        let l = label_slip(&trace(vec![0.0; 160]), Some(10)).unwrap();
        assert!(l.iter().all(|&s| !s));
        assert!(label_slip(&trace(vec![0.0; 160]), Some(160)).is_err());
    }

    #[test]
    fn detected_drop_yields_at_least_lead_unstable_steps() {
        for d in 20..150 {
            let mut x = vec![1500.0; d];
            x.extend(vec![0.0; 160 - d]);
            let t = trace(x);
            let drop = detect_drop(&t, &DropRule::default());
            assert_eq!(drop, Some(d));
            let l = label_slip(&t, drop).unwrap();
            assert!(l.iter().filter(|&&s| !s).count() >= SLIP_LEAD_STEPS);
        }
    }
}
