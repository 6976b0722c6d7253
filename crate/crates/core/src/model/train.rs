use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{InitMode, LossMode, LstmNetwork};
use crate::datasets::LabeledWindow;
use crate::error::{Error, Result};
use crate::neural::{adam_step, clip_global_norm, AdamConfig, AdamState, ParamSet};

/// Training knobs. Defaults follow the reference setup: 160-step windows,
/// 128 LSTM units, Adam at 6e-4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub window_len: usize,
    pub lstm_units: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub loss_mode: LossMode,
    pub init_mode: InitMode,
    pub init_scale: f64,
    /// Epochs without validation improvement before stopping; `None` runs
    /// every epoch.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_len: 160,
            lstm_units: 128,
            lr: 0.0006,
            epochs: 50,
            seed: 0,
            clip_norm: Some(5.0),
            loss_mode: LossMode::PerStep,
            init_mode: InitMode::SeededUniform,
            init_scale: 0.08,
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len <= crate::signal::STFT_WINDOW {
            return Err(Error::InvalidArgument(format!(
                "window_len {} must exceed the STFT window",
                self.window_len
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.lstm_units == 0 {
            return Err(Error::InvalidArgument("lstm_units must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Step-level agreement on the training windows, measured during the
    /// epoch (before each window's update).
    pub train_success: f64,
    pub val_success: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (differs from the last when early
    /// stopping restored a better snapshot).
    pub best_epoch: Option<usize>,
}

/// Class indices for a window's stability flags.
pub fn class_labels(stable: &[bool]) -> Vec<usize> {
    stable
        .iter()
        .map(|&s| {
            if s {
                super::network::STABLE
            } else {
                super::network::UNSTABLE
            }
        })
        .collect()
}

/// Step-level agreement of `network` on `windows` at threshold 0.5.
pub fn window_success(network: &LstmNetwork, windows: &[LabeledWindow]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for w in windows {
        let p = network.predict_proba(&w.input)?;
        for (pi, &stable) in p.iter().zip(&w.labels) {
            hits += usize::from(super::predicted_stable(*pi) == stable);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    })
}

/// One Adam step per window, windows visited in seeded-shuffled order.
pub fn train(
    network: &mut LstmNetwork,
    train_set: &[LabeledWindow],
    validation: &[LabeledWindow],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    network.check()?;
    let has_stable = train_set.iter().any(|w| w.labels.iter().any(|&s| s));
    let has_unstable = train_set.iter().any(|w| w.labels.iter().any(|&s| !s));
    if !(has_stable && has_unstable) {
        return Err(Error::InvalidArgument(
            "training data must contain both stable and unstable steps".into(),
        ));
    }
    let labels: Vec<Vec<usize>> = train_set.iter().map(|w| class_labels(&w.labels)).collect();
    let mut adam = AdamState::new(config.adam(), network);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_0de7);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, LstmNetwork)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut steps = 0usize;
        for (k, &i) in order.iter().enumerate() {
            let window = &train_set[i];
            let (loss, mut grads, pass) =
                network.backward(&window.input, &labels[i], config.loss_mode)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, step {k}"
                )));
            }
            loss_sum += loss;
            for (p, &stable) in pass.probs.iter().zip(&window.labels) {
                hits += usize::from(super::predicted_stable(p[1]) == stable);
                steps += 1;
            }
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            let g = grads.slices();
            adam_step(&mut network.slices_mut(), &g, &mut adam)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}, step {k}: {e}")))?;
        }
        let val_success = if validation.is_empty() {
            None
        } else {
            Some(window_success(network, validation)?)
        };
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / train_set.len().max(1) as f64,
            train_success: hits as f64 / steps.max(1) as f64,
            val_success,
        });
        if let Some(v) = val_success {
            let improved = best.as_ref().is_none_or(|(b, _, _)| v > *b);
            if improved {
                best = Some((v, epoch, network.clone()));
            } else if let (Some(p), Some((_, e, _))) = (config.patience, best.as_ref()) {
                if epoch - e >= p {
                    break;
                }
            }
        }
    }
    match best {
        Some((_, epoch, snapshot)) => {
            *network = snapshot;
            history.best_epoch = Some(epoch);
        }
        None => history.best_epoch = history.epochs.last().map(|r| r.epoch),
    }
    Ok(history)
}
