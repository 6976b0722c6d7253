//! The four LSTM framework variants: featurization, network assembly,
//! training and checkpointing.

pub mod checkpoint;
mod features;
mod network;
mod train;

pub use features::{FeatureKind, Featurizer, ModelInput, NormStats, Variant};
pub use network::{
    InitMode, LossMode, LstmNetwork, NetworkPass, SequenceObjective, STABLE, UNSTABLE,
};
pub use train::{class_labels, train, window_success, EpochRecord, TrainConfig, TrainHistory};

pub(crate) use network::head_logits;

use crate::datasets::LabeledWindow;
use crate::error::{Error, Result};
use crate::neural::{FcHead, LstmParams};
use crate::registry::{Classifier, ModelSpec};
use crate::stream::{LstmStream, StreamPredictor};
use checkpoint::{ByteReader, ByteWriter};

/// Decision rule on the "unstable" probability; exactly 0.5 counts as
/// unstable.
#[inline]
pub fn predicted_stable(p_unstable: f64) -> bool {
    p_unstable < 0.5
}

/// Per-step output of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub p_unstable: Vec<f64>,
    /// `true` = stable.
    pub stable: Vec<bool>,
}

impl Prediction {
    pub fn from_proba(p_unstable: Vec<f64>) -> Self {
        let stable = p_unstable.iter().map(|&p| predicted_stable(p)).collect();
        Self { p_unstable, stable }
    }
}

pub fn predict(classifier: &dyn Classifier, input: &ModelInput) -> Result<Prediction> {
    Ok(Prediction::from_proba(classifier.predict_proba(input)?))
}

/// Gradient check on one random instance: a `steps`-sample force-like
/// trace featurized for `variant`, random labels, a freshly initialized
/// network of `hidden` units. Returns the max relative error.
pub fn grad_check_instance(
    variant: Variant,
    hidden: usize,
    steps: usize,
    seed: u64,
    eps: f64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};

    if hidden == 0 || steps == 0 {
        return Err(Error::InvalidArgument(
            "grad check needs hidden > 0 and steps > 0".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..steps)
        .map(|_| rng.random_range(0.0..5000.0f64).round())
        .collect();
    let mut stats = NormStats::default();
    stats.observe(0, &samples)?;
    let input = Featurizer::new(variant, stats).featurize(&samples, 0)?;
    let labels: Vec<usize> = (0..steps).map(|_| rng.random_range(0..2)).collect();
    let network = LstmNetwork::build(variant, hidden, InitMode::SeededUniform, 0.5, rng.random());
    let mut obj = SequenceObjective {
        network,
        input: &input,
        labels: &labels,
        mode: LossMode::PerStep,
    };
    Ok(crate::neural::grad_check(&mut obj, eps))
}

/// Builds the network for `variant` from `config`.
pub fn build_model(variant: Variant, config: &TrainConfig, seed: u64) -> LstmNetwork {
    LstmNetwork::build(
        variant,
        config.lstm_units,
        config.init_mode,
        config.init_scale,
        seed,
    )
}

/// An LSTM variant behind the [`Classifier`] interface.
#[derive(Debug, Clone)]
pub struct LstmClassifier {
    pub network: LstmNetwork,
    pub featurizer: Featurizer,
    pub config: TrainConfig,
}

impl LstmClassifier {
    pub fn new(variant: Variant, spec: &ModelSpec) -> Result<Self> {
        spec.train.validate()?;
        let featurizer = Featurizer::new(variant, spec.stats.clone());
        Ok(Self {
            network: build_model(variant, &spec.train, spec.train.seed),
            featurizer,
            config: spec.train.clone(),
        })
    }

    pub(crate) fn decode(featurizer: Featurizer, r: &mut ByteReader<'_>) -> Result<Self> {
        let variant = featurizer.variant;
        let loss_mode = match r.u8()? {
            0 => LossMode::PerStep,
            1 => LossMode::LastStep,
            other => return Err(Error::Corrupt(format!("unknown loss mode {other}"))),
        };
        let n = r.u32()? as usize;
        let mut lstms = Vec::with_capacity(n);
        for _ in 0..n {
            let input_dim = r.u32()? as usize;
            let hidden_dim = r.u32()? as usize;
            let mut p = LstmParams::zeros(input_dim, hidden_dim);
            r.f64s_into(&mut p.w)?;
            r.f64s_into(&mut p.b)?;
            lstms.push(p);
        }
        let in_dim = r.u32()? as usize;
        let mut head = FcHead::zeros(in_dim);
        r.f64s_into(&mut head.w)?;
        r.f64s_into(&mut head.b)?;
        let network = LstmNetwork {
            variant,
            lstms,
            head,
        };
        network.check().map_err(|e| Error::Corrupt(e.to_string()))?;
        let config = TrainConfig {
            loss_mode,
            lstm_units: network.lstms.first().map_or(0, |l| l.hidden_dim),
            ..TrainConfig::default()
        };
        Ok(Self {
            network,
            featurizer,
            config,
        })
    }
}

impl Classifier for LstmClassifier {
    fn name(&self) -> &'static str {
        self.featurizer.variant.name()
    }

    fn display_name(&self) -> String {
        self.featurizer.variant.display_name().to_string()
    }

    fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    fn fit(
        &mut self,
        train_set: &[LabeledWindow],
        validation: &[LabeledWindow],
    ) -> Result<TrainHistory> {
        train(&mut self.network, train_set, validation, &self.config)
    }

    fn predict_proba(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.network.predict_proba(input)
    }

    fn encode_body(&self, w: &mut ByteWriter) {
        w.u8(match self.config.loss_mode {
            LossMode::PerStep => 0,
            LossMode::LastStep => 1,
        });
        w.u32(self.network.lstms.len() as u32);
        for l in &self.network.lstms {
            w.u32(l.input_dim as u32);
            w.u32(l.hidden_dim as u32);
            w.f64s(&l.w);
            w.f64s(&l.b);
        }
        w.u32(self.network.head.in_dim as u32);
        w.f64s(&self.network.head.w);
        w.f64s(&self.network.head.b);
    }

    fn stream(&self, channel: usize) -> Result<Box<dyn StreamPredictor + '_>> {
        Ok(Box::new(LstmStream::new(
            &self.network,
            &self.featurizer,
            channel,
        )?))
    }

    fn as_lstm(&self) -> Option<&LstmClassifier> {
        Some(self)
    }
}
