//! Named classifiers behind one trait, selected at runtime.
//!
//! The four LSTM variants and the three classical baselines are registered
//! under their names; checkpoints record the name so loading goes through
//! the same table.

use crate::baselines::{BaselineClassifier, BaselineConfig, BaselineKind};
use crate::datasets::LabeledWindow;
use crate::error::{Error, Result};
use crate::model::checkpoint::{ByteReader, ByteWriter};
use crate::model::{
    Featurizer, LstmClassifier, ModelInput, NormStats, TrainConfig, TrainHistory, Variant,
};
use crate::stream::{BufferedStream, StreamPredictor};

/// A per-step stable/unstable classifier over featurized windows.
pub trait Classifier: Send + Sync {
    /// Registry name, also written into checkpoints.
    fn name(&self) -> &'static str;

    /// Row label for report tables.
    fn display_name(&self) -> String;

    fn featurizer(&self) -> &Featurizer;

    fn fit(
        &mut self,
        train: &[LabeledWindow],
        validation: &[LabeledWindow],
    ) -> Result<TrainHistory>;

    /// Probability of "unstable" at every step of `input`.
    fn predict_proba(&self, input: &ModelInput) -> Result<Vec<f64>>;

    /// P(unstable) at step `t` only.
    fn predict_step(&self, input: &ModelInput, t: usize) -> Result<f64> {
        let p = self.predict_proba(input)?;
        p.get(t)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("step {t} beyond {} steps", p.len())))
    }

    fn encode_body(&self, w: &mut ByteWriter);

    /// Causal per-sample predictor for one channel.
    fn stream(&self, channel: usize) -> Result<Box<dyn StreamPredictor + '_>> {
        Ok(Box::new(BufferedStream::new(self, channel)))
    }

    fn as_lstm(&self) -> Option<&LstmClassifier> {
        None
    }
}

impl std::fmt::Debug for dyn Classifier + '_ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("name", &self.name())
            .finish_non_exhaustive()
    }
}

/// Everything a registry factory needs to build an untrained classifier.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub stats: NormStats,
    /// Feature pipeline for the baselines; LSTM entries use their own.
    pub feature_variant: Variant,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

impl ModelSpec {
    pub fn new(stats: NormStats) -> Self {
        Self {
            stats,
            feature_variant: Variant::DataStftLstm,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

pub type BuildFn = fn(&ModelSpec) -> Result<Box<dyn Classifier>>;
pub type DecodeFn = fn(Featurizer, &mut ByteReader<'_>) -> Result<Box<dyn Classifier>>;

#[derive(Clone)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub summary: &'static str,
    pub build: BuildFn,
    pub decode: DecodeFn,
}

#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

macro_rules! lstm_entry {
    ($variant:expr, $aliases:expr, $summary:expr) => {
        RegistryEntry {
            name: $variant.name(),
            aliases: $aliases,
            summary: $summary,
            build: |spec| Ok(Box::new(LstmClassifier::new($variant, spec)?)),
            decode: |f, r| Ok(Box::new(LstmClassifier::decode(f, r)?)),
        }
    };
}

macro_rules! baseline_entry {
    ($kind:expr, $aliases:expr, $summary:expr) => {
        RegistryEntry {
            name: $kind.name(),
            aliases: $aliases,
            summary: $summary,
            build: |spec| Ok(Box::new(BaselineClassifier::new($kind, spec)?)),
            decode: |f, r| Ok(Box::new(BaselineClassifier::decode($kind, f, r)?)),
        }
    };
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// All built-in classifiers.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(lstm_entry!(Variant::Lstm, &["a"], "force into one LSTM"));
        r.register(lstm_entry!(
            Variant::StftLstm,
            &["b"],
            "STFT bands into one LSTM"
        ));
        r.register(lstm_entry!(
            Variant::DataStftLstm,
            &["c"],
            "bands + force concatenated into one LSTM"
        ));
        r.register(lstm_entry!(
            Variant::LstmPlusStftLstm,
            &["d"],
            "force LSTM and band LSTM, hidden states concatenated"
        ));
        r.register(baseline_entry!(
            BaselineKind::NaiveBayes,
            &["naive-bayes"],
            "Gaussian naive Bayes"
        ));
        r.register(baseline_entry!(
            BaselineKind::Knn,
            &["knn3"],
            "3-nearest neighbours"
        ));
        r.register(baseline_entry!(
            BaselineKind::Svm,
            &["linear-svm"],
            "linear SVM, hinge + L2"
        ));
        r
    }

    /// Adds or replaces an entry with the same name.
    pub fn register(&mut self, entry: RegistryEntry) {
        self.entries.retain(|e| e.name != entry.name);
        self.entries.push(entry);
    }

    pub fn resolve(&self, name: &str) -> Result<&RegistryEntry> {
        let lower = name.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|e| e.name == lower || e.aliases.contains(&lower.as_str()))
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn build(&self, name: &str, spec: &ModelSpec) -> Result<Box<dyn Classifier>> {
        (self.resolve(name)?.build)(spec)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::MinMax;

    fn spec() -> ModelSpec {
        let mut stats = NormStats::default();
        stats.insert(0, MinMax::new(0.0, 1.0).unwrap());
        let mut s = ModelSpec::new(stats);
        s.train.lstm_units = 4;
        s
    }

    #[test]
    fn resolves_names_and_aliases() {
        let r = Registry::with_defaults();
        assert_eq!(
            r.names(),
            vec![
                "lstm",
                "stft-lstm",
                "data-stft-lstm",
                "lstm-stft-lstm",
                "nb",
                "knn",
                "svm"
            ]
        );
        assert_eq!(r.resolve("C").unwrap().name, "data-stft-lstm");
        assert_eq!(r.resolve("naive-bayes").unwrap().name, "nb");
        assert!(matches!(r.resolve("cnn"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn builds_every_entry() {
        let r = Registry::with_defaults();
        for name in r.names() {
            let c = r.build(name, &spec()).unwrap();
            assert_eq!(c.name(), name);
        }
        let c = r.build("b", &spec()).unwrap();
        assert_eq!(c.featurizer().variant, Variant::StftLstm);
        assert!(c.as_lstm().is_some());
    }
}
