//! Classical comparison classifiers: Gaussian naive Bayes, k-nearest
//! neighbours and a linear SVM.
//!
//! Each step is classified from a flattened causal context of the variant's
//! features (the last `context` rows, left-padded with the first row).
//! All ties resolve to "unstable".

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledWindow;
use crate::error::{Error, Result};
use crate::model::checkpoint::{ByteReader, ByteWriter};
use crate::model::{class_labels, Featurizer, ModelInput, TrainHistory, STABLE, UNSTABLE};
use crate::neural::{sigmoid, SeqMatrix};
use crate::registry::{Classifier, ModelSpec};

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    NaiveBayes,
    Knn,
    Svm,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::NaiveBayes => "nb",
            BaselineKind::Knn => "knn",
            BaselineKind::Svm => "svm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Rows of history per sample.
    pub context: usize,
    pub k: usize,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub svm_lr0: f64,
    /// Use class frequencies as naive Bayes priors instead of uniform.
    pub nb_empirical_priors: bool,
    /// Cap on training samples (evenly strided); KNN queries scale with it.
    pub max_train_samples: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            context: 20,
            k: 3,
            svm_lambda: 1e-4,
            svm_epochs: 100,
            svm_lr0: 0.1,
            nb_empirical_priors: false,
            max_train_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
    pub log_priors: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub samples: SeqMatrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    NaiveBayes(GaussianNb),
    Knn(Knn),
    Svm(LinearSvm),
}

/// Class decision plus a score. Scores: log-posterior margin
/// (unstable - stable) for NB, unstable vote fraction for KNN, `w.x + b` for
/// the SVM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineDecision {
    pub class: usize,
    pub score: f64,
}

fn check_fit_input(features: &SeqMatrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples, {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if !(labels.contains(&STABLE) && labels.contains(&UNSTABLE)) {
        return Err(Error::InvalidArgument(
            "both classes must be present to fit".into(),
        ));
    }
    Ok(())
}

/// Fits `kind` on `m x d` features.
pub fn fit(
    kind: BaselineKind,
    features: &SeqMatrix,
    labels: &[usize],
    cfg: &BaselineConfig,
) -> Result<BaselineModel> {
    check_fit_input(features, labels)?;
    Ok(match kind {
        BaselineKind::NaiveBayes => {
            BaselineModel::NaiveBayes(fit_nb(features, labels, cfg.nb_empirical_priors))
        }
        BaselineKind::Knn => {
            if cfg.k == 0 || cfg.k.is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!(
                    "k must be odd, got {}",
                    cfg.k
                )));
            }
            BaselineModel::Knn(Knn {
                k: cfg.k,
                samples: features.clone(),
                labels: labels.to_vec(),
            })
        }
        BaselineKind::Svm => BaselineModel::Svm(fit_svm(features, labels, cfg)),
    })
}

fn fit_nb(x: &SeqMatrix, labels: &[usize], empirical: bool) -> GaussianNb {
    let d = x.cols();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut vars = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (t, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(x.row(t)) {
            *m += v;
        }
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    for (t, &y) in labels.iter().enumerate() {
        for j in 0..d {
            let diff = x.row(t)[j] - means[y][j];
            vars[y][j] += diff * diff;
        }
    }
    for c in 0..2 {
        vars[c]
            .iter_mut()
            .for_each(|v| *v = (*v / counts[c] as f64).max(VARIANCE_FLOOR));
    }
    let total = (counts[0] + counts[1]) as f64;
    let log_priors = if empirical {
        [
            (counts[0] as f64 / total).ln(),
            (counts[1] as f64 / total).ln(),
        ]
    } else {
        [0.5f64.ln(); 2]
    };
    GaussianNb {
        means,
        vars,
        log_priors,
    }
}

fn fit_svm(x: &SeqMatrix, labels: &[usize], cfg: &BaselineConfig) -> LinearSvm {
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let lambda = cfg.svm_lambda;
    let mut t = 0u64;
    for _ in 0..cfg.svm_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = cfg.svm_lr0 / (1.0 + lambda * cfg.svm_lr0 * t as f64);
            let y = if labels[i] == UNSTABLE { 1.0 } else { -1.0 };
            let row = x.row(i);
            let margin = y * (crate::neural::dot(&w, row) + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|wj| *wj *= shrink);
            if margin < 1.0 {
                crate::neural::axpy(eta * y, row, &mut w);
                b += eta * y;
            }
        }
    }
    LinearSvm { w, b }
}

impl GaussianNb {
    fn log_likelihood(&self, c: usize, x: &[f64]) -> f64 {
        let mut ll = self.log_priors[c];
        for ((&xi, &m), &v) in x.iter().zip(&self.means[c]).zip(&self.vars[c]) {
            let diff = xi - m;
            ll -= 0.5 * (2.0 * std::f64::consts::PI * v).ln() + diff * diff / (2.0 * v);
        }
        ll
    }
}

impl Knn {
    /// Indices of the `k` nearest stored samples. Ordering key is
    /// `(squared distance, unstable first)`, so equal-distance candidates of
    /// different classes favour "unstable" regardless of storage order.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let key = |i: usize, d: f64| (d, usize::from(self.labels[i] != UNSTABLE));
        let mut best: Vec<(f64, usize, usize)> = Vec::with_capacity(self.k + 1);
        for i in 0..self.samples.rows() {
            let d: f64 = self
                .samples
                .row(i)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let (dk, lk) = key(i, d);
            if best.len() == self.k {
                let last = best[self.k - 1];
                if (dk, lk) >= (last.0, last.1) {
                    continue;
                }
            }
            let pos = best.partition_point(|&(bd, bl, _)| (bd, bl) <= (dk, lk));
            best.insert(pos, (dk, lk, i));
            best.truncate(self.k);
        }
        best.into_iter().map(|(_, _, i)| i).collect()
    }
}

impl BaselineModel {
    pub fn dim(&self) -> usize {
        match self {
            BaselineModel::NaiveBayes(m) => m.means[0].len(),
            BaselineModel::Knn(m) => m.samples.cols(),
            BaselineModel::Svm(m) => m.w.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<BaselineDecision> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let decide = |unstable: bool| if unstable { UNSTABLE } else { STABLE };
        Ok(match self {
            BaselineModel::NaiveBayes(m) => {
                let score = m.log_likelihood(UNSTABLE, x) - m.log_likelihood(STABLE, x);
                BaselineDecision {
                    class: decide(score >= 0.0),
                    score,
                }
            }
            BaselineModel::Knn(m) => {
                let nn = m.neighbours(x);
                let votes = nn.iter().filter(|&&i| m.labels[i] == UNSTABLE).count();
                BaselineDecision {
                    class: decide(2 * votes >= nn.len()),
                    score: votes as f64 / nn.len() as f64,
                }
            }
            BaselineModel::Svm(m) => {
                let score = crate::neural::dot(&m.w, x) + m.b;
                BaselineDecision {
                    class: decide(score >= 0.0),
                    score,
                }
            }
        })
    }

    /// Score mapped onto `[0, 1]` with 0.5 at the decision boundary.
    pub fn p_unstable(&self, x: &[f64]) -> Result<f64> {
        let d = self.predict(x)?;
        Ok(match self {
            BaselineModel::Knn(_) => d.score,
            _ => sigmoid(d.score),
        })
    }
}

/// Flattened causal context rows for every step of `input`.
pub fn context_samples(input: &ModelInput, context: usize) -> Result<SeqMatrix> {
    let flat = input.flattened()?;
    let (n, c) = (flat.rows(), flat.cols());
    let mut data = Vec::with_capacity(n * c * context);
    for t in 0..n {
        for j in 0..context {
            let src = (t + j + 1).saturating_sub(context);
            data.extend_from_slice(flat.row(src));
        }
    }
    SeqMatrix::new(n, c * context, data)
}

/// A baseline behind the [`Classifier`] interface.
#[derive(Debug, Clone)]
pub struct BaselineClassifier {
    pub kind: BaselineKind,
    pub config: BaselineConfig,
    pub featurizer: Featurizer,
    pub model: Option<BaselineModel>,
}

impl BaselineClassifier {
    pub fn new(kind: BaselineKind, spec: &ModelSpec) -> Result<Self> {
        if spec.baseline.context == 0 {
            return Err(Error::InvalidArgument(
                "baseline context must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            config: spec.baseline.clone(),
            featurizer: Featurizer::new(spec.feature_variant, spec.stats.clone()),
            model: None,
        })
    }

    fn fitted(&self) -> Result<&BaselineModel> {
        self.model.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} baseline is not fitted", self.kind.name()))
        })
    }

    pub(crate) fn decode(
        kind: BaselineKind,
        featurizer: Featurizer,
        r: &mut ByteReader<'_>,
    ) -> Result<Self> {
        let context = r.u32()? as usize;
        let model = match kind {
            BaselineKind::NaiveBayes => {
                let d = r.u32()? as usize;
                let log_priors = [r.f64()?, r.f64()?];
                let means = [r.f64_vec(d)?, r.f64_vec(d)?];
                let vars = [r.f64_vec(d)?, r.f64_vec(d)?];
                BaselineModel::NaiveBayes(GaussianNb {
                    means,
                    vars,
                    log_priors,
                })
            }
            BaselineKind::Knn => {
                let k = r.u32()? as usize;
                let d = r.u32()? as usize;
                let m = r.u32()? as usize;
                let labels = r.take(m)?.iter().map(|&b| usize::from(b)).collect();
                let samples = SeqMatrix::new(m, d, r.f64_vec(m * d)?)?;
                BaselineModel::Knn(Knn { k, samples, labels })
            }
            BaselineKind::Svm => {
                let d = r.u32()? as usize;
                let w = r.f64_vec(d)?;
                let b = r.f64()?;
                BaselineModel::Svm(LinearSvm { w, b })
            }
        };
        Ok(Self {
            kind,
            config: BaselineConfig {
                context,
                ..BaselineConfig::default()
            },
            featurizer,
            model: Some(model),
        })
    }
}

impl Classifier for BaselineClassifier {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn display_name(&self) -> String {
        match self.kind {
            BaselineKind::NaiveBayes => "NB".into(),
            BaselineKind::Knn => format!("KNN (k={})", self.config.k),
            BaselineKind::Svm => "SVM".into(),
        }
    }

    fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    fn fit(
        &mut self,
        train: &[LabeledWindow],
        _validation: &[LabeledWindow],
    ) -> Result<TrainHistory> {
        let total: usize = train.iter().map(|w| w.labels.len()).sum();
        let stride = total.div_ceil(self.config.max_train_samples.max(1)).max(1);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut cols = 0;
        let mut global = 0usize;
        for w in train {
            let samples = context_samples(&w.input, self.config.context)?;
            cols = samples.cols();
            let y = class_labels(&w.labels);
            for (t, &yt) in y.iter().enumerate().take(samples.rows()) {
                if global.is_multiple_of(stride) {
                    data.extend_from_slice(samples.row(t));
                    labels.push(yt);
                }
                global += 1;
            }
        }
        let x = SeqMatrix::new(labels.len(), cols, data)?;
        self.model = Some(fit(self.kind, &x, &labels, &self.config)?);
        Ok(TrainHistory::default())
    }

    fn predict_proba(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let model = self.fitted()?;
        let samples = context_samples(input, self.config.context)?;
        (0..samples.rows())
            .into_par_iter()
            .map(|t| model.p_unstable(samples.row(t)))
            .collect()
    }

    fn predict_step(&self, input: &ModelInput, t: usize) -> Result<f64> {
        let model = self.fitted()?;
        let flat = input.flattened()?;
        if t >= flat.rows() {
            return Err(Error::InvalidArgument(format!(
                "step {t} beyond {} steps",
                flat.rows()
            )));
        }
        let context = self.config.context;
        let mut row = Vec::with_capacity(flat.cols() * context);
        for j in 0..context {
            row.extend_from_slice(flat.row((t + j + 1).saturating_sub(context)));
        }
        model.p_unstable(&row)
    }

    fn encode_body(&self, w: &mut ByteWriter) {
        w.u32(self.config.context as u32);
        match self
            .model
            .as_ref()
            .expect("only fitted baselines are saved")
        {
            BaselineModel::NaiveBayes(m) => {
                w.u32(m.means[0].len() as u32);
                w.f64s(&m.log_priors);
                w.f64s(&m.means[0]);
                w.f64s(&m.means[1]);
                w.f64s(&m.vars[0]);
                w.f64s(&m.vars[1]);
            }
            BaselineModel::Knn(m) => {
                w.u32(m.k as u32);
                w.u32(m.samples.cols() as u32);
                w.u32(m.samples.rows() as u32);
                for &y in &m.labels {
                    w.u8(y as u8);
                }
                w.f64s(m.samples.as_slice());
            }
            BaselineModel::Svm(m) => {
                w.u32(m.w.len() as u32);
                w.f64s(&m.w);
                w.f64(m.b);
            }
        }
    }
}
