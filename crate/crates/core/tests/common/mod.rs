#![allow(dead_code)]

use grasp_core::datasets::{
    build_windows, fit_norm_stats, synth_dataset, GraspSet, LabeledWindow, SynthProfile,
    WindowConfig,
};
use grasp_core::registry::{Classifier, ModelSpec, Registry};

pub const CHANNELS: [usize; 2] = [0, 9];

pub fn sets(seed: u64, n: usize) -> Vec<GraspSet> {
    synth_dataset(seed, n, SynthProfile::Force).unwrap()
}

pub fn spec(sets: &[GraspSet], hidden: usize, epochs: usize) -> ModelSpec {
    let mut spec = ModelSpec::new(fit_norm_stats(sets, &CHANNELS).unwrap());
    spec.train.lstm_units = hidden;
    spec.train.epochs = epochs;
    spec.train.patience = None;
    spec.baseline.svm_epochs = 5;
    spec
}

pub fn windows(sets: &[GraspSet], c: &dyn Classifier) -> Vec<LabeledWindow> {
    build_windows(sets, &CHANNELS, c.featurizer(), &WindowConfig::default()).unwrap()
}

/// Builds and fits `name` on `sets`.
pub fn fitted(name: &str, sets: &[GraspSet], hidden: usize, epochs: usize) -> Box<dyn Classifier> {
    let mut c = Registry::with_defaults()
        .build(name, &spec(sets, hidden, epochs))
        .unwrap();
    let w = windows(sets, c.as_ref());
    c.fit(&w, &[]).unwrap();
    c
}
