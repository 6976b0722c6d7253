//! Grasp stability prediction from tactile force and suction pressure
//! time series.
//!
//! Raw channels are min/max normalized, optionally expanded with causal
//! 20-sample STFT band magnitudes, and classified per step as stable or
//! unstable by one of four LSTM arrangements or a classical baseline. The
//! [`registry`] selects classifiers by name; [`stream`] runs them sample by
//! sample; [`evaluation`] scores them.

pub mod baselines;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod neural;
pub mod registry;
pub mod signal;
pub mod stream;

pub use error::{Error, Result};
pub use model::checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{LstmClassifier, Variant};
pub use registry::{Classifier, ModelSpec, Registry};
