//! Explainable ensembles for PHQ-8 depression screening from speech embeddings.
//!
//! Two systems share one building block, a linear-softmax classifier trained
//! with Adam on 64-dimensional utterance-group embeddings:
//!
//! * [`bottom_up`]: eight item classifiers; per-speaker item modes are summed
//!   into the PHQ-8 total.
//! * [`top_down`]: a severity router picks one of five band experts, which
//!   soft-votes a total inside its band.
//!
//! Both derive the binary (total >= 10) and 5-way labels from the predicted
//! total, so the three outputs never disagree.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, the precision embeddings are stored in.

pub mod augment;
pub mod bottom_up;
pub mod domain;
pub mod error;
pub mod io;
pub mod mel;
pub mod metrics;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod top_down;

pub use domain::{
    binary_of, severity_of, validate_cohort, Item, Phq8Items, Prediction, PredictionSource, Severity, SpeakerLabel,
    Split,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = optim::LinearSoftmaxModel<f64>;
pub type Embedding = domain::GroupEmbedding<f64>;
pub type Cohort = domain::Cohort<f64>;
pub type BottomUp = bottom_up::BottomUpEnsemble<f64>;
pub type TopDown = top_down::TopDownMoe<f64>;
pub type Sample = optim::Sample<f64>;
pub type MelPatch = mel::MelPatch<f64>;
