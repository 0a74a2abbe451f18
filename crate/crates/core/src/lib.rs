//! Beat and downbeat tracking on stacked foundation-model features.
//!
//! The pipeline:
//!
//! ```text
//! features [n, f, t] -> msam (temporal / frequency / channel gates) -> classifier
//!     -> beat + downbeat activations -> dbn (bar-pointer Viterbi) -> beat times
//! ```
//!
//! plus the training loop ([`train`]), evaluation ([`metrics`]) and file formats ([`io`]).

pub mod beats;
pub mod classifier;
pub mod dbn;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod msam;
pub mod params;
pub mod tensor;
pub mod track;
pub mod train;

pub use beats::BeatSequence;
pub use classifier::{ActivationCurves, ClassifierParams, FrameTargets};
pub use dbn::DbnConfig;
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::{Model, ModelConfig};
pub use msam::{AblationMask, MsamConfig, MsamParams};
pub use params::Parameters;
pub use tensor::{FeatureTensor, Kernel, Matrix};
pub use train::TrainConfig;
