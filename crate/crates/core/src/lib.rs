//! Classifier-free guidance strategies for conditional flow matching, with
//! exact ground truth on synthetic two-factor Gaussian-mixture tasks.
//!
//! Factor A stands in for a text condition and factor B for a speaker
//! condition. Guidance strategies are pure functions of cached model
//! evaluations ([`guidance`]); the analytic [`oracle`] and the trainable
//! [`neural`] network both implement [`VelocityModel`].

pub mod checkpoint;
pub mod conditioning;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod numerics;
pub mod oracle;
pub mod sampler;
pub mod schedule;

pub use conditioning::{ConditionPair, Factor, Mask, TaskSpec};
pub use error::{Error, Result};
pub use guidance::{GuidanceSpec, Strategy, WeightSchedule};
pub use metrics::MetricsRecord;
pub use model::VelocityModel;
pub use neural::{MlpModel, TrainConfig};
pub use numerics::{Rng, Vector};
pub use oracle::OracleModel;
pub use sampler::Method;
pub use schedule::{GridKind, GridParams, TimeGrid};
