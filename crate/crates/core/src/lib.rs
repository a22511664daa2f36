//! Gradient harmonization for two conflicting task gradients, plus a small
//! adversarial domain-adaptation harness that exercises it end to end.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod harmonizer;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod scenario;
pub mod toynet;
pub mod trainer;
pub mod vecmath;

pub use error::{Error, Result};
pub use harmonizer::{harmonize, GradientPair, HarmonizeMethod, HarmonizeResult, MethodKind};
pub use vecmath::ParamVector;
