//! Testing and learning linear juntas over Gaussian space from query access.

pub mod cover;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hypothesis;
pub mod learner;
pub mod linalg;
pub mod lowerbound;
pub mod oracle;
pub mod sampler;
pub mod tester;
pub mod truth;
pub mod zoo;

pub use error::{Error, Result};
pub use oracle::{Function, Oracle, QueryLedger};
pub use sampler::GaussianSampler;
pub use tester::Preset;
pub use zoo::ZooFunction;
