//! Gradient-based optimizers over flat parameter vectors.

mod lbfgs;
mod sgd;

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsStatus, LineSearchConfig};
pub use sgd::SgdState;
