//! Tractable generative image modelling with recurrent image density
//! estimators (RIDE).
//!
//! A RIDE reads each pixel's causal neighborhood with a stack of spatial
//! LSTM layers and predicts the pixel with a factorized mixture of
//! conditional Gaussian scale mixtures (MCGSM). Because every hidden state
//! only depends on pixels that precede it in raster order, the joint density
//! of an image is the exact product of per-pixel conditionals, so the model
//! supports exact likelihoods, ancestral sampling and MCMC inpainting.
//!
//! Module map:
//!
//! * [`imaging`]: images, PGM/FGRD codecs, causal neighborhoods, dead leaves.
//! * [`mcgsm`]: the conditional mixture density and its analytic gradients.
//! * [`slstm`]: spatial LSTM layers with exact backpropagation.
//! * [`optim`]: momentum SGD and L-BFGS.
//! * [`ride`]: conditional whitening, the full model, training, the model
//!   container format.
//! * [`sampling`]: ancestral sampling and Metropolis-within-Gibbs inpainting.
//! * [`eval`]: log-likelihood rates, transformation ensembles, unit
//!   conversion.

pub mod error;
pub mod eval;
pub mod imaging;
pub mod math;
pub mod mcgsm;
pub mod optim;
mod par;
pub mod ride;
pub mod rng;
pub mod sampling;
pub mod slstm;

pub use error::{Error, Result};
pub use imaging::{Image, NeighborhoodSpec};
pub use mcgsm::McgsmParams;
pub use ride::{RideModel, WhiteningTransform};
pub use slstm::SlstmLayerParams;
