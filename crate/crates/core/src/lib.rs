//! Weight-space dynamics of full-batch gradient-descent training.
//!
//! The crate trains small multilayer perceptrons and a compact convolutional
//! network with plain gradient descent, and measures how nearby weight-space
//! trajectories separate along training:
//!
//! - [`datasets`]: Iris CSV, MNIST IDX and CIFAR-10 binary loaders, splits.
//! - [`model`]: architectures, initialization, forward pass, loss, backprop.
//! - [`trainer`]: constant-learning-rate full-batch GD and time-to-accuracy.
//! - [`lyapunov`]: perturbation balls, L1 divergence, local and network
//!   maximum Lyapunov exponents.
//! - [`sharpness`]: Hessian-vector products and power iteration.
//! - [`toymap`]: the one-dimensional double-well gradient map.
//! - [`sweep`]: learning-rate sweeps and bisection for the sweet spot.
//!
//! All arithmetic is `f64`. Every random draw is derived from explicit seeds,
//! so results do not depend on thread count or scheduling.

pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod lyapunov;
pub mod model;
pub mod seed;
pub mod sharpness;
pub mod sweep;
pub mod toymap;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Activation, InitScheme, Layer, NetworkSpec, ParamVector};
