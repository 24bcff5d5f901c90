//! Absolute model weights for linear regression from the divergence between
//! each candidate and a Gaussian-process reference fit.

pub mod aggregate;
pub mod baselines;
pub mod candidate;
pub mod dataset;
pub mod dprob;
pub mod error;
pub mod hyper;
pub mod kernel;
pub mod optim;
pub mod pipeline;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
