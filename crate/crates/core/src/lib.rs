//! Doubly sparse spatiotemporal Gaussian process engine for reconstructing
//! a continuous climate field (mean annual temperature) from heterogeneous
//! point data, with minibatched variational training and calibrated
//! posterior uncertainty.
//!
//! The prior is a separable product of an anisotropic Matérn-3/2 spatial
//! kernel and an OU (Matérn-1/2) temporal kernel; the temporal factor is
//! handled in state-space form so inference over the inducing states runs in
//! linear time via Kalman recursions. Variational sites are updated with
//! natural gradients and hyperparameters with Adam.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod sparse_gp;
pub mod synth;
pub mod training;
pub mod state_space;

pub use error::{Error, Result};
