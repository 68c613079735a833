//! Haar-wavelet noise injection for differentially private federated learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`haar`] — 1-D Haar transform, weight function, ancestor chains and the
//!   exact reconstructed-noise variance oracle.
//! * [`mechanism`] — clipping policies, Gaussian noise and the wavelet
//!   noise-injection routines.
//! * [`accountant`] — Rényi-DP ledger for the Poisson-subsampled Gaussian
//!   mechanism and the wavelet/vanilla noise-multiplier mapping.
//! * [`models`] — small softmax models with manual backprop and
//!   SGD/Adam/AdaGrad.
//! * [`federation`] — deterministic single-process simulator for the
//!   vanilla and wavelet variants of DP-SGD and DP-FedAvg.
//! * [`data`] — synthetic blobs and IDX loading.
//! * [`experiment`] — TOML experiment specs, metrics CSV and manifests.
//!
//! Data-parallel loops go through [`exec`]; with the `parallel` feature
//! disabled every [`exec::Execution`] runs sequentially and produces the same
//! results bit-for-bit.

pub mod accountant;
pub mod data;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod haar;
pub mod mechanism;
pub mod models;
pub mod rng;
pub mod stats;

pub use accountant::{MechanismParams, RdpLedger};
pub use haar::{AncestorChain, WaveletDecomposition};
pub use mechanism::{ClippingPolicy, LayeredVector, NoiseScheme, NoiseSpec};

use thiserror::Error;

/// Top-level error, wrapping the per-module errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Haar(#[from] haar::HaarError),
    #[error(transparent)]
    Mechanism(#[from] mechanism::MechanismError),
    #[error(transparent)]
    Accountant(#[from] accountant::AccountantError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Federation(#[from] federation::FederationError),
}

pub type Result<T> = std::result::Result<T, Error>;
