//! Stable-rank diagnostics, theorem validators and the MSign optimizer for a
//! desk-scale decoder-only transformer.

pub mod activation;
pub mod bounds;
pub mod error;
pub mod fd;
pub mod feedback;
pub mod harness;
pub mod matrix;
pub mod net;
pub mod optim;
pub mod rng;
pub mod spectral;
pub mod svd;

pub use activation::Activation;
pub use bounds::{BoundCheck, Outcome, SweepSummary};
pub use error::{Error, Result};
pub use matrix::{frobenius_norm, matmul, transpose, Matrix};
pub use net::{ModelConfig, ModelParams};
pub use optim::{MSignConfig, MSignTargets};
pub use rng::SplitMix64;
pub use spectral::{
    alignment, geo_mean_srank, logit_margin, matrix_sign, msign_restore, stable_rank, AlignmentResult,
    SpectralReport,
};
pub use svd::{numeric_rank, spectral_norm, svd, SvdFactors};
