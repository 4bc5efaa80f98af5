//! Split-half dependence evaluation.
//!
//! Decides whether a subset of data took part in training a model by
//! measuring HSIC between model outputs of two random halves of the subset,
//! and matching the resulting permutation distribution against known
//! in-training and out-of-training reference subsets with Jensen–Shannon
//! divergence. Repeating the decision over subsets of a forgetting set gives
//! the out-of-training rate used to audit machine unlearning.
//!
//! Activation matrices are generic over their storage scalar ([`Scalar`]);
//! all estimator arithmetic runs in `f64`.

pub mod baseline;
pub mod data;
pub mod error;
pub mod hsic;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod toy;
pub mod verdict;

pub use data::{
    ActivationMatrix, BandwidthRule, EvalReport, HsicDistribution, KernelFamily, KernelSpec, RawMatrix,
    SanityCheck, Verdict,
};
pub use error::{Result, SdeError};
pub use scalar::{Dtype, Scalar};

/// Single-precision activation storage.
pub type Activations32 = ActivationMatrix<f32>;
/// Double-precision activation storage.
pub type Activations64 = ActivationMatrix<f64>;
/// Reference bundle over double-precision activations.
pub type References64 = verdict::ReferenceBundle<f64>;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
