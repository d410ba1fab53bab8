//! Supervised multi-modal nonlinear embeddings.
//!
//! Training observations from several modalities are embedded jointly into a
//! low-dimensional Euclidean space by minimizing a trace objective built from
//! within-class, between-class and cross-modal graph Laplacians plus a
//! regularity penalty on Gaussian RBF interpolators. The interpolators extend
//! the embedding to unseen samples with a closed-form Lipschitz constant.
//!
//! The crate is `no_std` and only needs `alloc`:
//!
//! * [`dataset`]: multi-modal labeled datasets, a synthetic generator, and a
//!   stratified splitter.
//! * [`graphs`]: affinity matrices, Laplacians, and block assembly.
//! * [`kernel`]: Gaussian kernel matrices, interpolator fitting/evaluation,
//!   Lipschitz constants.
//! * [`optimizer`]: the alternating minimization over embeddings and kernel
//!   scales.
//! * [`eval`]: nearest-neighbor classification, retrieval, and ranking
//!   metrics.
//! * [`bounds`]: empirical geometry estimators, generalization bounds, and
//!   Monte Carlo validation.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod kernel;
mod linalg;
pub mod optimizer;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};

/// Global identifier of a sample; observations of one sample in different
/// modalities share it.
pub type SampleId = u64;
