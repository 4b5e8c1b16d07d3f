//! Numerical laboratory for low-rank structure in the inner-layer gradient of
//! two-layer networks trained on spiked anisotropic Gaussian data.
//!
//! The data model is `X = X_B + ζ z qᵀ` with bulk rows drawn from
//! `N(0, diag(k^{-α}))` and spike magnitude `ζ = n^ν`. For a network
//! `f(x) = γ_m aᵀσ(Wx)` the gradient with respect to `Wᵀ` splits exactly into
//! a residue spike `S1`, an interpolant `S12`, a data spike `S2` and a bulk
//! remainder `E`; the [`gradient_decomp`] module computes all of them, [`spectra_align`]
//! labels the singular spectrum, and [`experiments`] runs the sweeps.

// Links the BLAS implementation used by ndarray's matrix products.
extern crate blas_src;

pub mod cli;
pub mod config;
pub mod data_model;
pub mod error;
pub mod experiments;
pub mod gradient_decomp;
pub mod ingest;
pub mod linalg;
pub mod loss_residue;
pub mod network;
pub mod rng;
pub mod spectra_align;

pub use error::{Error, Result};
