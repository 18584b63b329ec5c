//! Simulation and estimation toolkit for stochastic recursive sequences
//! `x(n+1) = A_n x(n)` driven by stationary random max-plus operators.
//!
//! The crate is organized around four building blocks:
//!
//! * [`algebra`] — exact max-plus matrix/vector arithmetic, the topical
//!   operator contract and projective-space geometry (distance, norm,
//!   rank-1 certificates).
//! * [`models`] — stationary random operator generators (finite-support
//!   i.i.d., entrywise i.i.d., Markov-modulated, the two-part assembly
//!   system), model file parsing and reproducible operator streams.
//! * [`engine`] — forward simulation, the subadditive top process,
//!   memory-loss detection along operator products, and backward coupling
//!   to the stationary regime.
//! * [`stats`] — estimators for the cycle time `gamma` and the CLT
//!   variance `sigma`, plus Gaussian-limit, degeneracy and tightness
//!   diagnostics.
//!
//! Replica-level Monte Carlo loops run through [`exec::map_replicas`],
//! which is backed by rayon when the default `parallel` feature is enabled
//! and falls back to a sequential loop otherwise. Results are collected in
//! replica order, so reports are bitwise identical at any parallelism
//! degree.
//!
//! ```
//! use mpx_core::algebra::MaxPlusMatrix;
//! use mpx_core::engine::{backward_couple, mlp_probe};
//! use mpx_core::exec::Exec;
//! use mpx_core::models::ModelSpec;
//! use mpx_core::stats::estimate_gamma_lln;
//!
//! // two atoms: a gap matrix and the all-zeros (rank-1) matrix
//! let gap = MaxPlusMatrix::from_rows(vec![
//!     vec![1.0, f64::NEG_INFINITY],
//!     vec![0.0, 2.0],
//! ])?;
//! let spec = ModelSpec::finite_support(
//!     7,
//!     vec![(gap, 0.4), (MaxPlusMatrix::zeros(2), 0.6)],
//! )?;
//!
//! // the zero atom certifies memory loss at depth 1
//! let probe = mlp_probe(&spec, 5, 200, Exec::Seq);
//! assert!(probe.mlp_detected);
//! assert_eq!(probe.exact.unwrap().rank_one_depth, Some(1));
//!
//! // cycle time: the gap atom advances the top by 2, the zero atom by 0
//! let gamma = estimate_gamma_lln(&spec, 4000, 20, Exec::Seq);
//! assert!((gamma.top.gamma_hat - 0.8).abs() < 0.05);
//!
//! // one exact sample of the stationary projective state
//! let coupling = backward_couple(&spec, 0, 1000)?;
//! assert!(coupling.n_backward >= 1);
//! # Ok::<(), mpx_core::Error>(())
//! ```

pub mod algebra;
pub mod engine;
pub mod error;
pub mod exec;
pub mod models;
pub mod stats;

pub use error::{Error, Result};
