//! Kernel-based spectral analysis of ergodic flows.
//!
//! `koopgen` approximates the eigenvalues and eigenfunctions of the
//! Koopman generator — the directional derivative along a dynamical
//! vector field — from a single long trajectory, without finite
//! differencing the data in time. The pipeline:
//!
//! 1. **Simulate** ([`dynamics`]): integrate a flow (a torus rotation, the
//!    Stepanoff flow, or the Lorenz 63 system) and embed the trajectory in
//!    data space.
//! 2. **Tune** ([`kernels`]): fit a variable-bandwidth Gaussian kernel,
//!    choosing the pilot and main bandwidths by maximizing the logarithmic
//!    growth rate of the kernel sum.
//! 3. **Basis** ([`basis`]): bistochastically normalize the kernel matrix
//!    and diagonalize the associated Markov operator, yielding an
//!    orthonormal data-driven basis ordered by smoothness.
//! 4. **Eigs** ([`generator`]): assemble the generator matrix from
//!    analytic directional derivatives of kernel sections, then solve a
//!    regularized antisymmetric eigenvalue problem whose eigenvalues map
//!    to generator frequencies.
//! 5. **Evaluate** ([`nystrom`]): extend eigenfunctions to held-out states
//!    by the Nystrom formula and score their coherence via
//!    autocorrelation.
//!
//! The [`pipeline`] module chains these stages behind a content-addressed
//! artifact cache, [`config`] declares the run parameters, and [`io`]
//! fixes the on-disk formats; the `koopgen` binary is a thin CLI over
//! [`pipeline::Pipeline`].
//!
//! The crate is deterministic for a fixed seed and thread count — every
//! parallel reduction combines its partial results in a fixed order.
//!
//! # Quick start
//!
//! ```
//! use koopgen::basis::{compute_basis, normalize_bistochastic};
//! use koopgen::dynamics::{generate_dataset, FlowSystem};
//! use koopgen::generator::{
//!     assemble_generator, finalize_solution, solve_gevp, GeneratorProblem,
//! };
//! use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};
//!
//! # fn main() -> koopgen::Result<()> {
//! // A short trajectory of a quasiperiodic torus rotation.
//! let system = FlowSystem::torus_rotation_default();
//! let data = generate_dataset(&system, &[0.0, 0.0], 500, 0.37, 0, 1)?;
//!
//! // Kernel, basis, generator, spectrum.
//! let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())?;
//! let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho)?;
//! let bi = normalize_bistochastic(kmat.as_ref())?;
//! let basis = compute_basis(&bi, 8)?;
//! let v = assemble_generator(&system, &data, &basis, &bw, kmat.as_ref())?;
//! let problem = GeneratorProblem::new(v, &basis.lambda, 1e-3, 0.5)?;
//! let pairs = solve_gevp(problem.a.as_ref(), problem.b.as_ref())?;
//! let sol = finalize_solution(pairs, problem.v.as_ref(), problem.z, &basis.lambda)?;
//!
//! // Eigenvalues are purely imaginary and come in conjugate pairs.
//! assert!(sol.beta.iter().all(|b| b.re == 0.0));
//! # Ok(())
//! # }
//! ```

pub mod basis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod generator;
pub mod io;
pub mod kernels;
pub mod nystrom;
pub mod pipeline;

pub use error::{Error, Result};
