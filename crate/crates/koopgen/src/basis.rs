//! Bistochastic kernel normalization and the data-driven eigenbasis.
//!
//! A symmetric kernel matrix is normalized in two steps (row means `d`,
//! then corrected means `q`) so that the rescaled kernel `khat_mn =
//! K_mn / (d_m sqrt(q_n))` composes with its own transpose into a
//! symmetric Markov operator `P = (1/N^2) khat khat^T`: every row of `P`
//! sums to one, its spectrum lies in `(0, 1]`, and the leading eigenvector
//! is constant. Working with `P` rather than a one-sided normalization
//! makes the eigenbasis orthonormal with respect to the empirical measure
//! and immune to sampling-density bias.
//!
//! The basis consists of eigenpairs `(lambda_j, phi_j)` of `P` with
//! `phi_j` scaled to unit empirical norm, together with right factors
//! `gamma_j = (1/(N sigma_j)) khat^T phi_j` (with `sigma_j = sqrt(lambda_j)`)
//! satisfying `(1/N) khat gamma_j = sigma_j phi_j`. The `gamma_j` are the
//! quantities that extend out of sample; the `phi_j` are their in-sample
//! values.
//!
//! Eigenvalues are mapped to a Dirichlet-form scale by `eta_j =
//! (1/lambda_j - 1) / (1/lambda_1 - 1)` and damped semigroup weights
//! `exp(-tau eta_j)`, which later regularize the generator's eigenvalue
//! problem.

use crate::error::{Error, Result};
use faer::prelude::*;
use faer::Side;
use rayon::prelude::*;

/// Eigenvalues below this threshold are treated as numerically zero rank.
pub const RANK_TOL: f64 = 1e-14;

/// Threshold for picking the leading significant entry when fixing
/// eigenvector signs.
const SIGN_TOL: f64 = 1e-12;

/// Column-block width for deterministic parallel reductions.
const BLOCK: usize = 512;

/// Result of the two-step bistochastic normalization.
#[derive(Debug, Clone)]
pub struct Bistochastic {
    /// First-pass row means `d_m = (1/N) sum_n K_mn`.
    pub d: Vec<f64>,
    /// Second-pass means `q_m = (1/N) sum_n K_mn / d_n`.
    pub q: Vec<f64>,
    /// Normalized kernel `khat_mn = K_mn / (d_m sqrt(q_n))`.
    pub khat: Mat<f64>,
}

/// Row means of `k`, optionally with per-column weights, computed by a
/// deterministic column-blocked reduction (partials combined in block
/// order, so the result does not depend on thread count).
fn weighted_row_means(k: MatRef<'_, f64>, colscale: Option<&[f64]>) -> Vec<f64> {
    let n = k.nrows();
    let cols = k.ncols();
    let n_chunks = cols.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let col0 = ci * BLOCK;
            let w = BLOCK.min(cols - col0);
            let sub = k.submatrix(0, col0, n, w);
            let mut acc = vec![0.0; n];
            for j in 0..w {
                let f = colscale.map_or(1.0, |s| s[col0 + j]);
                for m in 0..n {
                    acc[m] += sub[(m, j)] * f;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for part in &partials {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    let inv_n = 1.0 / cols as f64;
    for o in &mut out {
        *o *= inv_n;
    }
    out
}

/// Column sums of `k` (each column reduced sequentially, so deterministic).
fn col_sums(k: MatRef<'_, f64>) -> Vec<f64> {
    (0..k.ncols())
        .into_par_iter()
        .map(|j| k.col(j).iter().sum::<f64>())
        .collect()
}

/// Two-step bistochastic normalization of a symmetric kernel matrix.
///
/// Fails if the matrix is not square, contains non-finite entries, or has a
/// degenerate (non-positive) row mean.
pub fn normalize_bistochastic(k: MatRef<'_, f64>) -> Result<Bistochastic> {
    let n = k.nrows();
    if k.ncols() != n || n == 0 {
        return Err(Error::Validation(format!(
            "kernel matrix must be square and nonempty, got {}x{}",
            n,
            k.ncols()
        )));
    }
    for j in 0..n {
        if k.col(j).iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "kernel matrix entries must be finite and nonnegative".into(),
            ));
        }
    }
    let d = weighted_row_means(k, None);
    if d.iter().any(|v| *v <= 0.0) {
        return Err(Error::DegenerateData(
            "a kernel row mean vanished; the kernel scale is too small for this dataset".into(),
        ));
    }
    let inv_d: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let q = weighted_row_means(k, Some(&inv_d));
    if q.iter().any(|v| *v <= 0.0) {
        return Err(Error::DegenerateData(
            "a corrected kernel row mean vanished during normalization".into(),
        ));
    }
    let inv_sqrt_q: Vec<f64> = q.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut khat = Mat::<f64>::zeros(n, n);
    khat.as_mut()
        .par_col_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(ci, mut chunk)| {
            let col0 = ci * BLOCK;
            for j in 0..chunk.ncols() {
                let f = inv_sqrt_q[col0 + j];
                for m in 0..n {
                    chunk[(m, j)] = k[(m, col0 + j)] * (inv_d[m] * f);
                }
            }
        });
    Ok(Bistochastic { d, q, khat })
}

/// The symmetric Markov operator `P = (1/N^2) khat khat^T`. Exposed for
/// diagnostics and tests; [`compute_basis`] forms it internally.
pub fn markov_matrix(khat: MatRef<'_, f64>) -> Mat<f64> {
    let n = khat.nrows();
    let mut p = khat * khat.transpose();
    let s = 1.0 / (n as f64 * n as f64);
    p.as_mut().par_col_chunks_mut(BLOCK).for_each(|mut chunk| {
        for j in 0..chunk.ncols() {
            for i in 0..chunk.nrows() {
                chunk[(i, j)] *= s;
            }
        }
    });
    p
}

/// Maximum deviation of the Markov row sums from one, computed without
/// materializing `P`: `P 1 = (1/N^2) khat (khat^T 1)`.
pub fn markov_row_sum_residual(khat: MatRef<'_, f64>) -> f64 {
    let n = khat.nrows();
    let t = col_sums(khat);
    let r = weighted_row_means(khat, Some(&t));
    // weighted_row_means already divides by N; one more factor completes
    // the 1/N^2.
    r.iter()
        .map(|v| (v / n as f64 - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Orthonormal kernel eigenbasis of the bistochastic Markov operator.
///
/// Index 0 is the constant function; indices `1..=l` are the nonconstant
/// basis functions. All vectors are scaled to unit empirical norm
/// `(1/N) sum_m v_m^2 = 1` and sign-fixed so their first significant entry
/// is positive.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    /// First-pass normalization means (length `N`).
    pub d: Vec<f64>,
    /// Second-pass normalization means (length `N`).
    pub q: Vec<f64>,
    /// Markov eigenvalues, descending, length `l + 1`.
    pub lambda: Vec<f64>,
    /// Singular values `sigma_j = sqrt(lambda_j)`.
    pub sigma: Vec<f64>,
    /// In-sample eigenfunctions, `N x (l + 1)`, unit empirical norm.
    pub phi: Mat<f64>,
    /// Right factors, `N x (l + 1)`, satisfying
    /// `(1/N) khat gamma_j = sigma_j phi_j`.
    pub gamma: Mat<f64>,
}

impl KernelBasis {
    /// Number of training samples.
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// Total number of basis functions including the constant, `l + 1`.
    pub fn l_prime(&self) -> usize {
        self.lambda.len()
    }

    /// Number of nonconstant basis functions `l`.
    pub fn l(&self) -> usize {
        self.lambda.len() - 1
    }
}

/// Diagonalize the Markov operator and extract the leading `l + 1`
/// eigenpairs (the constant plus `l` nonconstant functions).
///
/// Fails with an insufficient-rank error, naming the largest usable basis
/// size, if any retained eigenvalue falls below [`RANK_TOL`].
pub fn compute_basis(bi: &Bistochastic, l: usize) -> Result<KernelBasis> {
    let n = bi.khat.nrows();
    if l == 0 {
        return Err(Error::Validation("basis size l must be at least 1".into()));
    }
    let l_prime = l + 1;
    if l_prime > n {
        return Err(Error::Validation(format!(
            "basis size l + 1 = {l_prime} exceeds the sample count {n}"
        )));
    }

    // Eigenvalues ascending from the symmetric solver; we read them from
    // the top. The Markov matrix is dropped before gamma is formed to keep
    // peak memory at two N x N buffers.
    let (lambda, phi) = {
        let p = markov_matrix(bi.khat.as_ref());
        let evd = p
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("Markov eigensolve failed: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();

        let lambda: Vec<f64> = (0..l_prime).map(|k| s[n - 1 - k]).collect();
        if lambda[0] > 1.0 + 1e-8 {
            return Err(Error::Numerical(format!(
                "leading Markov eigenvalue {} exceeds 1; normalization is broken",
                lambda[0]
            )));
        }
        if lambda[l_prime - 1] < RANK_TOL {
            let usable = (0..n).take_while(|k| s[n - 1 - k] >= RANK_TOL).count();
            return Err(Error::InsufficientRank {
                requested: l,
                max_usable: usable.saturating_sub(1),
            });
        }

        let sqrt_n = (n as f64).sqrt();
        let mut phi = Mat::<f64>::zeros(n, l_prime);
        for k in 0..l_prime {
            let src = u.col(n - 1 - k);
            // Unit empirical norm: phi = sqrt(N) * unit eigenvector, with
            // the first significant entry made positive.
            let sign = match src.iter().find(|v| v.abs() > SIGN_TOL) {
                Some(v) if *v < 0.0 => -1.0,
                _ => 1.0,
            };
            for m in 0..n {
                phi[(m, k)] = sqrt_n * sign * src[m];
            }
        }
        (lambda, phi)
    };

    let sigma: Vec<f64> = lambda.iter().map(|v| v.sqrt()).collect();
    let mut gamma = bi.khat.transpose() * &phi;
    for k in 0..l_prime {
        let f = 1.0 / (n as f64 * sigma[k]);
        for m in 0..n {
            gamma[(m, k)] *= f;
        }
    }

    Ok(KernelBasis {
        d: bi.d.clone(),
        q: bi.q.clone(),
        lambda,
        sigma,
        phi,
        gamma,
    })
}

/// Eigenvalues on the Dirichlet scale and the damped semigroup weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupSpectrum {
    /// Damping time used to form the weights.
    pub tau: f64,
    /// Normalized Dirichlet energies `eta_j = (1/lambda_j - 1) / (1/lambda_1
    /// - 1)`; `eta_0 = 0` and `eta_1 = 1` exactly.
    pub eta: Vec<f64>,
    /// Semigroup weights `exp(-tau eta_j)`, nonincreasing in `j`.
    pub lambda_tau: Vec<f64>,
}

/// Map Markov eigenvalues to normalized energies and semigroup weights.
///
/// Fails if the first nonconstant eigenvalue equals one (the sampled flow
/// looks nonergodic at this resolution, so the energy scale degenerates).
pub fn semigroup_spectrum(lambda: &[f64], tau: f64) -> Result<SemigroupSpectrum> {
    if lambda.len() < 2 {
        return Err(Error::Validation(
            "semigroup spectrum needs the constant and at least one nonconstant eigenvalue".into(),
        ));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Validation(format!("damping time {tau} must be nonnegative")));
    }
    if lambda
        .iter()
        .any(|v| !(v.is_finite() && *v > 0.0 && *v <= 1.0 + 1e-8))
    {
        return Err(Error::Validation(
            "Markov eigenvalues must lie in (0, 1]".into(),
        ));
    }
    if lambda.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Validation(
            "Markov eigenvalues must be nonincreasing".into(),
        ));
    }
    let denom = 1.0 / lambda[1] - 1.0;
    if denom <= 0.0 {
        return Err(Error::Numerical(
            "the leading nonconstant eigenvalue equals 1: the kernel cannot \
             separate the data from a constant (nonergodic sampling or a \
             disconnected kernel graph)"
                .into(),
        ));
    }
    let mut eta = Vec::with_capacity(lambda.len());
    eta.push(0.0);
    for v in &lambda[1..] {
        eta.push((1.0 / v - 1.0) / denom);
    }
    let lambda_tau = eta.iter().map(|e| (-tau * e).exp()).collect();
    Ok(SemigroupSpectrum { tau, eta, lambda_tau })
}

/// Dirichlet energy of an observable given by basis coefficients:
/// `E = (sum_i |c_i|^2 / lambda_i) / (sum_i |c_i|^2) - 1`.
///
/// `lambda` must align index-by-index with `coeffs` (pass `lambda[1..]`
/// for coefficients over the nonconstant functions). Scale invariant;
/// clamped at zero against rounding; fails on a zero coefficient vector.
pub fn dirichlet_energy(coeffs: &[c64], lambda: &[f64]) -> Result<f64> {
    if coeffs.len() != lambda.len() {
        return Err(Error::Validation(format!(
            "coefficient count {} does not match eigenvalue count {}",
            coeffs.len(),
            lambda.len()
        )));
    }
    if lambda.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Validation("eigenvalues must be positive".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, l) in coeffs.iter().zip(lambda) {
        let a = c.re * c.re + c.im * c.im;
        num += a / l;
        den += a;
    }
    if den == 0.0 {
        return Err(Error::DegenerateData(
            "cannot compute the Dirichlet energy of the zero observable".into(),
        ));
    }
    Ok((num / den - 1.0).max(0.0))
}
