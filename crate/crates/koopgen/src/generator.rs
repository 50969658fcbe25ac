//! Generator matrices, the regularized eigenvalue problem, and frequencies.
//!
//! The infinitesimal generator of the Koopman group acts on observables as
//! the directional derivative along the vector field. Its matrix elements
//! in the kernel eigenbasis are computed *analytically* — by differentiating
//! the kernel sections along the known velocities — rather than by finite
//! differencing trajectory data, so no time-derivative noise enters:
//!
//! `V_ij = (1 / (sigma_j N^2)) sum_mn phi_i(x_m) khat'(x_m, x_n) gamma_j(x_n)`
//!
//! where `khat'` is the directional derivative of the bistochastically
//! normalized kernel section (the `q` factor is constant in the first
//! argument and drops out of the derivative up to the `d` correction).
//!
//! Because the flow preserves the invariant measure, the generator is
//! skew-adjoint; the matrix `V` is antisymmetric up to sampling error, and
//! only its antisymmetric part enters the eigenvalue problem:
//!
//! `A c = beta B c`, with `A = Lam (V - V^T)/2 Lam` damped by semigroup
//! weights `Lam = diag(exp(-(tau/2) eta_j))` and `B = (zI - V)^T (zI - V)`
//! a resolvent-type positive definite Gram matrix. The eigenvalues `beta`
//! are purely imaginary images of the generator frequencies under
//! `q_z(omega) = omega / (z^2 + omega^2)`; inverting `q_z` recovers the
//! frequencies. Eigenvectors are ordered by Dirichlet energy, the natural
//! smoothness ranking.
//!
//! The solve runs through a Cholesky factorization `B = L L^T` and the
//! Hermitian matrix `H = i L^-1 A L^-T`, so conjugate eigenvalue pairs are
//! produced structurally: each positive eigenvalue `theta` of `H` yields
//! the pair `beta = +/- i theta` with conjugate coefficient vectors.

use crate::basis::{dirichlet_energy, semigroup_spectrum, KernelBasis};
use crate::dynamics::{FlowSystem, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::kernels::BandwidthModel;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::prelude::*;
use faer::Side;
use rayon::prelude::*;

/// Column-block width for deterministic parallel reductions.
const BLOCK: usize = 512;

/// Relative threshold separating numerically zero eigenvalues of the
/// reduced skew form from genuine oscillatory pairs.
const ZERO_THETA_TOL: f64 = 1e-12;

/// Clusters of eigenvalues closer than this are re-orthonormalized.
const CLUSTER_TOL: f64 = 1e-10;

/// The resolvent-type frequency compression `q_z(omega) = omega / (z^2 +
/// omega^2)`: odd, bounded by `1/(2z)`, and invertible for `|omega| >= z`.
pub fn qz(omega: f64, z: f64) -> f64 {
    omega / (z * z + omega * omega)
}

/// Invert `q_z` on its principal branch (`|omega| >= z`), mapping `0 -> 0`.
///
/// Returns the frequency and a flag that is true when `|beta|` exceeded the
/// attainable bound `1/(2z)` and the discriminant was clamped to zero (the
/// frequency is then the branch-point value `1/(2 beta)`).
pub fn qz_inverse(beta: f64, z: f64) -> (f64, bool) {
    if beta == 0.0 {
        return (0.0, false);
    }
    let disc = 1.0 - 4.0 * z * z * beta * beta;
    let clamped = disc < 0.0;
    let omega = (1.0 + disc.max(0.0).sqrt()) / (2.0 * beta);
    (omega, clamped)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Generator matrix on the full basis (constant included), `(l+1) x (l+1)`,
/// from explicit embedded velocities `w_m` (row-major `n x dim`).
///
/// The first column is the image of the constant function and vanishes up
/// to rounding; [`assemble_generator`] slices it away. Exposed for custom
/// vector fields and diagnostics.
pub fn assemble_generator_full_from_velocities(
    points: &[f64],
    dim: usize,
    velocities: &[f64],
    basis: &KernelBasis,
    bw: &BandwidthModel,
    kmat: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let n = basis.n();
    let l_prime = basis.l_prime();
    if dim == 0 || points.len() != n * dim || velocities.len() != n * dim {
        return Err(Error::Validation(format!(
            "points/velocities must be {n} x {dim} row-major buffers"
        )));
    }
    if kmat.nrows() != n || kmat.ncols() != n {
        return Err(Error::Validation(format!(
            "kernel matrix is {}x{}, expected {n}x{n}",
            kmat.nrows(),
            kmat.ncols()
        )));
    }
    if bw.rho.len() != n {
        return Err(Error::Validation(
            "bandwidth model does not match the dataset size".into(),
        ));
    }
    if velocities.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite velocity".into()));
    }

    let e2 = bw.epsilon * bw.epsilon;
    let grad_rho = bw.rho_grad_train(points, dim);
    let inv_rho: Vec<f64> = bw.rho.iter().map(|r| 1.0 / r).collect();
    let inv_d: Vec<f64> = basis.d.iter().map(|v| 1.0 / v).collect();
    let inv_sqrt_q: Vec<f64> = basis.q.iter().map(|v| 1.0 / v.sqrt()).collect();

    // Per-row constants of the kernel derivative:
    // k'(y_m, y_n) = K_mn * (c1_m ((y_m - y_n) . w_m) + c2_m |y_m - y_n|^2)
    //               / rho_n
    // with c1_m = -2 / (e2 rho_m), c2_m = (grad rho_m . w_m) / (e2 rho_m^2).
    let mut aw = vec![0.0; n];
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for m in 0..n {
        let ym = &points[m * dim..(m + 1) * dim];
        let wm = &velocities[m * dim..(m + 1) * dim];
        let gm = &grad_rho[m * dim..(m + 1) * dim];
        aw[m] = dot(ym, wm);
        c1[m] = -2.0 / (e2 * bw.rho[m]);
        c2[m] = dot(gm, wm) / (e2 * bw.rho[m] * bw.rho[m]);
    }

    let kprime = |m: usize, nn: usize, yn: &[f64]| -> f64 {
        let wm = &velocities[m * dim..(m + 1) * dim];
        let dw = aw[m] - dot(yn, wm);
        let d2 = sq_dist(&points[m * dim..(m + 1) * dim], yn);
        kmat[(m, nn)] * (c1[m] * dw + c2[m] * d2) * inv_rho[nn]
    };

    // Pass 1: row means d'_m of the raw kernel derivative.
    let n_chunks = n.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let col0 = ci * BLOCK;
            let w = BLOCK.min(n - col0);
            let mut acc = vec![0.0; n];
            for j in 0..w {
                let nn = col0 + j;
                let yn = &points[nn * dim..(nn + 1) * dim];
                for m in 0..n {
                    acc[m] += kprime(m, nn, yn);
                }
            }
            acc
        })
        .collect();
    let mut dprime = vec![0.0; n];
    for part in &partials {
        for (o, p) in dprime.iter_mut().zip(part) {
            *o += p;
        }
    }
    for v in &mut dprime {
        *v /= n as f64;
    }
    let ratio: Vec<f64> = dprime.iter().zip(&basis.d).map(|(dp, d)| dp / d).collect();

    // Pass 2: accumulate phi^T khat' gamma block by block, where
    // khat'_mn = (k'_mn - K_mn d'_m / d_m) / (d_m sqrt(q_n)).
    let partial_v: Vec<Mat<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let col0 = ci * BLOCK;
            let w = BLOCK.min(n - col0);
            let mut dblk = Mat::<f64>::zeros(n, w);
            for j in 0..w {
                let nn = col0 + j;
                let yn = &points[nn * dim..(nn + 1) * dim];
                let f = inv_sqrt_q[nn];
                for m in 0..n {
                    dblk[(m, j)] =
                        (kprime(m, nn, yn) - kmat[(m, nn)] * ratio[m]) * inv_d[m] * f;
                }
            }
            let t = basis.phi.transpose() * &dblk;
            &t * basis.gamma.submatrix(col0, 0, w, l_prime)
        })
        .collect();
    let mut vfull = Mat::<f64>::zeros(l_prime, l_prime);
    for part in &partial_v {
        for j in 0..l_prime {
            for i in 0..l_prime {
                vfull[(i, j)] += part[(i, j)];
            }
        }
    }
    let inv_n2 = 1.0 / (n as f64 * n as f64);
    for j in 0..l_prime {
        let f = inv_n2 / basis.sigma[j];
        for i in 0..l_prime {
            vfull[(i, j)] *= f;
        }
    }
    Ok(vfull)
}

/// Generator matrix on the full basis (constant included) for a known
/// system, using the pushforward of its vector field at each sample.
pub fn assemble_generator_full(
    system: &FlowSystem,
    dataset: &TrajectoryDataset,
    basis: &KernelBasis,
    bw: &BandwidthModel,
    kmat: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    if dataset.data_dim() != system.data_dim() || dataset.state_dim() != system.state_dim() {
        return Err(Error::Validation(format!(
            "dataset dimensions do not match `{}`",
            system.name()
        )));
    }
    let n = dataset.n();
    let dim = dataset.data_dim();
    let mut velocities = vec![0.0; n * dim];
    for m in 0..n {
        let w = system.pushforward_vector(dataset.state(m))?;
        velocities[m * dim..(m + 1) * dim].copy_from_slice(&w);
    }
    assemble_generator_full_from_velocities(
        dataset.points(),
        dim,
        &velocities,
        basis,
        bw,
        kmat,
    )
}

/// Generator matrix on the nonconstant basis functions, `l x l` — the
/// operator that enters the eigenvalue problem.
pub fn assemble_generator(
    system: &FlowSystem,
    dataset: &TrajectoryDataset,
    basis: &KernelBasis,
    bw: &BandwidthModel,
    kmat: MatRef<'_, f64>,
) -> Result<Mat<f64>> {
    let vfull = assemble_generator_full(system, dataset, basis, bw, kmat)?;
    let l = basis.l();
    Ok(vfull.submatrix(1, 1, l, l).to_owned())
}

/// The regularized skew-adjoint eigenvalue problem `A c = beta B c`.
#[derive(Debug, Clone)]
pub struct GeneratorProblem {
    /// Raw generator matrix on the nonconstant basis.
    pub v: Mat<f64>,
    /// Antisymmetric part `(V - V^T) / 2`, exactly antisymmetric.
    pub v_anti: Mat<f64>,
    /// Damped antisymmetric form `Lam v_anti Lam`, exactly antisymmetric.
    pub a: Mat<f64>,
    /// Resolvent Gram matrix `(zI - V)^T (zI - V)`, exactly symmetric.
    pub b: Mat<f64>,
    /// Resolvent regularization parameter.
    pub z: f64,
    /// Semigroup damping time (the damping uses `tau / 2` per side).
    pub tau: f64,
}

impl GeneratorProblem {
    /// Build the damped forms from a generator matrix and the Markov
    /// eigenvalues (full spectrum, constant included, length `l + 1`).
    pub fn new(v: Mat<f64>, lambda: &[f64], tau: f64, z: f64) -> Result<Self> {
        let l = v.nrows();
        if v.ncols() != l || l == 0 {
            return Err(Error::Validation(format!(
                "generator matrix must be square and nonempty, got {}x{}",
                l,
                v.ncols()
            )));
        }
        if lambda.len() != l + 1 {
            return Err(Error::Validation(format!(
                "expected {} Markov eigenvalues (constant included), got {}",
                l + 1,
                lambda.len()
            )));
        }
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Validation(format!(
                "regularization parameter z = {z} must be positive"
            )));
        }
        for j in 0..l {
            if v.col(j).iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical("non-finite generator matrix entry".into()));
            }
        }
        let sg = semigroup_spectrum(lambda, tau / 2.0)?;
        let lam = &sg.lambda_tau[1..];

        // Antisymmetrize exactly: each off-diagonal value is computed once
        // and stored with both signs; diagonals are exactly zero.
        let mut v_anti = Mat::<f64>::zeros(l, l);
        let mut a = Mat::<f64>::zeros(l, l);
        for j in 0..l {
            for i in 0..j {
                let t = 0.5 * (v[(i, j)] - v[(j, i)]);
                v_anti[(i, j)] = t;
                v_anti[(j, i)] = -t;
                let s = lam[i] * t * lam[j];
                a[(i, j)] = s;
                a[(j, i)] = -s;
            }
        }

        let mut m = Mat::<f64>::from_fn(l, l, |i, j| -v[(i, j)]);
        for i in 0..l {
            m[(i, i)] += z;
        }
        let mut b = m.transpose() * &m;
        // Gram matrices are symmetric in exact arithmetic; make it exact.
        for j in 0..l {
            for i in 0..j {
                let t = 0.5 * (b[(i, j)] + b[(j, i)]);
                b[(i, j)] = t;
                b[(j, i)] = t;
            }
        }
        Ok(Self { v, v_anti, a, b, z, tau })
    }
}

/// Raw eigenpairs of `A c = beta B c`: purely imaginary eigenvalues (the
/// real parts are exactly zero by construction) with conjugate pairs
/// adjacent, and the corresponding coefficient columns.
#[derive(Debug, Clone)]
pub struct GevpPairs {
    /// Eigenvalues `beta = +/- i theta`.
    pub beta: Vec<c64>,
    /// Coefficient columns `c_j`, one per eigenvalue.
    pub c: Mat<c64>,
}

/// Solve the regularized antisymmetric eigenvalue problem.
///
/// `a` must be antisymmetric and `b` symmetric positive definite. The
/// reduction `S = L^-1 A L^-T` (Cholesky `B = L L^T`) is antisymmetric, so
/// `H = iS` is Hermitian; every positive eigenvalue `theta` of `H` yields
/// the conjugate pair `beta = +/- i theta` with coefficient vectors that
/// are exact conjugates. Numerically zero `theta` yield real vectors with
/// `beta = 0`.
pub fn solve_gevp(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<GevpPairs> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n || n == 0 {
        return Err(Error::Validation(format!(
            "eigenvalue problem needs square matrices of equal size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let par = faer::get_global_parallelism();
    let llt = b.llt(Side::Lower).map_err(|_| {
        Error::NotPositiveDefinite(
            "the Gram matrix B = (zI - V)^T (zI - V) failed its Cholesky \
             factorization; increase z or reduce the basis size"
                .into(),
        )
    })?;
    let l = llt.L().to_owned();

    // S = L^-1 A L^-T via two triangular solves.
    let mut x = a.to_owned();
    solve_lower_triangular_in_place(l.as_ref(), x.as_mut(), par);
    let mut y = x.transpose().to_owned();
    solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), par);
    let mut s = y.transpose().to_owned();

    // A is exactly antisymmetric, so S is antisymmetric up to solve
    // rounding; check, then enforce exactly.
    let mut scale = 0.0f64;
    let mut resid = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(s[(i, j)].abs());
            resid = resid.max((s[(i, j)] + s[(j, i)]).abs());
        }
    }
    if resid > 1e-9 * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "reduced matrix lost antisymmetry (residual {resid:.3e} at scale {scale:.3e}); \
             the input A was not antisymmetric"
        )));
    }
    for j in 0..n {
        for i in 0..j {
            let t = 0.5 * (s[(i, j)] - s[(j, i)]);
            s[(i, j)] = t;
            s[(j, i)] = -t;
        }
        s[(j, j)] = 0.0;
    }

    // Hermitian H = iS; eigenvalues come back ascending.
    let h = Mat::<c64>::from_fn(n, n, |i, j| c64::new(0.0, s[(i, j)]));
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("Hermitian eigensolve failed: {e:?}")))?;
    let theta: Vec<f64> = (0..n).map(|k| evd.S()[k].re).collect();
    let u = evd.U();

    let max_abs = theta
        .iter()
        .map(|t| t.abs())
        .fold(0.0f64, f64::max);
    let tol = ZERO_THETA_TOL * max_abs;
    let n_pos = theta.iter().filter(|t| **t > tol).count();

    // Positional split: top n_pos are kept, bottom n_pos are their mirrors
    // (discarded — the conjugate vectors are reconstructed exactly), the
    // middle is the numerically zero cluster.
    let mut beta: Vec<c64> = Vec::with_capacity(n);
    let mut vecs: Vec<Vec<c64>> = Vec::with_capacity(n);
    for k in (n - n_pos..n).rev() {
        let t = theta[k];
        let col: Vec<c64> = (0..n).map(|i| u[(i, k)]).collect();
        beta.push(c64::new(0.0, t));
        vecs.push(col.iter().map(|v| v.conj()).collect());
        beta.push(c64::new(0.0, -t));
        vecs.push(col);
    }

    // Zero cluster: orthonormalize real and imaginary parts into real
    // vectors spanning the same (real) nullspace.
    let zero_range = n_pos..(n - n_pos);
    let want = zero_range.len();
    if want > 0 {
        let mut reals: Vec<Vec<f64>> = Vec::with_capacity(want);
        'outer: for k in zero_range {
            for part in 0..2 {
                let mut v: Vec<f64> = (0..n)
                    .map(|i| if part == 0 { u[(i, k)].re } else { u[(i, k)].im })
                    .collect();
                for w in &reals {
                    let proj: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vi, wi) in v.iter_mut().zip(w) {
                        *vi -= proj * wi;
                    }
                }
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm > 1e-8 {
                    for vi in &mut v {
                        *vi /= nrm;
                    }
                    reals.push(v);
                    if reals.len() == want {
                        break 'outer;
                    }
                }
            }
        }
        if reals.len() != want {
            return Err(Error::Numerical(
                "failed to extract a real basis of the zero eigenspace".into(),
            ));
        }
        for v in reals {
            beta.push(c64::new(0.0, 0.0));
            vecs.push(v.into_iter().map(|x| c64::new(x, 0.0)).collect());
        }
    }

    // Back-transform all vectors at once: c = L^-T u, done on the real and
    // imaginary parts separately (L is real).
    let m_modes = vecs.len();
    let mut re = Mat::<f64>::from_fn(n, m_modes, |i, j| vecs[j][i].re);
    let mut im = Mat::<f64>::from_fn(n, m_modes, |i, j| vecs[j][i].im);
    solve_upper_triangular_in_place(l.as_ref().transpose(), re.as_mut(), par);
    solve_upper_triangular_in_place(l.as_ref().transpose(), im.as_mut(), par);
    let c = Mat::<c64>::from_fn(n, m_modes, |i, j| c64::new(re[(i, j)], im[(i, j)]));

    Ok(GevpPairs { beta, c })
}

/// A fully post-processed generator spectrum.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    /// Eigenvalues of the compressed problem, purely imaginary, ordered by
    /// Dirichlet energy (conjugate pairs adjacent).
    pub beta: Vec<c64>,
    /// Generator frequencies `omega_j = q_z^-1(Im beta_j)`.
    pub omega: Vec<f64>,
    /// Dirichlet energies of the eigenfunctions (ascending).
    pub energy: Vec<f64>,
    /// Raw coefficient columns in the nonconstant basis.
    pub c: Mat<c64>,
    /// Normalized eigenfunction coefficients `d_j = (zI - V) c_j`, unit
    /// 2-norm, pairwise orthonormal.
    pub dcoef: Mat<c64>,
    /// Permutation applied by the energy ordering: `order[k]` is the
    /// pre-sort index of the mode now at position `k`.
    pub order: Vec<usize>,
    /// Positions (post-sort) of modes whose frequency inversion hit the
    /// `q_z` branch clamp.
    pub clamped_modes: Vec<usize>,
    /// Regularization parameter the solution was computed with.
    pub z: f64,
}

impl EigenSolution {
    /// Number of modes.
    pub fn n_modes(&self) -> usize {
        self.beta.len()
    }

    /// Evolve observable coefficients (one per mode) for time `t` under
    /// the diagonalized dynamics: `fhat_j -> exp(i omega_j t) fhat_j`.
    /// Multiplication by unit-modulus phases preserves the 2-norm.
    pub fn evolve_observable(&self, fhat: &[c64], t: f64) -> Result<Vec<c64>> {
        if fhat.len() != self.n_modes() {
            return Err(Error::Validation(format!(
                "coefficient count {} does not match mode count {}",
                fhat.len(),
                self.n_modes()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Validation(format!("non-finite evolution time {t}")));
        }
        Ok(self
            .omega
            .iter()
            .zip(fhat)
            .map(|(w, f)| {
                let (s, c) = (w * t).sin_cos();
                c64::new(f.re * c - f.im * s, f.re * s + f.im * c)
            })
            .collect())
    }
}

/// Normalize, rank, and label raw eigenpairs.
///
/// Eigenfunction coefficients `d_j = (zI - V) c_j` are normalized to unit
/// 2-norm (their orthonormality is inherited from the Hermitian solve);
/// modes are stably sorted by Dirichlet energy, which keeps conjugate
/// pairs adjacent because paired energies are computed from identical
/// magnitudes. Clusters of equal `beta` (within `1e-10`) are
/// re-orthonormalized by modified Gram-Schmidt, applying the same
/// combinations to `c` so `d = (zI - V) c` stays exact.
pub fn finalize_solution(
    pairs: GevpPairs,
    v: MatRef<'_, f64>,
    z: f64,
    lambda: &[f64],
) -> Result<EigenSolution> {
    let l = v.nrows();
    let m_modes = pairs.beta.len();
    if pairs.c.nrows() != l || pairs.c.ncols() != m_modes {
        return Err(Error::Validation(
            "coefficient matrix does not match the eigenvalue list".into(),
        ));
    }
    if lambda.len() != l + 1 {
        return Err(Error::Validation(format!(
            "expected {} Markov eigenvalues (constant included), got {}",
            l + 1,
            lambda.len()
        )));
    }

    let mz = Mat::<c64>::from_fn(l, l, |i, j| {
        c64::new((if i == j { z } else { 0.0 }) - v[(i, j)], 0.0)
    });
    let mut dmat = &mz * &pairs.c;
    let mut c = pairs.c;

    for j in 0..m_modes {
        let nrm = (0..l)
            .map(|i| {
                let x = dmat[(i, j)];
                x.re * x.re + x.im * x.im
            })
            .sum::<f64>()
            .sqrt();
        if nrm < 1e-250 {
            return Err(Error::Numerical(
                "(zI - V) annihilated an eigenvector; z coincides with a \
                 real eigenvalue of V"
                    .into(),
            ));
        }
        let f = 1.0 / nrm;
        for i in 0..l {
            dmat[(i, j)] = c64::new(dmat[(i, j)].re * f, dmat[(i, j)].im * f);
            c[(i, j)] = c64::new(c[(i, j)].re * f, c[(i, j)].im * f);
        }
    }

    let lambda_tail = &lambda[1..];
    let col_energy = |dm: &Mat<c64>, j: usize| -> Result<f64> {
        let col: Vec<c64> = (0..l).map(|i| dm[(i, j)]).collect();
        dirichlet_energy(&col, lambda_tail)
    };
    let mut energy = Vec::with_capacity(m_modes);
    for j in 0..m_modes {
        energy.push(col_energy(&dmat, j)?);
    }

    // Stable energy sort: paired modes have bitwise-equal energies, so
    // they stay adjacent in their construction order.
    let mut order: Vec<usize> = (0..m_modes).collect();
    order.sort_by(|a, b| energy[*a].total_cmp(&energy[*b]));

    let beta: Vec<c64> = order.iter().map(|k| pairs.beta[*k]).collect();
    let mut energy: Vec<f64> = order.iter().map(|k| energy[*k]).collect();
    let mut dsorted = Mat::<c64>::zeros(l, m_modes);
    let mut csorted = Mat::<c64>::zeros(l, m_modes);
    for (dst, src) in order.iter().enumerate() {
        for i in 0..l {
            dsorted[(i, dst)] = dmat[(i, *src)];
            csorted[(i, dst)] = c[(i, *src)];
        }
    }

    // Re-orthonormalize degenerate beta clusters (rare): group mode
    // positions by eigenvalue, then run MGS inside each group in position
    // order. Conjugate clusters are processed in mirrored order, which
    // keeps the pairing exact.
    let mut by_beta: Vec<usize> = (0..m_modes).collect();
    by_beta.sort_by(|a, b| beta[*a].im.total_cmp(&beta[*b].im));
    let mut g0 = 0;
    for k in 1..=m_modes {
        let split = k == m_modes
            || (beta[by_beta[k]].im - beta[by_beta[k - 1]].im).abs() > CLUSTER_TOL;
        if split {
            if k - g0 >= 2 {
                let mut members: Vec<usize> = by_beta[g0..k].to_vec();
                members.sort_unstable();
                for (rank, &j) in members.iter().enumerate() {
                    for &p in &members[..rank] {
                        // proj = <d_p, d_j> in the standard Hermitian inner
                        // product; subtract from both d and c columns.
                        let mut proj = c64::new(0.0, 0.0);
                        for i in 0..l {
                            proj += dsorted[(i, p)].conj() * dsorted[(i, j)];
                        }
                        for i in 0..l {
                            let dp = dsorted[(i, p)];
                            let cp = csorted[(i, p)];
                            dsorted[(i, j)] -= proj * dp;
                            csorted[(i, j)] -= proj * cp;
                        }
                    }
                    let nrm = (0..l)
                        .map(|i| {
                            let x = dsorted[(i, j)];
                            x.re * x.re + x.im * x.im
                        })
                        .sum::<f64>()
                        .sqrt();
                    if nrm < 1e-8 {
                        return Err(Error::Numerical(
                            "a degenerate eigenvalue cluster is rank deficient".into(),
                        ));
                    }
                    let f = 1.0 / nrm;
                    for i in 0..l {
                        dsorted[(i, j)] = c64::new(dsorted[(i, j)].re * f, dsorted[(i, j)].im * f);
                        csorted[(i, j)] = c64::new(csorted[(i, j)].re * f, csorted[(i, j)].im * f);
                    }
                    energy[j] = col_energy(&dsorted, j)?;
                }
            }
            g0 = k;
        }
    }

    let mut omega = Vec::with_capacity(m_modes);
    let mut clamped_modes = Vec::new();
    for (j, b) in beta.iter().enumerate() {
        let (w, clamped) = qz_inverse(b.im, z);
        omega.push(w);
        if clamped {
            clamped_modes.push(j);
        }
    }

    Ok(EigenSolution {
        beta,
        omega,
        energy,
        c: csorted,
        dcoef: dsorted,
        order,
        clamped_modes,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn identity(n: usize) -> Mat<f64> {
        Mat::<f64>::identity(n, n)
    }

    #[test]
    fn qz_spot_values_and_branch() {
        assert_abs_diff_eq!(qz(1.0, 0.1), 1.0 / 1.01, epsilon = 1e-16);
        // q_z(z) attains the maximum 1/(2z); the inverse has a square-root
        // branch point there, so the roundtrip is only sqrt(ulp)-accurate
        // and the clamp flag may trip either way.
        let (w, _) = qz_inverse(qz(0.1, 0.1), 0.1);
        assert_abs_diff_eq!(w, 0.1, epsilon = 1e-7);
        // The analytic identity q_z(1) -> omega = 1 exactly for z = 0.1.
        let (w, clamped) = qz_inverse(1.0 / 1.01, 0.1);
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
        assert!(!clamped);
        // Zero maps to zero.
        assert_eq!(qz_inverse(0.0, 0.1), (0.0, false));
        // Beyond the bound 1/(2z) = 5 the inversion clamps.
        let (w, clamped) = qz_inverse(5.5, 0.1);
        assert!(clamped);
        assert_abs_diff_eq!(w, 1.0 / 11.0, epsilon = 1e-15);
        // Odd symmetry is bitwise.
        let (wp, _) = qz_inverse(0.37, 0.1);
        let (wn, _) = qz_inverse(-0.37, 0.1);
        assert_eq!(wp, -wn);
    }

    #[test]
    fn gevp_two_by_two_oracle() {
        // A = [[0, 1], [-1, 0]], B = (1 + z^2) I: beta = +/- i/(1+z^2), and
        // the recovered frequency is exactly +/- 1.
        let z = 0.1;
        let a = Mat::<f64>::from_fn(2, 2, |i, j| {
            if i == 0 && j == 1 {
                1.0
            } else if i == 1 && j == 0 {
                -1.0
            } else {
                0.0
            }
        });
        let b = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { 1.0 + z * z } else { 0.0 });
        let pairs = solve_gevp(a.as_ref(), b.as_ref()).unwrap();
        assert_eq!(pairs.beta.len(), 2);
        let expect = 1.0 / (1.0 + z * z);
        assert_abs_diff_eq!(pairs.beta[0].im, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(pairs.beta[1].im, -expect, epsilon = 1e-12);
        assert_eq!(pairs.beta[0].re, 0.0);
        assert_eq!(pairs.beta[1].re, 0.0);
        // Frequencies invert to +/- 1 within 1e-9.
        let (w0, c0) = qz_inverse(pairs.beta[0].im, z);
        let (w1, c1) = qz_inverse(pairs.beta[1].im, z);
        assert!(!c0 && !c1);
        assert_abs_diff_eq!(w0, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w1, -1.0, epsilon = 1e-9);
        // Residual check A c = beta B c.
        for j in 0..2 {
            for i in 0..2 {
                let mut lhs = c64::new(0.0, 0.0);
                let mut rhs = c64::new(0.0, 0.0);
                for k in 0..2 {
                    lhs += c64::new(a[(i, k)], 0.0) * pairs.c[(k, j)];
                    rhs += c64::new(b[(i, k)], 0.0) * pairs.c[(k, j)];
                }
                let r = lhs - pairs.beta[j] * rhs;
                assert!((r.re * r.re + r.im * r.im).sqrt() < 1e-12);
            }
        }
    }

    #[test]
    fn gevp_block_diagonal_frequencies_and_structure() {
        // Two rotation blocks with speeds 1/2 and 2 and B = I: the
        // spectrum is {+/- i/2, +/- 2i} with orthonormal eigenvectors.
        let mut a = Mat::<f64>::zeros(4, 4);
        a[(0, 1)] = 0.5;
        a[(1, 0)] = -0.5;
        a[(2, 3)] = 2.0;
        a[(3, 2)] = -2.0;
        let pairs = solve_gevp(a.as_ref(), identity(4).as_ref()).unwrap();
        let mut ims: Vec<f64> = pairs.beta.iter().map(|b| b.im).collect();
        ims.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ims[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ims[1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ims[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ims[3], 2.0, epsilon = 1e-12);
        // Construction order: descending theta, each +theta then -theta.
        assert_abs_diff_eq!(pairs.beta[0].im, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pairs.beta[1].im, -2.0, epsilon = 1e-12);
        // Conjugate columns are exact conjugates.
        for i in 0..4 {
            assert_eq!(pairs.c[(i, 0)].re, pairs.c[(i, 1)].re);
            assert_eq!(pairs.c[(i, 0)].im, -pairs.c[(i, 1)].im);
        }
    }

    #[test]
    fn gevp_rejects_indefinite_b() {
        let a = Mat::<f64>::zeros(2, 2);
        let b = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { if i == 0 { 1.0 } else { -1.0 } } else { 0.0 });
        assert!(matches!(
            solve_gevp(a.as_ref(), b.as_ref()),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn gevp_zero_matrix_gives_real_zero_modes() {
        let a = Mat::<f64>::zeros(3, 3);
        let b = identity(3);
        let pairs = solve_gevp(a.as_ref(), b.as_ref()).unwrap();
        assert_eq!(pairs.beta.len(), 3);
        for j in 0..3 {
            assert_eq!(pairs.beta[j], c64::new(0.0, 0.0));
            for i in 0..3 {
                assert_eq!(pairs.c[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn finalize_normalizes_sorts_and_pairs() {
        // v antisymmetric: d = (zI - v) c keeps the GEVP structure honest.
        let mut v = Mat::<f64>::zeros(4, 4);
        v[(0, 1)] = 0.5;
        v[(1, 0)] = -0.5;
        v[(2, 3)] = 2.0;
        v[(3, 2)] = -2.0;
        let z = 0.2;
        let lambda = [1.0, 0.9, 0.8, 0.7, 0.6];
        let problem = GeneratorProblem::new(v.clone(), &lambda, 0.0, z).unwrap();
        let pairs = solve_gevp(problem.a.as_ref(), problem.b.as_ref()).unwrap();
        let sol = finalize_solution(pairs, v.as_ref(), z, &lambda).unwrap();

        assert_eq!(sol.n_modes(), 4);
        // Energies ascending; conjugate pairs adjacent with equal energy
        // and mirrored eigenvalues.
        for w in sol.energy.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for p in 0..2 {
            let (a, b) = (2 * p, 2 * p + 1);
            assert_eq!(sol.energy[a], sol.energy[b]);
            assert_eq!(sol.beta[a].im, -sol.beta[b].im);
            assert_eq!(sol.omega[a], -sol.omega[b]);
            for i in 0..4 {
                assert_eq!(sol.dcoef[(i, a)].re, sol.dcoef[(i, b)].re);
                assert_eq!(sol.dcoef[(i, a)].im, -sol.dcoef[(i, b)].im);
            }
        }
        // dcoef columns are orthonormal.
        for a in 0..4 {
            for b in 0..4 {
                let mut dot = c64::new(0.0, 0.0);
                for i in 0..4 {
                    dot += sol.dcoef[(i, a)].conj() * sol.dcoef[(i, b)];
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot.re, expect, epsilon = 1e-10);
                assert_abs_diff_eq!(dot.im, 0.0, epsilon = 1e-10);
            }
        }
        // The slower rotation is smoother: its pair sorts first and its
        // frequency comes back near the oracles.
        assert_abs_diff_eq!(sol.beta[0].im.abs(), qz(0.5, z).abs(), epsilon = 1e-10);
        assert_abs_diff_eq!(sol.omega[0].abs(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.omega[2].abs(), 2.0, epsilon = 1e-9);
        assert!(sol.clamped_modes.is_empty());
    }

    #[test]
    fn finalize_flags_clamped_modes() {
        // beta = +/- 20i with z = 0.1 lies far beyond 1/(2z) = 5: both
        // modes clamp and the frequency is the branch value 1/(2*20).
        let mut v = Mat::<f64>::zeros(2, 2);
        v[(0, 1)] = 20.0;
        v[(1, 0)] = -20.0;
        let z = 0.1;
        let a = v.clone();
        let pairs = solve_gevp(a.as_ref(), identity(2).as_ref()).unwrap();
        let sol = finalize_solution(pairs, v.as_ref(), z, &[1.0, 0.9, 0.8]).unwrap();
        assert_eq!(sol.clamped_modes, vec![0, 1]);
        assert_abs_diff_eq!(sol.omega[0].abs(), 1.0 / 40.0, epsilon = 1e-14);
    }

    #[test]
    fn generator_problem_forms_are_exactly_structured() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let l = 8;
        let v = Mat::<f64>::from_fn(l, l, |_, _| rng.random_range(-1.0..1.0));
        let lambda: Vec<f64> = (0..=l).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let p = GeneratorProblem::new(v.clone(), &lambda, 1e-3, 0.3).unwrap();
        for j in 0..l {
            assert_eq!(p.a[(j, j)], 0.0);
            assert_eq!(p.v_anti[(j, j)], 0.0);
            for i in 0..l {
                assert_eq!(p.a[(i, j)], -p.a[(j, i)]);
                assert_eq!(p.v_anti[(i, j)], -p.v_anti[(j, i)]);
                assert_eq!(p.b[(i, j)], p.b[(j, i)]);
            }
        }
        // B is positive definite (Cholesky succeeds).
        assert!(p.b.llt(Side::Lower).is_ok());
        // Undamped A equals the antisymmetric part exactly when tau = 0.
        let p0 = GeneratorProblem::new(v.clone(), &lambda, 0.0, 0.3).unwrap();
        for j in 0..l {
            for i in 0..l {
                assert_eq!(p0.a[(i, j)], p0.v_anti[(i, j)]);
            }
        }
    }

    #[test]
    fn evolve_observable_preserves_norm() {
        let sol = {
            let mut v = Mat::<f64>::zeros(2, 2);
            v[(0, 1)] = 1.0;
            v[(1, 0)] = -1.0;
            let pairs = solve_gevp(v.clone().as_ref(), identity(2).as_ref()).unwrap();
            finalize_solution(pairs, v.as_ref(), 0.1, &[1.0, 0.9, 0.8]).unwrap()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..50 {
            let f: Vec<c64> = (0..2)
                .map(|_| c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let t: f64 = rng.random_range(-100.0..100.0);
            let g = sol.evolve_observable(&f, t).unwrap();
            let n0: f64 = f.iter().map(|x| x.re * x.re + x.im * x.im).sum::<f64>().sqrt();
            let n1: f64 = g.iter().map(|x| x.re * x.re + x.im * x.im).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n0, n1, epsilon = 2e-15 * n0);
        }
        // t = 0 is the identity map, exactly.
        let f = vec![c64::new(0.3, -0.4), c64::new(0.1, 0.9)];
        let g = sol.evolve_observable(&f, 0.0).unwrap();
        assert_eq!(f, g);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn qz_inverse_roundtrip(omega_abs in 0.2f64..100.0, sign in prop::bool::ANY) {
            // On the principal branch, away from the |omega| = z branch
            // point, the inversion is accurate to rounding.
            let z = 0.1;
            let omega = if sign { omega_abs } else { -omega_abs };
            let (back, clamped) = qz_inverse(qz(omega, z), z);
            prop_assert!(!clamped);
            prop_assert!((back - omega).abs() <= 1e-10 * omega.abs());
        }

        #[test]
        fn random_skew_problems_have_exact_structure(
            seed in 0u64..300,
            half in 1usize..4,
        ) {
            let n = 2 * half;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            // Random antisymmetric A (exact by construction).
            let mut a = Mat::<f64>::zeros(n, n);
            for j in 0..n {
                for i in 0..j {
                    let t = rng.random_range(-2.0..2.0);
                    a[(i, j)] = t;
                    a[(j, i)] = -t;
                }
            }
            // Random SPD B = M^T M + I, exactly symmetrized.
            let m = Mat::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut b = m.transpose() * &m;
            for j in 0..n {
                b[(j, j)] += 1.0;
                for i in 0..j {
                    let t = 0.5 * (b[(i, j)] + b[(j, i)]);
                    b[(i, j)] = t;
                    b[(j, i)] = t;
                }
            }
            let pairs = solve_gevp(a.as_ref(), b.as_ref()).unwrap();
            prop_assert_eq!(pairs.beta.len(), n);
            let norm_a = (0..n).map(|j| a.col(j).norm_l2()).fold(0.0f64, f64::max);
            let norm_b = (0..n).map(|j| b.col(j).norm_l2()).fold(0.0f64, f64::max);
            for j in 0..n {
                // Purely imaginary by construction.
                prop_assert_eq!(pairs.beta[j].re, 0.0);
                // Residual ||A c - beta B c|| <= tol (||A|| + |beta| ||B||) ||c||.
                let mut cnorm = 0.0f64;
                for i in 0..n {
                    let x = pairs.c[(i, j)];
                    cnorm += x.re * x.re + x.im * x.im;
                }
                let cnorm = cnorm.sqrt();
                let mut resid = 0.0f64;
                for i in 0..n {
                    let mut lhs = c64::new(0.0, 0.0);
                    let mut rhs = c64::new(0.0, 0.0);
                    for k in 0..n {
                        lhs += c64::new(a[(i, k)], 0.0) * pairs.c[(k, j)];
                        rhs += c64::new(b[(i, k)], 0.0) * pairs.c[(k, j)];
                    }
                    let r = lhs - pairs.beta[j] * rhs;
                    resid += r.re * r.re + r.im * r.im;
                }
                let bound = 1e-10 * (norm_a + pairs.beta[j].im.abs() * norm_b) * cnorm;
                prop_assert!(resid.sqrt() <= bound.max(1e-12));
            }
        }
    }
}
