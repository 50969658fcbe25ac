//! Variable-bandwidth Gaussian kernels with automatic bandwidth tuning.
//!
//! The kernel is `k(y, y') = exp(-|y - y'|^2 / (eps^2 rho(y) rho(y')))`,
//! where the bandwidth field `rho` is a negative power of a pilot kernel
//! density estimate, normalized to unit geometric mean over the training
//! data. Adapting the bandwidth to the sampling density keeps the kernel
//! well conditioned on attractors whose invariant measure is far from
//! uniform (and vanishes at fixed points).
//!
//! The global scale `eps` is tuned by maximizing the logarithmic derivative
//! `d log S / d log eps` of the kernel sum `S(eps) = (1/N^2) sum_mn k(y_m,
//! y_n)` over a geometric grid: the maximizer sits at the scale where the
//! kernel resolves the intrinsic geometry of the data, and the maximal slope
//! itself estimates the intrinsic dimension. The same criterion (with unit
//! bandwidth) selects the pilot density scale, so the procedure has no free
//! metric parameters.
//!
//! All pairwise reductions are parallelized over fixed-width column blocks
//! whose partial results are combined in block order, so results are
//! bit-reproducible regardless of thread count.

use crate::error::{Error, Result};
use faer::prelude::*;
use rayon::prelude::*;

/// Default exponent applied to the pilot density (`rho = rho_hat^x`, scaled
/// to unit geometric mean). `-1/2` balances bandwidth growth in sparse
/// regions against resolution in dense ones.
pub const DEFAULT_PILOT_EXPONENT: f64 = -0.5;

/// Default number of points in the bandwidth tuning grid.
pub const DEFAULT_GRID_POINTS: usize = 64;

/// Minimum allowed tuning grid size.
pub const MIN_GRID_POINTS: usize = 16;

/// Half-span of the tuning grid in `log2(eps^2)` around the median squared
/// distance.
const GRID_LOG2_HALF_SPAN: f64 = 20.0;

/// At most this many points enter the median-distance subsample.
const MEDIAN_SUBSAMPLE: usize = 2000;

/// Column-block width for deterministic parallel reductions.
const BLOCK: usize = 512;

/// Options controlling bandwidth fitting; the defaults reproduce the
/// standard variable-bandwidth construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningOptions {
    /// Exponent applied to the pilot density (default `-1/2`).
    pub pilot_exponent: f64,
    /// Fixed pilot density scale; `None` tunes it automatically with unit
    /// bandwidth.
    pub pilot_epsilon: Option<f64>,
    /// Number of grid points for the slope-maximization search.
    pub grid_points: usize,
}

impl Default for TuningOptions {
    fn default() -> Self {
        Self {
            pilot_exponent: DEFAULT_PILOT_EXPONENT,
            pilot_epsilon: None,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// One point of the bandwidth tuning curve (natural logarithms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningCurvePoint {
    /// `ln eps` at this grid point.
    pub log_epsilon: f64,
    /// `ln S(eps)`.
    pub log_s: f64,
    /// Finite-difference estimate of `d log S / d log eps`.
    pub slope: f64,
}

/// Result of a bandwidth scale search.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    /// The maximizing scale `eps` (not squared).
    pub epsilon: f64,
    /// The full tuning curve, one entry per grid point.
    pub curve: Vec<TuningCurvePoint>,
    /// True when the maximizer sits on the first or last grid point, which
    /// means the grid did not bracket the optimum and the scale is suspect.
    pub boundary: bool,
}

fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Validation("point dimension must be positive".into()));
    }
    if points.is_empty() || points.len() % dim != 0 {
        return Err(Error::Validation(format!(
            "point buffer length {} is not a positive multiple of dim {dim}",
            points.len()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite coordinate in point set".into()));
    }
    Ok(points.len() / dim)
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

/// Full symmetric matrix of pairwise squared distances; the diagonal is
/// exactly zero.
pub fn squared_distance_matrix(points: &[f64], dim: usize) -> Result<Mat<f64>> {
    let n = check_points(points, dim)?;
    let mut out = Mat::<f64>::zeros(n, n);
    out.as_mut()
        .par_col_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(ci, mut chunk)| {
            let col0 = ci * BLOCK;
            for j in 0..chunk.ncols() {
                let yn = &points[(col0 + j) * dim..(col0 + j + 1) * dim];
                for m in 0..n {
                    chunk[(m, j)] = sq_dist(&points[m * dim..(m + 1) * dim], yn);
                }
                chunk[(col0 + j, j)] = 0.0;
            }
        });
    Ok(out)
}

/// Median pairwise squared distance over a strided subsample of at most
/// `MEDIAN_SUBSAMPLE` points. Returns zero only when every subsampled pair
/// coincides.
pub fn median_squared_distance(points: &[f64], dim: usize) -> Result<f64> {
    let n = check_points(points, dim)?;
    if n < 2 {
        return Err(Error::Validation(
            "at least two points are needed for a median distance".into(),
        ));
    }
    let stride = n.div_ceil(MEDIAN_SUBSAMPLE);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(sq_dist(
                &points[i * dim..(i + 1) * dim],
                &points[j * dim..(j + 1) * dim],
            ));
        }
    }
    if dists.is_empty() {
        // Two-point stride edge case: fall back to the single pair.
        dists.push(sq_dist(&points[..dim], &points[dim..2 * dim]));
    }
    dists.sort_by(f64::total_cmp);
    Ok(dists[(dists.len() - 1) / 2])
}

/// Geometric grid of squared scales `med * 2^k`, `k` equally spaced on
/// `[-20, 20]`, for the slope-maximization search.
pub fn default_tuning_grid(median_sq: f64, grid_points: usize) -> Result<Vec<f64>> {
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::Validation(format!(
            "tuning grid needs at least {MIN_GRID_POINTS} points, got {grid_points}"
        )));
    }
    if !(median_sq.is_finite() && median_sq > 0.0) {
        return Err(Error::DegenerateData(format!(
            "median squared distance {median_sq} is not positive; the sample \
             points are (nearly) coincident"
        )));
    }
    Ok((0..grid_points)
        .map(|i| {
            let t = i as f64 / (grid_points - 1) as f64;
            median_sq * (GRID_LOG2_HALF_SPAN * (2.0 * t - 1.0)).exp2()
        })
        .collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < MIN_GRID_POINTS {
        return Err(Error::Validation(format!(
            "tuning grid needs at least {MIN_GRID_POINTS} points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Validation("tuning grid entries must be positive".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("tuning grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Kernel sum `S = (1/N^2) sum_mn exp(-u_mn / e2)` for a symmetric matrix
/// `u` of (possibly bandwidth-scaled) squared distances. Exploits symmetry:
/// only the upper triangle is read, and the zero diagonal contributes `N`
/// exactly, which keeps `S >= 1/N` strictly positive for every scale.
fn kernel_sum(u: MatRef<'_, f64>, e2: f64) -> f64 {
    let n = u.nrows();
    let n_chunks = n.div_ceil(BLOCK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let col0 = ci * BLOCK;
            let w = BLOCK.min(n - col0);
            let sub = u.submatrix(0, col0, n, w);
            let mut acc = 0.0;
            for j in 0..w {
                let nn = col0 + j;
                for m in 0..nn {
                    acc += (-sub[(m, j)] / e2).exp();
                }
            }
            acc
        })
        .collect();
    // Ordered sequential combine keeps the result thread-count independent.
    let off_diag: f64 = partials.iter().sum();
    (2.0 * off_diag + n as f64) / (n as f64 * n as f64)
}

/// Slope-maximization scale search on a precomputed matrix of squared
/// distances (raw for the pilot pass, bandwidth-scaled for the main pass).
///
/// `grid` contains squared scales `eps^2`, strictly increasing, at least
/// [`MIN_GRID_POINTS`] long. Slopes use centered differences in the
/// interior and one-sided differences at the ends; the returned `epsilon`
/// is the grid point with maximal slope.
pub fn tune_epsilon_scaled(u: MatRef<'_, f64>, grid: &[f64]) -> Result<TuningResult> {
    check_grid(grid)?;
    if u.nrows() != u.ncols() || u.nrows() < 2 {
        return Err(Error::Validation(format!(
            "distance matrix must be square with at least two rows, got {}x{}",
            u.nrows(),
            u.ncols()
        )));
    }
    let log_eps: Vec<f64> = grid.iter().map(|e2| 0.5 * e2.ln()).collect();
    let log_s: Vec<f64> = grid.iter().map(|e2| kernel_sum(u, *e2).ln()).collect();
    let k = grid.len();
    let slope_at = |i: usize| -> f64 {
        let (lo, hi) = match i {
            0 => (0, 1),
            i if i == k - 1 => (k - 2, k - 1),
            i => (i - 1, i + 1),
        };
        (log_s[hi] - log_s[lo]) / (log_eps[hi] - log_eps[lo])
    };
    let curve: Vec<TuningCurvePoint> = (0..k)
        .map(|i| TuningCurvePoint {
            log_epsilon: log_eps[i],
            log_s: log_s[i],
            slope: slope_at(i),
        })
        .collect();
    let best = (0..k)
        .max_by(|a, b| curve[*a].slope.total_cmp(&curve[*b].slope))
        .expect("grid is nonempty");
    Ok(TuningResult {
        epsilon: grid[best].sqrt(),
        curve,
        boundary: best == 0 || best == k - 1,
    })
}

/// Convenience wrapper around [`tune_epsilon_scaled`] that assembles the
/// distance matrix itself, optionally scaling by a bandwidth field.
pub fn tune_epsilon(
    points: &[f64],
    dim: usize,
    rho: Option<&[f64]>,
    grid: &[f64],
) -> Result<TuningResult> {
    let mut u = squared_distance_matrix(points, dim)?;
    if let Some(rho) = rho {
        scale_distances_inplace(u.as_mut(), rho)?;
    }
    tune_epsilon_scaled(u.as_ref(), grid)
}

/// Pilot kernel density estimate from a precomputed raw squared-distance
/// matrix: `rho_hat_m = (1/N) sum_n exp(-u_mn / pe^2)`, floored at `floor`.
pub fn pilot_density_from_dists(u: MatRef<'_, f64>, pilot_epsilon: f64, floor: f64) -> Vec<f64> {
    let n = u.nrows();
    let pe2 = pilot_epsilon * pilot_epsilon;
    let n_chunks = n.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let col0 = ci * BLOCK;
            let w = BLOCK.min(n - col0);
            let sub = u.submatrix(0, col0, n, w);
            let mut acc = vec![0.0; n];
            for j in 0..w {
                for m in 0..n {
                    acc[m] += (-sub[(m, j)] / pe2).exp();
                }
            }
            acc
        })
        .collect();
    let mut rho_hat = vec![0.0; n];
    for part in &partials {
        for (r, p) in rho_hat.iter_mut().zip(part) {
            *r += p;
        }
    }
    for r in &mut rho_hat {
        *r = (*r / n as f64).max(floor);
    }
    rho_hat
}

/// Pilot kernel density estimate at the sample points themselves.
pub fn pilot_density(points: &[f64], dim: usize, pilot_epsilon: f64) -> Result<Vec<f64>> {
    let n = check_points(points, dim)?;
    if !(pilot_epsilon.is_finite() && pilot_epsilon > 0.0) {
        return Err(Error::Validation(format!(
            "pilot scale {pilot_epsilon} must be positive"
        )));
    }
    let u = squared_distance_matrix(points, dim)?;
    Ok(pilot_density_from_dists(
        u.as_ref(),
        pilot_epsilon,
        density_floor(n),
    ))
}

/// Density floor: keeps bandwidths finite far from the data without ever
/// binding at the samples themselves (each sample sees itself, so its
/// density is at least `1/N`, far above the floor).
pub fn density_floor(n: usize) -> f64 {
    f64::EPSILON * n as f64
}

/// Raise a density estimate to `exponent` and normalize to unit geometric
/// mean. Returns the bandwidth values and the geometric-mean normalizer
/// `g` (so out-of-sample bandwidths are `rho_hat(y)^exponent / g`).
pub fn bandwidth_function(density: &[f64], exponent: f64) -> Result<(Vec<f64>, f64)> {
    if density.is_empty() {
        return Err(Error::Validation("empty density vector".into()));
    }
    if density.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Validation("density values must be positive".into()));
    }
    if !exponent.is_finite() {
        return Err(Error::Validation("bandwidth exponent must be finite".into()));
    }
    let mean_log: f64 =
        density.iter().map(|d| exponent * d.ln()).sum::<f64>() / density.len() as f64;
    let geo_scale = mean_log.exp();
    let rho = density.iter().map(|d| d.powf(exponent) / geo_scale).collect();
    Ok((rho, geo_scale))
}

/// Scale squared distances by the bandwidth product: `u_mn /= rho_m rho_n`.
/// The scaling factor is formed symmetrically, so a symmetric input stays
/// bitwise symmetric.
pub fn scale_distances_inplace(u: MatMut<'_, f64>, rho: &[f64]) -> Result<()> {
    let n = u.nrows();
    if u.ncols() != n || rho.len() != n {
        return Err(Error::Validation(format!(
            "bandwidth length {} does not match matrix size {n}",
            rho.len()
        )));
    }
    if rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Validation("bandwidths must be positive".into()));
    }
    let inv: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
    u.par_col_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(ci, mut chunk)| {
            let col0 = ci * BLOCK;
            for j in 0..chunk.ncols() {
                let f = inv[col0 + j];
                for m in 0..n {
                    chunk[(m, j)] *= inv[m] * f;
                }
            }
        });
    Ok(())
}

/// Map (scaled) squared distances to kernel values in place:
/// `u_mn <- exp(-u_mn / eps^2)`.
pub fn kernel_matrix_inplace(u: MatMut<'_, f64>, epsilon: f64) {
    let e2 = epsilon * epsilon;
    u.par_col_chunks_mut(BLOCK).for_each(|mut chunk| {
        for j in 0..chunk.ncols() {
            for m in 0..chunk.nrows() {
                chunk[(m, j)] = (-chunk[(m, j)] / e2).exp();
            }
        }
    });
}

/// One-shot kernel matrix `K_mn = exp(-|y_m - y_n|^2 / (eps^2 rho_m rho_n))`.
pub fn kernel_matrix(points: &[f64], dim: usize, epsilon: f64, rho: &[f64]) -> Result<Mat<f64>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Validation(format!("kernel scale {epsilon} must be positive")));
    }
    let mut u = squared_distance_matrix(points, dim)?;
    scale_distances_inplace(u.as_mut(), rho)?;
    kernel_matrix_inplace(u.as_mut(), epsilon);
    Ok(u)
}

/// Kernel value between two points with explicit bandwidths.
pub fn kernel_eval(y: &[f64], yp: &[f64], epsilon: f64, rho_y: f64, rho_yp: f64) -> f64 {
    (-sq_dist(y, yp) / (epsilon * epsilon * (rho_y * rho_yp))).exp()
}

/// Directional derivative of the kernel section `k(., y')` at `y` along `w`,
/// accounting for the variation of the bandwidth field:
///
/// `k'(y, y') = k * [-2 (y - y') . w / (eps^2 rho(y) rho(y'))
///              + |y - y'|^2 (grad rho(y) . w) / (eps^2 rho(y)^2 rho(y'))]`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_dir_derivative(
    y: &[f64],
    yp: &[f64],
    w: &[f64],
    epsilon: f64,
    rho_y: f64,
    rho_yp: f64,
    grad_rho_y: &[f64],
) -> f64 {
    let e2 = epsilon * epsilon;
    let d2 = sq_dist(y, yp);
    let k = (-d2 / (e2 * (rho_y * rho_yp))).exp();
    let mut dw = 0.0;
    let mut gw = 0.0;
    for i in 0..y.len() {
        dw += (y[i] - yp[i]) * w[i];
        gw += grad_rho_y[i] * w[i];
    }
    k * (-2.0 * dw / (e2 * rho_y * rho_yp) + d2 * gw / (e2 * rho_y * rho_y * rho_yp))
}

/// A fitted variable-bandwidth model: tuned scales, training bandwidths,
/// and everything needed to evaluate the bandwidth field (and its gradient)
/// at new points.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthModel {
    /// Tuned (or supplied) kernel scale.
    pub epsilon: f64,
    /// Tuned (or supplied) pilot density scale.
    pub pilot_epsilon: f64,
    /// Exponent applied to the pilot density.
    pub pilot_exponent: f64,
    /// Lower bound applied to density estimates.
    pub density_floor: f64,
    /// Geometric-mean normalizer of `rho_hat^exponent` over training data.
    pub geo_scale: f64,
    /// Bandwidth at each training point (unit geometric mean).
    pub rho: Vec<f64>,
    /// Tuning curve of the main pass.
    pub curve: Vec<TuningCurvePoint>,
    /// Tuning curve of the pilot pass (empty if the pilot scale was fixed).
    pub pilot_curve: Vec<TuningCurvePoint>,
    /// Main-pass maximizer fell on the grid boundary.
    pub boundary_warning: bool,
    /// Pilot-pass maximizer fell on the grid boundary.
    pub pilot_boundary_warning: bool,
}

impl BandwidthModel {
    /// Fit the bandwidth model on training points: tune the pilot scale
    /// (unless fixed), estimate the pilot density, form the bandwidth field,
    /// then tune the kernel scale against bandwidth-scaled distances.
    pub fn fit(points: &[f64], dim: usize, opts: &TuningOptions) -> Result<Self> {
        let n = check_points(points, dim)?;
        if n < 2 {
            return Err(Error::Validation(
                "bandwidth fitting needs at least two points".into(),
            ));
        }
        if let Some(pe) = opts.pilot_epsilon {
            if !(pe.is_finite() && pe > 0.0) {
                return Err(Error::Validation(format!(
                    "pilot scale override {pe} must be positive"
                )));
            }
        }
        let floor = density_floor(n);
        let mut u = squared_distance_matrix(points, dim)?;

        // Pilot pass: unit bandwidth, raw distances.
        let (pilot_epsilon, pilot_curve, pilot_boundary) = match opts.pilot_epsilon {
            Some(pe) => (pe, Vec::new(), false),
            None => {
                let med = median_squared_distance(points, dim)?;
                let grid = default_tuning_grid(med, opts.grid_points)?;
                let t = tune_epsilon_scaled(u.as_ref(), &grid)?;
                (t.epsilon, t.curve, t.boundary)
            }
        };
        let rho_hat = pilot_density_from_dists(u.as_ref(), pilot_epsilon, floor);
        let (rho, geo_scale) = bandwidth_function(&rho_hat, opts.pilot_exponent)?;

        // Main pass: distances scaled by the bandwidth field.
        scale_distances_inplace(u.as_mut(), &rho)?;
        let med = median_of_upper_triangle(u.as_ref());
        let grid = default_tuning_grid(med, opts.grid_points)?;
        let tuned = tune_epsilon_scaled(u.as_ref(), &grid)?;

        Ok(Self {
            epsilon: tuned.epsilon,
            pilot_epsilon,
            pilot_exponent: opts.pilot_exponent,
            density_floor: floor,
            geo_scale,
            rho,
            curve: tuned.curve,
            pilot_curve,
            boundary_warning: tuned.boundary,
            pilot_boundary_warning: pilot_boundary,
        })
    }

    /// Pilot density estimate at an arbitrary point (floored).
    pub fn density_at(&self, points: &[f64], dim: usize, y: &[f64]) -> f64 {
        let n = points.len() / dim;
        let pe2 = self.pilot_epsilon * self.pilot_epsilon;
        let mut s = 0.0;
        for m in 0..n {
            s += (-sq_dist(y, &points[m * dim..(m + 1) * dim]) / pe2).exp();
        }
        (s / n as f64).max(self.density_floor)
    }

    /// Bandwidth `rho(y) = rho_hat(y)^exponent / geo_scale` at an arbitrary
    /// point.
    pub fn rho_at(&self, points: &[f64], dim: usize, y: &[f64]) -> f64 {
        self.density_at(points, dim, y).powf(self.pilot_exponent) / self.geo_scale
    }

    /// Bandwidth and its gradient at an arbitrary point. At the density
    /// floor the field is locally constant, so the gradient is zero there.
    pub fn rho_and_grad_at(&self, points: &[f64], dim: usize, y: &[f64]) -> (f64, Vec<f64>) {
        let n = points.len() / dim;
        let pe2 = self.pilot_epsilon * self.pilot_epsilon;
        let mut s = 0.0;
        let mut grad_hat = vec![0.0; dim];
        for m in 0..n {
            let ym = &points[m * dim..(m + 1) * dim];
            let k = (-sq_dist(y, ym) / pe2).exp();
            s += k;
            for i in 0..dim {
                grad_hat[i] += k * (-2.0 * (y[i] - ym[i]) / pe2);
            }
        }
        let rho_hat = s / n as f64;
        if rho_hat <= self.density_floor {
            let rho = self.density_floor.powf(self.pilot_exponent) / self.geo_scale;
            return (rho, vec![0.0; dim]);
        }
        let rho = rho_hat.powf(self.pilot_exponent) / self.geo_scale;
        let coeff = self.pilot_exponent * rho_hat.powf(self.pilot_exponent - 1.0)
            / (self.geo_scale * n as f64);
        for g in &mut grad_hat {
            *g *= coeff;
        }
        (rho, grad_hat)
    }

    /// Bandwidth gradients at every training point, row-major `n x dim`.
    /// Parallel over points; each point's reduction is sequential, so the
    /// result is deterministic.
    pub fn rho_grad_train(&self, points: &[f64], dim: usize) -> Vec<f64> {
        let n = points.len() / dim;
        let mut out = vec![0.0; n * dim];
        out.par_chunks_mut(dim)
            .enumerate()
            .for_each(|(m, row)| {
                let (_, grad) = self.rho_and_grad_at(points, dim, &points[m * dim..(m + 1) * dim]);
                row.copy_from_slice(&grad);
            });
        out
    }
}

/// Median of the strictly-upper-triangle entries of a symmetric matrix,
/// subsampled with the same stride policy as [`median_squared_distance`].
fn median_of_upper_triangle(u: MatRef<'_, f64>) -> f64 {
    let n = u.nrows();
    let stride = n.div_ceil(MEDIAN_SUBSAMPLE);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut vals = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            vals.push(u[(i, j)]);
        }
    }
    if vals.is_empty() {
        vals.push(u[(0, n - 1)]);
    }
    vals.sort_by(f64::total_cmp);
    vals[(vals.len() - 1) / 2]
}
