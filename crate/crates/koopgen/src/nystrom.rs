//! Out-of-sample evaluation of the kernel eigenbasis and its spectra.
//!
//! Training produces eigenfunction values only at the sample points. The
//! Nystrom extension turns them into functions defined anywhere on the
//! data manifold, using nothing but kernel sections against the training
//! set:
//!
//! `phi_j(y) = (1 / (sigma_j N)) sum_n k(y, x_n) / (d(y) sqrt(q_n)) gamma_j(x_n)`
//!
//! with `d(y) = (1/N) sum_n k(y, x_n)` the kernel degree of `y`. At a
//! training point this reproduces the in-sample eigenvector entry exactly
//! (in exact arithmetic), so the extension is consistent by construction.
//!
//! Because the extension is a closed-form function of `y`, it can be
//! differentiated analytically: the generator's action on an extended
//! eigenfunction at `y` along a velocity `w` uses the same directional
//! kernel derivative as the training-side generator matrix. This gives a
//! pointwise identity `d/dt zeta(flow_t(y))|_0 = (V zeta)(y)` that holds up
//! to quadrature error, a strong self-consistency check on the whole
//! pipeline.
//!
//! The module also provides the empirical autocorrelation used to judge
//! how coherently a mode oscillates over held-out trajectories.

use crate::basis::KernelBasis;
use crate::dynamics::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_dir_derivative, kernel_eval, BandwidthModel};
use faer::prelude::*;

/// Test-point block width for the batched evaluation path.
const BLOCK: usize = 512;

/// Nystrom evaluator: everything needed to extend the kernel eigenbasis
/// (and functions expanded in it) beyond the training samples.
#[derive(Debug, Clone)]
pub struct Evaluator {
    points: Vec<f64>,
    dim: usize,
    bw: BandwidthModel,
    gamma: Mat<f64>,
    sigma: Vec<f64>,
    inv_sqrt_q: Vec<f64>,
}

/// One eigenfunction evaluated along a trajectory.
#[derive(Debug, Clone)]
pub struct EigenTimeSeries {
    /// Column of the coefficient matrix this series was built from.
    pub mode: usize,
    /// Sample times of the underlying trajectory.
    pub times: Vec<f64>,
    /// Eigenfunction values along the trajectory.
    pub values: Vec<c64>,
}

impl Evaluator {
    /// Capture the training set, bandwidth model, and basis spectra.
    pub fn new(
        dataset: &TrajectoryDataset,
        bw: &BandwidthModel,
        basis: &KernelBasis,
    ) -> Result<Self> {
        Self::from_parts(
            dataset.points().to_vec(),
            dataset.data_dim(),
            bw.clone(),
            basis.gamma.clone(),
            basis.sigma.clone(),
            &basis.q,
        )
    }

    /// Assemble an evaluator from stored artifacts.
    ///
    /// `points` is the row-major `n x dim` training set in data space;
    /// `gamma`, `sigma`, and `q` are the corresponding basis outputs.
    pub fn from_parts(
        points: Vec<f64>,
        dim: usize,
        bw: BandwidthModel,
        gamma: Mat<f64>,
        sigma: Vec<f64>,
        q: &[f64],
    ) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Validation(
                "training points must be a nonempty n x dim row-major buffer".into(),
            ));
        }
        let n = points.len() / dim;
        if gamma.nrows() != n || q.len() != n || bw.rho.len() != n {
            return Err(Error::Validation(format!(
                "basis artifacts do not match the {n}-sample training set"
            )));
        }
        if gamma.ncols() != sigma.len() || sigma.is_empty() {
            return Err(Error::Validation(
                "gamma and sigma disagree on the number of basis functions".into(),
            ));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation("singular values must be positive".into()));
        }
        if q.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(
                "bistochastic weights q must be positive".into(),
            ));
        }
        let inv_sqrt_q = q.iter().map(|v| 1.0 / v.sqrt()).collect();
        Ok(Self { points, dim, bw, gamma, sigma, inv_sqrt_q })
    }

    /// Number of training samples.
    pub fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    /// Data-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis functions (constant included).
    pub fn l_prime(&self) -> usize {
        self.sigma.len()
    }

    #[inline]
    fn point(&self, m: usize) -> &[f64] {
        &self.points[m * self.dim..(m + 1) * self.dim]
    }

    fn check_point(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "evaluation point must be a finite {}-vector",
                self.dim
            )));
        }
        Ok(())
    }

    /// Kernel sections `k(y, x_n)` against the whole training set, plus
    /// the kernel degree `d(y)`.
    fn sections(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.n();
        let rho_y = self.bw.rho_at(&self.points, self.dim, y);
        let mut k = vec![0.0; n];
        let mut degree = 0.0;
        for (m, kv) in k.iter_mut().enumerate() {
            *kv = kernel_eval(y, self.point(m), self.bw.epsilon, rho_y, self.bw.rho[m]);
            degree += *kv;
        }
        degree /= n as f64;
        if !(degree.is_finite() && degree > 0.0) {
            return Err(Error::Numerical(
                "kernel degree underflowed: the evaluation point is too far \
                 from the training data at this bandwidth"
                    .into(),
            ));
        }
        Ok((k, degree))
    }

    /// Kernel degree `d(y) = (1/N) sum_n k(y, x_n)` of an arbitrary point.
    pub fn kernel_degree_at(&self, y: &[f64]) -> Result<f64> {
        self.check_point(y)?;
        Ok(self.sections(y)?.1)
    }

    /// All extended basis functions at `y`: index 0 is the constant (its
    /// value is 1 up to sampling error), then the nonconstant functions.
    pub fn basis_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let n = self.n();
        let (k, degree) = self.sections(y)?;
        let f = 1.0 / (degree * n as f64);
        let mut out = vec![0.0; self.l_prime()];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for m in 0..n {
                s += k[m] * f * self.inv_sqrt_q[m] * self.gamma[(m, j)];
            }
            *o = s / self.sigma[j];
        }
        Ok(out)
    }

    /// The generator applied to every extended basis function at `y`,
    /// along the data-space velocity `w`:
    ///
    /// `(V phi_j)(y) = (1 / (sigma_j N)) sum_n khat'(y, x_n) gamma_j(x_n)`
    ///
    /// with `khat'(y, x_n) = (k'(y, x_n) - k(y, x_n) d'(y)/d(y)) / (d(y)
    /// sqrt(q_n))`, the directional derivative of the normalized section.
    pub fn basis_action_at(&self, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        if w.len() != self.dim || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "velocity must be a finite {}-vector",
                self.dim
            )));
        }
        let n = self.n();
        let (rho_y, grad_rho_y) = self.bw.rho_and_grad_at(&self.points, self.dim, y);
        let mut k = vec![0.0; n];
        let mut kp = vec![0.0; n];
        let mut degree = 0.0;
        let mut dprime = 0.0;
        for m in 0..n {
            let xm = self.point(m);
            k[m] = kernel_eval(y, xm, self.bw.epsilon, rho_y, self.bw.rho[m]);
            kp[m] = kernel_dir_derivative(
                y,
                xm,
                w,
                self.bw.epsilon,
                rho_y,
                self.bw.rho[m],
                &grad_rho_y,
            );
            degree += k[m];
            dprime += kp[m];
        }
        degree /= n as f64;
        dprime /= n as f64;
        if !(degree.is_finite() && degree > 0.0) {
            return Err(Error::Numerical(
                "kernel degree underflowed: the evaluation point is too far \
                 from the training data at this bandwidth"
                    .into(),
            ));
        }
        let ratio = dprime / degree;
        let f = 1.0 / (degree * n as f64);
        let mut out = vec![0.0; self.l_prime()];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for m in 0..n {
                s += (kp[m] - k[m] * ratio) * f * self.inv_sqrt_q[m] * self.gamma[(m, j)];
            }
            *o = s / self.sigma[j];
        }
        Ok(out)
    }

    /// Evaluate a function expanded in the nonconstant basis,
    /// `zeta(y) = sum_i coeffs[i] phi_{i+1}(y)`, at an arbitrary point.
    pub fn eigenfunction_at(&self, coeffs: &[c64], y: &[f64]) -> Result<c64> {
        let phi = self.basis_at(y)?;
        self.expand(coeffs, &phi[1..])
    }

    /// The generator applied to an expanded function at `y` along `w`.
    pub fn generator_action_at(&self, coeffs: &[c64], y: &[f64], w: &[f64]) -> Result<c64> {
        let vphi = self.basis_action_at(y, w)?;
        self.expand(coeffs, &vphi[1..])
    }

    fn expand(&self, coeffs: &[c64], values: &[f64]) -> Result<c64> {
        if coeffs.len() != values.len() {
            return Err(Error::Validation(format!(
                "expected {} expansion coefficients, got {}",
                values.len(),
                coeffs.len()
            )));
        }
        let mut acc = c64::new(0.0, 0.0);
        for (c, v) in coeffs.iter().zip(values) {
            acc += c64::new(c.re * v, c.im * v);
        }
        Ok(acc)
    }

    /// Evaluate selected coefficient columns along a held-out trajectory.
    ///
    /// `dcoef` holds expansion coefficients in the nonconstant basis (one
    /// column per mode, `l_prime - 1` rows); `modes` are column indices.
    /// Evaluation is batched over trajectory blocks but matches the
    /// single-point path to rounding.
    pub fn eigenfunction_timeseries(
        &self,
        test: &TrajectoryDataset,
        dcoef: MatRef<'_, c64>,
        modes: &[usize],
    ) -> Result<Vec<EigenTimeSeries>> {
        if test.data_dim() != self.dim {
            return Err(Error::Validation(format!(
                "trajectory lives in dimension {}, evaluator in {}",
                test.data_dim(),
                self.dim
            )));
        }
        let lp = self.l_prime();
        if dcoef.nrows() != lp - 1 {
            return Err(Error::Validation(format!(
                "coefficient matrix has {} rows, expected {}",
                dcoef.nrows(),
                lp - 1
            )));
        }
        for &m in modes {
            if m >= dcoef.ncols() {
                return Err(Error::Validation(format!(
                    "mode index {m} out of range for {} columns",
                    dcoef.ncols()
                )));
            }
        }
        let n = self.n();
        let nt = test.n();
        let times: Vec<f64> = (0..nt).map(|i| test.time(i)).collect();
        let mut out: Vec<EigenTimeSeries> = modes
            .iter()
            .map(|&m| EigenTimeSeries {
                mode: m,
                times: times.clone(),
                values: Vec::with_capacity(nt),
            })
            .collect();

        let mut start = 0;
        while start < nt {
            let bsz = BLOCK.min(nt - start);
            let mut wmat = Mat::<f64>::zeros(bsz, n);
            for b in 0..bsz {
                let y = test.point(start + b);
                self.check_point(y)?;
                let (k, degree) = self.sections(y)?;
                let f = 1.0 / (degree * n as f64);
                for m in 0..n {
                    wmat[(b, m)] = k[m] * f * self.inv_sqrt_q[m];
                }
            }
            let mut phi_blk = &wmat * &self.gamma;
            for j in 0..lp {
                let inv = 1.0 / self.sigma[j];
                for b in 0..bsz {
                    phi_blk[(b, j)] *= inv;
                }
            }
            for (oi, &m) in modes.iter().enumerate() {
                for b in 0..bsz {
                    let mut val = c64::new(0.0, 0.0);
                    for i in 0..lp - 1 {
                        let p = phi_blk[(b, i + 1)];
                        let dc = dcoef[(i, m)];
                        val += c64::new(dc.re * p, dc.im * p);
                    }
                    out[oi].values.push(val);
                }
            }
            start += bsz;
        }
        Ok(out)
    }
}

/// Empirical autocorrelation of a complex time series at lags
/// `0..=max_lag_steps`:
///
/// `C(k) = sum_{t < T-k} conj(v_t) v_{t+k} / sum_{t < T-k} |v_t|^2`
///
/// Both sums run over the pairs actually available at lag `k`, so `C(0)`
/// is exactly 1 and a pure phase `v_t = exp(i omega t dt)` reproduces
/// `exp(i omega k dt)` to rounding. The series must be longer than the
/// largest lag and must not be identically zero on any window used.
pub fn autocorrelation(values: &[c64], max_lag_steps: usize) -> Result<Vec<c64>> {
    if values.len() <= max_lag_steps {
        return Err(Error::Validation(format!(
            "series of length {} cannot support lag {max_lag_steps}",
            values.len()
        )));
    }
    if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Validation("non-finite time series value".into()));
    }
    let mut out = Vec::with_capacity(max_lag_steps + 1);
    for k in 0..=max_lag_steps {
        let mut num = c64::new(0.0, 0.0);
        let mut den = 0.0;
        for t in 0..values.len() - k {
            let a = values[t];
            let b = values[t + k];
            num += a.conj() * b;
            den += a.re * a.re + a.im * a.im;
        }
        if den <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "autocorrelation window at lag {k} has zero power"
            )));
        }
        out.push(c64::new(num.re / den, num.im / den));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{compute_basis, normalize_bistochastic};
    use crate::dynamics::{generate_dataset, FlowSystem};
    use crate::kernels::{kernel_matrix, TuningOptions};

    /// Small torus training set with a fitted bandwidth model and basis.
    fn torus_fixture(
        n: usize,
        l: usize,
    ) -> (FlowSystem, TrajectoryDataset, BandwidthModel, KernelBasis) {
        let system = FlowSystem::torus_rotation_default();
        let data = generate_dataset(&system, &[0.3, 1.1], n, 0.37, 0, 1).unwrap();
        let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())
            .unwrap();
        let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho).unwrap();
        let bi = normalize_bistochastic(kmat.as_ref()).unwrap();
        let basis = compute_basis(&bi, l).unwrap();
        (system, data, bw, basis)
    }

    #[test]
    fn in_sample_evaluation_reproduces_eigenvectors() {
        let (_system, data, bw, basis) = torus_fixture(300, 10);
        let ev = Evaluator::new(&data, &bw, &basis).unwrap();
        // The Nystrom formula collapses to the in-sample identity
        // (1/N) khat gamma = sigma phi at training points.
        for m in [0usize, 7, 150, 299] {
            let phi = ev.basis_at(data.point(m)).unwrap();
            for j in 0..basis.l_prime() {
                let expect = basis.phi[(m, j)];
                assert!(
                    (phi[j] - expect).abs() <= 1e-8 * expect.abs().max(1.0),
                    "phi_{j}(x_{m}) = {} vs in-sample {expect}",
                    phi[j]
                );
            }
        }
        // The constant function extends to 1 everywhere on the support.
        let phi = ev.basis_at(&[0.9, -0.1, 0.2, 0.97]).unwrap();
        assert!((phi[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batched_timeseries_matches_single_point_path() {
        let (system, data, bw, basis) = torus_fixture(240, 8);
        let ev = Evaluator::new(&data, &bw, &basis).unwrap();
        let test = generate_dataset(&system, &[2.0, 0.5], 40, 0.11, 0, 1).unwrap();
        let l = basis.l();
        // Two synthetic coefficient columns exercising real and imaginary
        // parts.
        let dcoef = Mat::<c64>::from_fn(l, 2, |i, j| {
            c64::new(
                ((i + 1) as f64).recip(),
                if j == 0 { 0.0 } else { 0.1 * i as f64 },
            )
        });
        let series = ev
            .eigenfunction_timeseries(&test, dcoef.as_ref(), &[0, 1])
            .unwrap();
        assert_eq!(series.len(), 2);
        for s in &series {
            assert_eq!(s.values.len(), 40);
            assert_eq!(s.times[0], 0.0);
        }
        for (oi, s) in series.iter().enumerate() {
            let coeffs: Vec<c64> = (0..l).map(|i| dcoef[(i, oi)]).collect();
            for t in [0usize, 13, 39] {
                let direct = ev.eigenfunction_at(&coeffs, test.point(t)).unwrap();
                let d = s.values[t] - direct;
                assert!((d.re * d.re + d.im * d.im).sqrt() < 1e-12);
            }
        }
    }

    #[test]
    fn generator_action_matches_flow_derivative() {
        // Central difference of zeta along the exact torus flow vs the
        // analytic generator action, at off-sample points.
        let (system, data, bw, basis) = torus_fixture(400, 8);
        let ev = Evaluator::new(&data, &bw, &basis).unwrap();
        let l = basis.l();
        let coeffs: Vec<c64> = (0..l)
            .map(|i| c64::new(1.0 / (i + 1) as f64, 0.3 - 0.05 * i as f64))
            .collect();
        let h = 1e-4;
        for x in [[0.4, 1.9], [3.0, 5.5], [5.9, 0.1]] {
            let y = system.embed(&x).unwrap();
            let w = system.pushforward_vector(&x).unwrap();
            let fwd = system.embed(&system.exact_flow(&x, h).unwrap()).unwrap();
            let bwd = system.embed(&system.exact_flow(&x, -h).unwrap()).unwrap();
            let zf = ev.eigenfunction_at(&coeffs, &fwd).unwrap();
            let zb = ev.eigenfunction_at(&coeffs, &bwd).unwrap();
            let fd = c64::new((zf.re - zb.re) / (2.0 * h), (zf.im - zb.im) / (2.0 * h));
            let an = ev.generator_action_at(&coeffs, &y, &w).unwrap();
            let err = {
                let d = fd - an;
                (d.re * d.re + d.im * d.im).sqrt()
            };
            let scale = (an.re * an.re + an.im * an.im).sqrt().max(1e-3);
            assert!(
                err <= 1e-4 * scale.max(1.0),
                "flow derivative {fd:?} vs generator action {an:?}"
            );
        }
    }

    #[test]
    fn from_parts_roundtrips_bitwise() {
        let (_system, data, bw, basis) = torus_fixture(120, 6);
        let ev = Evaluator::new(&data, &bw, &basis).unwrap();
        let rebuilt = Evaluator::from_parts(
            data.points().to_vec(),
            data.data_dim(),
            bw.clone(),
            basis.gamma.clone(),
            basis.sigma.clone(),
            &basis.q,
        )
        .unwrap();
        let y = [0.3, 0.7, -0.2, 0.8];
        let a = ev.basis_at(&y).unwrap();
        let b = rebuilt.basis_at(&y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluator_validates_artifacts() {
        let (_system, data, bw, basis) = torus_fixture(60, 4);
        // Mismatched q length.
        let err = Evaluator::from_parts(
            data.points().to_vec(),
            data.data_dim(),
            bw.clone(),
            basis.gamma.clone(),
            basis.sigma.clone(),
            &basis.q[1..],
        );
        assert!(matches!(err, Err(Error::Validation(_))));
        // Wrong point dimension at evaluation time.
        let ev = Evaluator::new(&data, &bw, &basis).unwrap();
        assert!(matches!(ev.basis_at(&[1.0, 2.0]), Err(Error::Validation(_))));
        let coeffs = vec![c64::new(1.0, 0.0); basis.l()];
        assert!(matches!(
            ev.generator_action_at(&coeffs, &[0.1, 0.2, 0.3, 0.4], &[1.0, 0.0]),
            Err(Error::Validation(_))
        ));
        // Coefficient count must match the nonconstant basis.
        assert!(matches!(
            ev.eigenfunction_at(&coeffs[1..], &[0.1, 0.2, 0.3, 0.4]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn autocorrelation_normalizes_and_tracks_phase() {
        // C(0) is exactly 1 for any nonzero series.
        let vals: Vec<c64> = (0..200)
            .map(|i| c64::new((i as f64 * 0.1).cos(), (i as f64 * 0.17).sin() * 0.5))
            .collect();
        let c = autocorrelation(&vals, 20).unwrap();
        assert_eq!(c.len(), 21);
        assert_eq!(c[0].re, 1.0);
        assert_eq!(c[0].im, 0.0);

        // A pure phase exp(i omega t) autocorrelates to exp(i omega k dt).
        let omega = 0.7;
        let dt = 0.05;
        let phase: Vec<c64> = (0..400)
            .map(|i| {
                let (s, c) = (omega * dt * i as f64).sin_cos();
                c64::new(c, s)
            })
            .collect();
        let c = autocorrelation(&phase, 50).unwrap();
        for (k, ck) in c.iter().enumerate() {
            let (s, co) = (omega * dt * k as f64).sin_cos();
            let d = *ck - c64::new(co, s);
            assert!(
                (d.re * d.re + d.im * d.im).sqrt() <= 1e-12,
                "lag {k}: {ck:?}"
            );
        }

        // Unit modulus is preserved for pure phases.
        for ck in &c {
            assert!(((ck.re * ck.re + ck.im * ck.im).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn autocorrelation_validates_input() {
        let vals = vec![c64::new(1.0, 0.0); 10];
        assert!(matches!(
            autocorrelation(&vals, 10),
            Err(Error::Validation(_))
        ));
        assert!(autocorrelation(&vals, 9).is_ok());
        let zeros = vec![c64::new(0.0, 0.0); 10];
        assert!(matches!(
            autocorrelation(&zeros, 3),
            Err(Error::DegenerateData(_))
        ));
    }
}
