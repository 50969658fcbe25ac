//! Artifact serialization: CSV/JSON exports, reloads, and content hashes.
//!
//! Every pipeline stage communicates through files in the run directory,
//! so each stage is independently runnable and cacheable. Numbers are
//! written with Rust's shortest-roundtrip float formatting and parsed
//! back with `f64::from_str`, which makes CSV round-trips bitwise exact —
//! the property the caching layer's content hashes rely on.

use crate::basis::KernelBasis;
use crate::dynamics::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::kernels::{BandwidthModel, TuningCurvePoint};
use crate::nystrom::EigenTimeSeries;
use faer::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read as _};
use std::path::{Path, PathBuf};

/// Training trajectory samples.
pub const DATASET_CSV: &str = "dataset.csv";
/// Training trajectory sidecar metadata.
pub const DATASET_META: &str = "dataset.json";
/// Held-out test trajectory samples.
pub const TEST_DATASET_CSV: &str = "test_dataset.csv";
/// Test trajectory sidecar metadata.
pub const TEST_DATASET_META: &str = "test_dataset.json";
/// Fitted bandwidth model scalars.
pub const BANDWIDTH_META: &str = "bandwidth.json";
/// Main tuning curve (log scale, log kernel sum, slope).
pub const BANDWIDTH_CURVE_CSV: &str = "bandwidth_curve.csv";
/// Pilot tuning curve.
pub const PILOT_CURVE_CSV: &str = "pilot_curve.csv";
/// Per-sample bandwidth values.
pub const RHO_CSV: &str = "rho_train.csv";
/// Basis stage metadata.
pub const BASIS_META: &str = "basis.json";
/// Kernel degrees `d`.
pub const BASIS_D_CSV: &str = "basis_d.csv";
/// Bistochastic weights `q`.
pub const BASIS_Q_CSV: &str = "basis_q.csv";
/// Markov eigenvalues (constant included).
pub const BASIS_LAMBDA_CSV: &str = "basis_lambda.csv";
/// In-sample eigenvectors, one column per basis function.
pub const BASIS_PHI_CSV: &str = "basis_phi.csv";
/// Dual vectors, one column per basis function.
pub const BASIS_GAMMA_CSV: &str = "basis_gamma.csv";
/// Generator spectrum table.
pub const EIGS_CSV: &str = "eigs.csv";
/// Eigenvalue stage metadata.
pub const EIGS_META: &str = "eigs.json";
/// Normalized eigenfunction coefficients (complex, one column pair per mode).
pub const DCOEF_CSV: &str = "dcoef.csv";
/// Raw generator matrix (with `dump_matrices`).
pub const V_MATRIX_CSV: &str = "v_matrix.csv";
/// Damped antisymmetric form (with `dump_matrices`).
pub const A_MATRIX_CSV: &str = "a_matrix.csv";
/// Resolvent Gram matrix (with `dump_matrices`).
pub const B_MATRIX_CSV: &str = "b_matrix.csv";
/// Raw eigenvector coefficients (with `dump_matrices`).
pub const CCOEF_CSV: &str = "ccoef.csv";
/// Eigenfunctions evaluated on the training trajectory.
pub const ZETA_TRAIN_CSV: &str = "zeta_train.csv";
/// Eigenfunctions evaluated on the test trajectory.
pub const ZETA_TEST_CSV: &str = "zeta_test.csv";
/// Autocorrelations of the evaluated eigenfunctions.
pub const AUTOCORR_CSV: &str = "autocorr.csv";
/// Run manifest (config snapshot, hashes, timings, warnings).
pub const MANIFEST_JSON: &str = "manifest.json";
/// Exclusive-writer lock file.
pub const LOCK_FILE: &str = ".lock";
/// Marker left behind when a stage fails partway.
pub const FAILED_MARKER: &str = "FAILED";

/// Sidecar metadata for a stored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// System name the trajectory was integrated from.
    pub system: String,
    /// System parameters by name.
    pub params: BTreeMap<String, f64>,
    /// Number of retained samples.
    pub n: usize,
    /// Sampling interval.
    pub dt: f64,
    /// Leading samples discarded.
    pub spinup: usize,
    /// RNG seed of the initial condition.
    pub seed: u64,
    /// Integrator substeps per sampling interval.
    pub substeps: usize,
    /// State-space dimension.
    pub state_dim: usize,
    /// Observation-space dimension.
    pub data_dim: usize,
}

/// Scalars of a fitted bandwidth model (the curves and per-sample values
/// live in their own CSVs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMeta {
    /// Tuned kernel scale.
    pub epsilon: f64,
    /// Pilot density kernel scale.
    pub pilot_epsilon: f64,
    /// Variable-bandwidth exponent.
    pub pilot_exponent: f64,
    /// Density floor applied to the pilot estimate.
    pub density_floor: f64,
    /// Geometric-mean normalizer of the bandwidth function.
    pub geo_scale: f64,
    /// Whether the main tuning curve peaked at a grid boundary.
    pub boundary_warning: bool,
    /// Whether the pilot tuning curve peaked at a grid boundary.
    pub pilot_boundary_warning: bool,
    /// Number of training samples the model was fitted on.
    pub n: usize,
    /// Content hash of the training dataset.
    pub dataset_hash: String,
}

/// Basis stage metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    /// Kernel scale the basis was computed with.
    pub epsilon: f64,
    /// Pilot density kernel scale.
    pub pilot_epsilon: f64,
    /// Variable-bandwidth exponent.
    pub pilot_exponent: f64,
    /// Number of training samples.
    pub n: usize,
    /// Number of basis functions, constant included.
    pub l_prime: usize,
    /// Markov row-sum residual `max_m |sum_n P_mn - 1|`.
    pub row_sum_residual: f64,
    /// Content hash of the training dataset.
    pub dataset_hash: String,
    /// Content hash of the bandwidth metadata.
    pub bandwidth_hash: String,
}

/// Eigenvalue stage metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigsMeta {
    /// Resolvent regularization parameter.
    pub z: f64,
    /// Semigroup damping time.
    pub tau: f64,
    /// Nonconstant basis size (spectrum dimension).
    pub l: usize,
    /// Number of modes in the spectrum.
    pub n_modes: usize,
    /// Post-sort positions of modes whose frequency inversion clamped.
    pub clamped_modes: Vec<usize>,
    /// Antisymmetry defect of the raw generator, `max|V + V^T| / max|V|`.
    pub antisym_residual: f64,
    /// Content hash of the training dataset.
    pub dataset_hash: String,
    /// Content hash of the basis metadata.
    pub basis_hash: String,
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Shortest-roundtrip decimal form of a float (parses back bitwise equal).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        Error::Validation(format!("{}: `{s}` is not a number", path.display()))
    })
}

/// SHA-256 of a file's contents, as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| with_path(e, path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let k = file.read(&mut buf).map_err(|e| with_path(e, path))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex_string(&hasher.finalize()))
}

/// SHA-256 of an in-memory string, as lowercase hex.
pub fn sha256_str(text: &str) -> String {
    hex_string(&Sha256::digest(text.as_bytes()))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Serialize a value as pretty JSON at `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    std::fs::write(path, buf).map_err(|e| with_path(e, path))
}

/// Deserialize a JSON value from `path`.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| with_path(e, path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let buf = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    std::fs::write(path, buf).map_err(|e| with_path(e, path))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| with_path(e, path))?;
    Ok(csv::Reader::from_reader(BufReader::new(file)))
}

/// Write a trajectory as `t, x1..xs, y1..yd` rows plus a JSON sidecar.
pub fn write_dataset(
    dir: &Path,
    csv_name: &str,
    meta_name: &str,
    data: &TrajectoryDataset,
    meta: &DatasetMeta,
) -> Result<()> {
    let path = dir.join(csv_name);
    let mut w = csv_writer();
    let mut header = vec!["t".to_string()];
    for i in 1..=data.state_dim() {
        header.push(format!("x{i}"));
    }
    for i in 1..=data.data_dim() {
        header.push(format!("y{i}"));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for m in 0..data.n() {
        row.clear();
        row.push(fmt_f64(data.time(m)));
        row.extend(data.state(m).iter().map(|v| fmt_f64(*v)));
        row.extend(data.point(m).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    finish_csv(w, &path)?;
    write_json(&dir.join(meta_name), meta)
}

/// Reload a trajectory written by [`write_dataset`].
pub fn read_dataset(
    dir: &Path,
    csv_name: &str,
    meta_name: &str,
) -> Result<(TrajectoryDataset, DatasetMeta)> {
    let meta: DatasetMeta = read_json(&dir.join(meta_name))?;
    let path = dir.join(csv_name);
    let mut r = csv_reader(&path)?;
    let expect_cols = 1 + meta.state_dim + meta.data_dim;
    let mut states = Vec::with_capacity(meta.n * meta.state_dim);
    let mut embedded = Vec::with_capacity(meta.n * meta.data_dim);
    for record in r.records() {
        let record = record?;
        if record.len() != expect_cols {
            return Err(Error::Validation(format!(
                "{}: row has {} columns, expected {expect_cols}",
                path.display(),
                record.len()
            )));
        }
        for i in 0..meta.state_dim {
            states.push(parse_f64(&record[1 + i], &path)?);
        }
        for i in 0..meta.data_dim {
            embedded.push(parse_f64(&record[1 + meta.state_dim + i], &path)?);
        }
    }
    let data = TrajectoryDataset::from_parts(
        meta.state_dim,
        meta.data_dim,
        meta.dt,
        meta.spinup,
        states,
        embedded,
    )?;
    if data.n() != meta.n {
        return Err(Error::Validation(format!(
            "{}: {} rows but sidecar declares n = {}",
            path.display(),
            data.n(),
            meta.n
        )));
    }
    Ok((data, meta))
}

/// Write one named column of floats.
pub fn write_column(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record([name])?;
    for v in values {
        w.write_record([fmt_f64(*v)])?;
    }
    finish_csv(w, path)
}

/// Read a single-column CSV written by [`write_column`].
pub fn read_column(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 1 {
            return Err(Error::Validation(format!(
                "{}: expected one column, found {}",
                path.display(),
                record.len()
            )));
        }
        out.push(parse_f64(&record[0], path)?);
    }
    Ok(out)
}

/// Write a real matrix with columns `prefix_0 .. prefix_{c-1}`.
pub fn write_matrix(path: &Path, prefix: &str, m: MatRef<'_, f64>) -> Result<()> {
    let mut w = csv_writer();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}_{j}")).collect();
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        for j in 0..m.ncols() {
            row.push(fmt_f64(m[(i, j)]));
        }
        w.write_record(&row)?;
    }
    finish_csv(w, path)
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Mat<f64>> {
    let mut r = csv_reader(path)?;
    let ncols = r
        .headers()
        .map_err(Error::from)?
        .len();
    let mut data: Vec<f64> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != ncols {
            return Err(Error::Validation(format!(
                "{}: ragged row ({} columns, expected {ncols})",
                path.display(),
                record.len()
            )));
        }
        for field in record.iter() {
            data.push(parse_f64(field, path)?);
        }
    }
    let nrows = data.len() / ncols.max(1);
    Ok(Mat::from_fn(nrows, ncols, |i, j| data[i * ncols + j]))
}

/// Write a complex matrix as interleaved `prefix_re_j, prefix_im_j` pairs.
pub fn write_complex_matrix(path: &Path, prefix: &str, m: MatRef<'_, c64>) -> Result<()> {
    let mut w = csv_writer();
    let mut header = Vec::with_capacity(2 * m.ncols());
    for j in 0..m.ncols() {
        header.push(format!("{prefix}_re_{j}"));
        header.push(format!("{prefix}_im_{j}"));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(2 * m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        for j in 0..m.ncols() {
            row.push(fmt_f64(m[(i, j)].re));
            row.push(fmt_f64(m[(i, j)].im));
        }
        w.write_record(&row)?;
    }
    finish_csv(w, path)
}

/// Read a complex matrix written by [`write_complex_matrix`].
pub fn read_complex_matrix(path: &Path) -> Result<Mat<c64>> {
    let real = read_matrix(path)?;
    if real.ncols() % 2 != 0 {
        return Err(Error::Validation(format!(
            "{}: odd column count for a complex matrix",
            path.display()
        )));
    }
    Ok(Mat::from_fn(real.nrows(), real.ncols() / 2, |i, j| {
        c64::new(real[(i, 2 * j)], real[(i, 2 * j + 1)])
    }))
}

fn write_curve(path: &Path, curve: &[TuningCurvePoint]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["log_eps", "log_S", "slope"])?;
    for p in curve {
        w.write_record([fmt_f64(p.log_epsilon), fmt_f64(p.log_s), fmt_f64(p.slope)])?;
    }
    finish_csv(w, path)
}

fn read_curve(path: &Path) -> Result<Vec<TuningCurvePoint>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Validation(format!(
                "{}: tuning curve rows have 3 columns",
                path.display()
            )));
        }
        out.push(TuningCurvePoint {
            log_epsilon: parse_f64(&record[0], path)?,
            log_s: parse_f64(&record[1], path)?,
            slope: parse_f64(&record[2], path)?,
        });
    }
    Ok(out)
}

/// Persist a fitted bandwidth model (metadata, tuning curves, per-sample
/// bandwidths).
pub fn write_bandwidth(dir: &Path, bw: &BandwidthModel, dataset_hash: &str) -> Result<()> {
    let meta = BandwidthMeta {
        epsilon: bw.epsilon,
        pilot_epsilon: bw.pilot_epsilon,
        pilot_exponent: bw.pilot_exponent,
        density_floor: bw.density_floor,
        geo_scale: bw.geo_scale,
        boundary_warning: bw.boundary_warning,
        pilot_boundary_warning: bw.pilot_boundary_warning,
        n: bw.rho.len(),
        dataset_hash: dataset_hash.to_string(),
    };
    write_json(&dir.join(BANDWIDTH_META), &meta)?;
    write_curve(&dir.join(BANDWIDTH_CURVE_CSV), &bw.curve)?;
    write_curve(&dir.join(PILOT_CURVE_CSV), &bw.pilot_curve)?;
    write_column(&dir.join(RHO_CSV), "rho", &bw.rho)
}

/// Reload a bandwidth model written by [`write_bandwidth`].
pub fn read_bandwidth(dir: &Path) -> Result<(BandwidthModel, BandwidthMeta)> {
    let meta: BandwidthMeta = read_json(&dir.join(BANDWIDTH_META))?;
    let rho = read_column(&dir.join(RHO_CSV))?;
    if rho.len() != meta.n {
        return Err(Error::Validation(format!(
            "bandwidth artifacts disagree: {} rho values for n = {}",
            rho.len(),
            meta.n
        )));
    }
    let bw = BandwidthModel {
        epsilon: meta.epsilon,
        pilot_epsilon: meta.pilot_epsilon,
        pilot_exponent: meta.pilot_exponent,
        density_floor: meta.density_floor,
        geo_scale: meta.geo_scale,
        rho,
        curve: read_curve(&dir.join(BANDWIDTH_CURVE_CSV))?,
        pilot_curve: read_curve(&dir.join(PILOT_CURVE_CSV))?,
        boundary_warning: meta.boundary_warning,
        pilot_boundary_warning: meta.pilot_boundary_warning,
    };
    Ok((bw, meta))
}

/// Persist a kernel eigenbasis.
pub fn write_basis(dir: &Path, basis: &KernelBasis, meta: &BasisMeta) -> Result<()> {
    write_json(&dir.join(BASIS_META), meta)?;
    write_column(&dir.join(BASIS_D_CSV), "d", &basis.d)?;
    write_column(&dir.join(BASIS_Q_CSV), "q", &basis.q)?;
    write_column(&dir.join(BASIS_LAMBDA_CSV), "lambda", &basis.lambda)?;
    write_matrix(&dir.join(BASIS_PHI_CSV), "phi", basis.phi.as_ref())?;
    write_matrix(&dir.join(BASIS_GAMMA_CSV), "gamma", basis.gamma.as_ref())
}

/// Reload a kernel eigenbasis written by [`write_basis`]. The singular
/// values are recomputed from the stored eigenvalues (`sqrt` is exactly
/// rounded, so the reload is bitwise faithful).
pub fn read_basis(dir: &Path) -> Result<(KernelBasis, BasisMeta)> {
    let meta: BasisMeta = read_json(&dir.join(BASIS_META))?;
    let d = read_column(&dir.join(BASIS_D_CSV))?;
    let q = read_column(&dir.join(BASIS_Q_CSV))?;
    let lambda = read_column(&dir.join(BASIS_LAMBDA_CSV))?;
    let phi = read_matrix(&dir.join(BASIS_PHI_CSV))?;
    let gamma = read_matrix(&dir.join(BASIS_GAMMA_CSV))?;
    let n = meta.n;
    let lp = meta.l_prime;
    if d.len() != n
        || q.len() != n
        || lambda.len() != lp
        || phi.nrows() != n
        || phi.ncols() != lp
        || gamma.nrows() != n
        || gamma.ncols() != lp
    {
        return Err(Error::Validation(
            "basis artifacts disagree with their metadata dimensions".into(),
        ));
    }
    if lambda.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Validation(
            "stored Markov eigenvalues must be positive".into(),
        ));
    }
    let sigma = lambda.iter().map(|v| v.sqrt()).collect();
    let basis = KernelBasis { d, q, lambda, sigma, phi, gamma };
    Ok((basis, meta))
}

/// Conjugate-partner positions: `pair[j]` is the adjacent mode with the
/// mirrored eigenvalue, or -1 for unpaired (zero-frequency) modes.
pub fn pair_indices(beta: &[c64]) -> Vec<i64> {
    let mut out = vec![-1i64; beta.len()];
    let mut j = 0;
    while j + 1 < beta.len() {
        if beta[j].im != 0.0 && beta[j + 1].im == -beta[j].im && beta[j + 1].re == beta[j].re {
            out[j] = (j + 1) as i64;
            out[j + 1] = j as i64;
            j += 2;
        } else {
            j += 1;
        }
    }
    out
}

/// Write the spectrum table: `j, omega, beta_re, beta_im,
/// dirichlet_energy, pair_index`, ordered by energy.
pub fn write_eigs_table(
    path: &Path,
    beta: &[c64],
    omega: &[f64],
    energy: &[f64],
) -> Result<()> {
    let pairs = pair_indices(beta);
    let mut w = csv_writer();
    w.write_record(["j", "omega", "beta_re", "beta_im", "dirichlet_energy", "pair_index"])?;
    for j in 0..beta.len() {
        w.write_record([
            j.to_string(),
            fmt_f64(omega[j]),
            fmt_f64(beta[j].re),
            fmt_f64(beta[j].im),
            fmt_f64(energy[j]),
            pairs[j].to_string(),
        ])?;
    }
    finish_csv(w, path)
}

/// Write evaluated eigenfunctions as `t` plus `re_<j>, im_<j>, abs_<j>`
/// triplets, one per selected mode.
pub fn write_zeta(path: &Path, times: &[f64], series: &[EigenTimeSeries]) -> Result<()> {
    for s in series {
        if s.values.len() != times.len() {
            return Err(Error::Validation(format!(
                "mode {} series length {} does not match the {} time stamps",
                s.mode,
                s.values.len(),
                times.len()
            )));
        }
    }
    let mut w = csv_writer();
    let mut header = vec!["t".to_string()];
    for s in series {
        header.push(format!("re_{}", s.mode));
        header.push(format!("im_{}", s.mode));
        header.push(format!("abs_{}", s.mode));
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (i, t) in times.iter().enumerate() {
        row.clear();
        row.push(fmt_f64(*t));
        for s in series {
            let v = s.values[i];
            row.push(fmt_f64(v.re));
            row.push(fmt_f64(v.im));
            row.push(fmt_f64((v.re * v.re + v.im * v.im).sqrt()));
        }
        w.write_record(&row)?;
    }
    finish_csv(w, path)
}

/// Reload series written by [`write_zeta`] (the `abs` column is
/// redundant and dropped).
pub fn read_zeta(path: &Path) -> Result<(Vec<f64>, Vec<EigenTimeSeries>)> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(Error::from)?.clone();
    if header.len() < 4 || (header.len() - 1) % 3 != 0 || &header[0] != "t" {
        return Err(Error::Validation(format!(
            "{}: not an eigenfunction time-series table",
            path.display()
        )));
    }
    let n_series = (header.len() - 1) / 3;
    let mut modes = Vec::with_capacity(n_series);
    for s in 0..n_series {
        let name = &header[1 + 3 * s];
        let mode: usize = name
            .strip_prefix("re_")
            .and_then(|m| m.parse().ok())
            .ok_or_else(|| {
                Error::Validation(format!("{}: unexpected column `{name}`", path.display()))
            })?;
        modes.push(mode);
    }
    let mut times = Vec::new();
    let mut values: Vec<Vec<c64>> = vec![Vec::new(); n_series];
    for record in r.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Validation(format!(
                "{}: ragged row",
                path.display()
            )));
        }
        times.push(parse_f64(&record[0], path)?);
        for s in 0..n_series {
            let re = parse_f64(&record[1 + 3 * s], path)?;
            let im = parse_f64(&record[2 + 3 * s], path)?;
            values[s].push(c64::new(re, im));
        }
    }
    let series = modes
        .into_iter()
        .zip(values)
        .map(|(mode, vals)| EigenTimeSeries {
            mode,
            times: times.clone(),
            values: vals,
        })
        .collect();
    Ok((times, series))
}

/// Write autocorrelations on the lag grid `k * dt`. A single mode gets
/// the plain `lag_time, re, im, abs` header; several modes get suffixed
/// triplets.
pub fn write_autocorr(path: &Path, dt: f64, corr: &[(usize, Vec<c64>)]) -> Result<()> {
    if corr.is_empty() {
        return Err(Error::Validation("no autocorrelations to write".into()));
    }
    let rows = corr[0].1.len();
    if corr.iter().any(|(_, c)| c.len() != rows) {
        return Err(Error::Validation(
            "autocorrelation series have mismatched lengths".into(),
        ));
    }
    let mut w = csv_writer();
    let mut header = vec!["lag_time".to_string()];
    if corr.len() == 1 {
        header.extend(["re".into(), "im".into(), "abs".into()]);
    } else {
        for (mode, _) in corr {
            header.push(format!("re_{mode}"));
            header.push(format!("im_{mode}"));
            header.push(format!("abs_{mode}"));
        }
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for k in 0..rows {
        row.clear();
        row.push(fmt_f64(k as f64 * dt));
        for (_, c) in corr {
            let v = c[k];
            row.push(fmt_f64(v.re));
            row.push(fmt_f64(v.im));
            row.push(fmt_f64((v.re * v.re + v.im * v.im).sqrt()));
        }
        w.write_record(&row)?;
    }
    finish_csv(w, path)
}

/// Every regular file in the run directory except the manifest itself and
/// the transient lock, sorted by name.
pub fn artifact_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| with_path(e, dir))? {
        let entry = entry.map_err(|e| with_path(e, dir))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name == MANIFEST_JSON || name == LOCK_FILE {
            continue;
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_dataset, FlowSystem};
    use tempfile::tempdir;

    #[test]
    fn dataset_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let system = FlowSystem::lorenz63_default();
        let data = generate_dataset(&system, &[1.0, 1.0, 25.0], 50, 0.11, 3, 4).unwrap();
        let meta = DatasetMeta {
            system: system.name().to_string(),
            params: BTreeMap::from([
                ("sigma".into(), 10.0),
                ("rho".into(), 28.0),
                ("beta".into(), 8.0 / 3.0),
            ]),
            n: 50,
            dt: 0.11,
            spinup: 3,
            seed: 7,
            substeps: 4,
            state_dim: 3,
            data_dim: 3,
        };
        write_dataset(dir.path(), DATASET_CSV, DATASET_META, &data, &meta).unwrap();
        let (back, meta2) = read_dataset(dir.path(), DATASET_CSV, DATASET_META).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back.n(), data.n());
        assert_eq!(back.states(), data.states());
        assert_eq!(back.points(), data.points());
        assert_eq!(back.dt, data.dt);
    }

    #[test]
    fn matrix_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let m = Mat::<f64>::from_fn(7, 3, |i, j| {
            (i as f64 * 0.37 + j as f64).sin() * 1e-7 + 1.0 / (1 + i + j) as f64
        });
        let path = dir.path().join("m.csv");
        write_matrix(&path, "v", m.as_ref()).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.nrows(), 7);
        assert_eq!(back.ncols(), 3);
        for j in 0..3 {
            for i in 0..7 {
                assert_eq!(m[(i, j)], back[(i, j)], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn complex_matrix_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let m = Mat::<c64>::from_fn(5, 2, |i, j| {
            c64::new((i as f64).exp() * 1e-3, -(j as f64) - 0.125)
        });
        let path = dir.path().join("c.csv");
        write_complex_matrix(&path, "d", m.as_ref()).unwrap();
        let back = read_complex_matrix(&path).unwrap();
        for j in 0..2 {
            for i in 0..5 {
                assert_eq!(m[(i, j)].re, back[(i, j)].re);
                assert_eq!(m[(i, j)].im, back[(i, j)].im);
            }
        }
    }

    #[test]
    fn zeta_round_trips() {
        let dir = tempdir().unwrap();
        let times: Vec<f64> = (0..9).map(|i| i as f64 * 0.01).collect();
        let series = vec![
            EigenTimeSeries {
                mode: 0,
                times: times.clone(),
                values: (0..9).map(|i| c64::new(i as f64, -0.5 * i as f64)).collect(),
            },
            EigenTimeSeries {
                mode: 3,
                times: times.clone(),
                values: (0..9).map(|i| c64::new((i as f64).cos(), 0.25)).collect(),
            },
        ];
        let path = dir.path().join(ZETA_TEST_CSV);
        write_zeta(&path, &times, &series).unwrap();
        let (t2, back) = read_zeta(&path).unwrap();
        assert_eq!(t2, times);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].mode, 0);
        assert_eq!(back[1].mode, 3);
        for (a, b) in series.iter().zip(&back) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.re, y.re);
                assert_eq!(x.im, y.im);
            }
        }
    }

    #[test]
    fn pair_indices_match_adjacent_conjugates() {
        let beta = vec![
            c64::new(0.0, 1.5),
            c64::new(0.0, -1.5),
            c64::new(0.0, 0.0),
            c64::new(0.0, 0.7),
            c64::new(0.0, -0.7),
        ];
        assert_eq!(pair_indices(&beta), vec![1, 0, -1, 4, 3]);
    }

    #[test]
    fn eigs_table_has_the_documented_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(EIGS_CSV);
        let beta = vec![c64::new(0.0, 0.9), c64::new(0.0, -0.9)];
        write_eigs_table(&path, &beta, &[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "j,omega,beta_re,beta_im,dirichlet_energy,pair_index"
        );
        assert_eq!(lines.next().unwrap(), "0,1,0,0.9,0.5,1");
        assert_eq!(lines.next().unwrap(), "1,-1,0,-0.9,0.5,0");
    }

    #[test]
    fn autocorr_header_is_plain_for_one_mode_and_suffixed_for_many() {
        let dir = tempdir().unwrap();
        let c = vec![c64::new(1.0, 0.0), c64::new(0.5, 0.25)];
        let single = dir.path().join("a1.csv");
        write_autocorr(&single, 0.01, &[(2, c.clone())]).unwrap();
        let text = std::fs::read_to_string(&single).unwrap();
        assert!(text.starts_with("lag_time,re,im,abs\n"));
        assert!(text.contains("\n0.01,0.5,0.25,"));

        let multi = dir.path().join("a2.csv");
        write_autocorr(&multi, 0.01, &[(0, c.clone()), (1, c)]).unwrap();
        let text = std::fs::read_to_string(&multi).unwrap();
        assert!(text.starts_with("lag_time,re_0,im_0,abs_0,re_1,im_1,abs_1\n"));
    }

    #[test]
    fn hashes_are_stable_and_content_sensitive() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, b"hello\n").unwrap();
        let h1 = sha256_file(&p).unwrap();
        let h2 = sha256_file(&p).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        std::fs::write(&p, b"hello!\n").unwrap();
        assert_ne!(h1, sha256_file(&p).unwrap());
        assert_eq!(sha256_str("abc").len(), 64);
    }

    #[test]
    fn artifact_listing_skips_manifest_and_lock() {
        let dir = tempdir().unwrap();
        std::fs::write(dir.path().join("b.csv"), "x").unwrap();
        std::fs::write(dir.path().join("a.csv"), "y").unwrap();
        std::fs::write(dir.path().join(MANIFEST_JSON), "{}").unwrap();
        std::fs::write(dir.path().join(LOCK_FILE), "").unwrap();
        let files = artifact_files(dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
            .collect();
        assert_eq!(names, vec!["a.csv", "b.csv"]);
    }
}
