//! Build the bistochastic kernel basis and check its guarantees.
//!
//! Normalizing the kernel matrix so the induced Markov operator is
//! symmetric and doubly stochastic gives an eigenbasis that is exactly
//! orthonormal in the empirical inner product, with eigenvalues in
//! (0, 1] ordered from smooth to oscillatory.
//!
//! Run with `cargo run --release --example markov_basis`.

use koopgen::basis::{
    compute_basis, markov_matrix, markov_row_sum_residual, normalize_bistochastic,
};
use koopgen::dynamics::{generate_dataset, FlowSystem};
use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};

fn main() -> koopgen::Result<()> {
    let system = FlowSystem::stepanoff_default();
    let data = generate_dataset(&system, &[1.0, 2.0], 1000, 2.0, 0, 20)?;

    let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())?;
    let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho)?;
    let bi = normalize_bistochastic(kmat.as_ref())?;

    // The Markov matrix N*P has unit row sums by construction.
    println!("markov row-sum residual = {:.2e}", markov_row_sum_residual(bi.khat.as_ref()));
    let p = markov_matrix(bi.khat.as_ref());
    println!("markov matrix is {}x{}", p.nrows(), p.ncols());

    let basis = compute_basis(&bi, 12)?;
    println!("\n{:>4} {:>12} {:>10}", "j", "lambda", "sigma");
    for j in 0..basis.l_prime() {
        println!("{j:>4} {:>12.6} {:>10.6}", basis.lambda[j], basis.sigma[j]);
    }

    // Orthonormality in the empirical inner product: (1/N) Phi^T Phi = I.
    let n = basis.n();
    let gram = basis.phi.transpose() * &basis.phi;
    let mut defect = 0.0f64;
    for i in 0..basis.l_prime() {
        for j in 0..basis.l_prime() {
            let want = if i == j { n as f64 } else { 0.0 };
            defect = defect.max((gram[(i, j)] - want).abs() / n as f64);
        }
    }
    println!("\nbasis orthonormality defect = {defect:.2e}");
    println!("leading eigenvalue is the constant mode: lambda_0 = {}", basis.lambda[0]);
    Ok(())
}
