//! Extend eigenfunctions beyond the training trajectory.
//!
//! The Nystrom formula evaluates each basis function — and with it any
//! eigenfunction expansion — at arbitrary state-space points from the
//! stored kernel sections. On the training points it reproduces the
//! eigenvectors; off them it stays smooth; and its derivative along the
//! flow matches the analytic generator action.
//!
//! Run with `cargo run --release --example nystrom_extension`.

use faer::prelude::*;
use koopgen::basis::{compute_basis, normalize_bistochastic};
use koopgen::dynamics::{generate_dataset, FlowSystem};
use koopgen::generator::{
    assemble_generator, finalize_solution, solve_gevp, GeneratorProblem,
};
use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};
use koopgen::nystrom::Evaluator;

fn main() -> koopgen::Result<()> {
    let system = FlowSystem::torus_rotation_default();
    let train = generate_dataset(&system, &[0.0, 0.0], 1000, 7.0f64.sqrt(), 0, 1)?;

    let bw = BandwidthModel::fit(train.points(), train.data_dim(), &TuningOptions::default())?;
    let kmat = kernel_matrix(train.points(), train.data_dim(), bw.epsilon, &bw.rho)?;
    let basis = compute_basis(&normalize_bistochastic(kmat.as_ref())?, 10)?;
    let v = assemble_generator(&system, &train, &basis, &bw, kmat.as_ref())?;
    let problem = GeneratorProblem::new(v, &basis.lambda, 1e-3, 0.1)?;
    let sol = finalize_solution(
        solve_gevp(problem.a.as_ref(), problem.b.as_ref())?,
        problem.v.as_ref(),
        problem.z,
        &basis.lambda,
    )?;
    let evaluator = Evaluator::new(&train, &bw, &basis)?;
    let coeffs: Vec<c64> = (0..basis.l()).map(|i| sol.dcoef[(i, 0)]).collect();

    // In-sample: the extension must reproduce the expansion on the
    // training points themselves.
    let mut insample = 0.0f64;
    for m in (0..train.n()).step_by(97) {
        let direct: c64 = (0..basis.l())
            .map(|i| c64::new(basis.phi[(m, i + 1)], 0.0) * coeffs[i])
            .sum();
        let extended = evaluator.eigenfunction_at(&coeffs, train.point(m))?;
        insample = insample.max((extended - direct).norm());
    }
    println!("in-sample extension error  = {insample:.2e}");

    // Out-of-sample: along a held-out trajectory, the time derivative of
    // the extension (finite differences) must match the analytic
    // generator action V zeta = grad(zeta) . V_vec at every point.
    let test = generate_dataset(&system, &[0.4, 1.1], 200, 0.01, 0, 1)?;
    let mut fd_gap = 0.0f64;
    let mut eig_gap = 0.0f64;
    for m in 1..test.n() - 1 {
        let prev = evaluator.eigenfunction_at(&coeffs, test.point(m - 1))?;
        let next = evaluator.eigenfunction_at(&coeffs, test.point(m + 1))?;
        let here = evaluator.eigenfunction_at(&coeffs, test.point(m))?;
        let fd = (next - prev) * c64::new(1.0 / (2.0 * test.dt), 0.0);
        let w = system.pushforward_vector(test.state(m))?;
        let action = evaluator.generator_action_at(&coeffs, test.point(m), &w)?;
        fd_gap = fd_gap.max((fd - action).norm() / action.norm());
        // How close the mode is to a true eigenfunction: V zeta vs
        // i*omega*zeta. This measures approximation quality, not the
        // evaluator, so it shrinks with more data rather than with h.
        eig_gap = eig_gap.max((fd - c64::new(0.0, sol.omega[0]) * here).norm() / here.norm());
    }
    println!("flow-derivative mismatch   = {fd_gap:.2e} (relative)");
    println!("eigen-relation defect      = {eig_gap:.2e} (relative)");

    let moduli: Vec<f64> = (0..test.n())
        .step_by(40)
        .map(|m| evaluator.eigenfunction_at(&coeffs, test.point(m)).map(|v| v.norm()))
        .collect::<koopgen::Result<_>>()?;
    println!("|zeta| along test path     = {moduli:.3?} (unit circle expected)");
    println!("omega_0                    = {:+.4}", sol.omega[0]);
    Ok(())
}
