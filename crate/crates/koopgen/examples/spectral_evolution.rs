//! Evolve an observable through the recovered spectrum.
//!
//! Projecting an observable onto the eigenfunctions turns time
//! evolution into phase rotation: each coefficient spins at its mode's
//! frequency and the coefficient 2-norm is conserved exactly. This
//! example projects a coordinate function of the torus rotation and
//! tracks both the conservation law and the resolvent map between
//! eigenvalues beta and frequencies omega.
//!
//! Run with `cargo run --release --example spectral_evolution`.

use faer::prelude::*;
use koopgen::basis::{compute_basis, normalize_bistochastic};
use koopgen::dynamics::{generate_dataset, FlowSystem};
use koopgen::generator::{
    assemble_generator, finalize_solution, qz, qz_inverse, solve_gevp, GeneratorProblem,
};
use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};

fn main() -> koopgen::Result<()> {
    let system = FlowSystem::torus_rotation_default();
    let data = generate_dataset(&system, &[0.0, 0.0], 1000, 7.0f64.sqrt(), 0, 1)?;

    let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())?;
    let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho)?;
    let basis = compute_basis(&normalize_bistochastic(kmat.as_ref())?, 10)?;
    let v = assemble_generator(&system, &data, &basis, &bw, kmat.as_ref())?;
    let problem = GeneratorProblem::new(v, &basis.lambda, 1e-3, 0.1)?;
    let sol = finalize_solution(
        solve_gevp(problem.a.as_ref(), problem.b.as_ref())?,
        problem.v.as_ref(),
        problem.z,
        &basis.lambda,
    )?;

    // beta and omega are tied by the resolvent compactification
    // q_z(omega) = omega / (z^2 + omega^2) and its inverse branch.
    println!("{:>4} {:>12} {:>10} {:>12}", "j", "beta_im", "omega", "|q_z|");
    for j in 0..sol.n_modes() {
        let (back, clamped) = qz_inverse(sol.beta[j].im, sol.z);
        assert!(!clamped && (back - sol.omega[j]).abs() <= 1e-10 * sol.omega[j].abs().max(1.0));
        println!(
            "{j:>4} {:>12.5} {:>10.4} {:>12.5}",
            sol.beta[j].im,
            sol.omega[j],
            qz(sol.omega[j], sol.z).abs()
        );
    }

    // Project f = cos(theta_1) (first embedding coordinate) onto the
    // eigenbasis: coefficients in the data-driven basis, then onto the
    // recovered eigenfunctions via the dual coefficients d.
    let n = data.n();
    let f = Mat::<f64>::from_fn(n, 1, |m, _| data.point(m)[0]);
    let fbasis = basis.phi.submatrix(0, 1, n, basis.l()).transpose() * &f;
    let coeffs: Vec<c64> = (0..sol.n_modes())
        .map(|j| {
            (0..basis.l())
                .map(|i| sol.dcoef[(i, j)].conj() * c64::new(fbasis[(i, 0)] / n as f64, 0.0))
                .sum()
        })
        .collect();

    let norm0: f64 = coeffs.iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt();
    println!("\nt        |coeffs|   drift");
    for &t in &[0.0, 1.0, 10.0, 100.0, 1000.0] {
        let evolved = sol.evolve_observable(&coeffs, t)?;
        let norm: f64 = evolved.iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt();
        println!("{t:<8} {norm:.6}  {:.1e}", (norm - norm0).abs() / norm0);
    }
    Ok(())
}
