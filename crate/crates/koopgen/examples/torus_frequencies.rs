//! Recover the frequency lattice of a quasiperiodic torus rotation.
//!
//! The rotation with velocity (1, alpha) has generator eigenvalues
//! i(l1 + l2*alpha) for integers l1, l2, so every recovered frequency
//! should land near that lattice, and frequencies should add: if two
//! modes are eigenfunctions, their product is one as well.
//!
//! Run with `cargo run --release --example torus_frequencies`.

use koopgen::basis::{compute_basis, normalize_bistochastic};
use koopgen::dynamics::{generate_dataset, FlowSystem, DEFAULT_ALPHA};
use koopgen::generator::{
    assemble_generator, finalize_solution, solve_gevp, GeneratorProblem,
};
use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};

fn nearest_lattice_point(omega: f64, alpha: f64) -> (i32, i32, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for l1 in -4..=4 {
        for l2 in -4..=4 {
            let gap = (omega - (l1 as f64 + l2 as f64 * alpha)).abs();
            if gap < best.2 {
                best = (l1, l2, gap);
            }
        }
    }
    best
}

fn main() -> koopgen::Result<()> {
    let system = FlowSystem::torus_rotation_default();
    let data = generate_dataset(&system, &[0.0, 0.0], 1200, 7.0f64.sqrt(), 0, 1)?;

    let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())?;
    let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho)?;
    let basis = compute_basis(&normalize_bistochastic(kmat.as_ref())?, 16)?;
    let v = assemble_generator(&system, &data, &basis, &bw, kmat.as_ref())?;
    let problem = GeneratorProblem::new(v, &basis.lambda, 1e-3, 0.1)?;
    let pairs = solve_gevp(problem.a.as_ref(), problem.b.as_ref())?;
    let sol = finalize_solution(pairs, problem.v.as_ref(), problem.z, &basis.lambda)?;

    println!("alpha = {DEFAULT_ALPHA:.6}; lattice l1 + l2*alpha");
    println!("{:>4} {:>10} {:>8} {:>14} {:>8}", "j", "omega", "energy", "lattice", "gap");
    for j in 0..sol.n_modes() {
        let (l1, l2, gap) = nearest_lattice_point(sol.omega[j], DEFAULT_ALPHA);
        println!(
            "{j:>4} {:>10.4} {:>8.3} {:>8} + {l2:>2}a {gap:>8.1e}",
            sol.omega[j], sol.energy[j], l1
        );
    }

    // Additive closure: omega_0 + omega_2 should itself be a recovered
    // frequency (the product of the two eigenfunctions).
    let target = sol.omega[0] + sol.omega[2];
    let closest = sol
        .omega
        .iter()
        .map(|w| (w - target).abs())
        .fold(f64::INFINITY, f64::min);
    println!("\nomega_0 + omega_2 = {target:.4}; nearest recovered mode is {closest:.1e} away");
    Ok(())
}
