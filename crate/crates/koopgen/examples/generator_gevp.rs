//! Assemble the generator matrix and solve the regularized eigenproblem.
//!
//! The generator of a volume-preserving flow is skew-adjoint, so its
//! matrix representation in an orthonormal basis should be nearly
//! antisymmetric — the defect measures sampling error. The solve
//! antisymmetrizes explicitly, smooths by the Markov semigroup, and
//! compactifies through the resolvent, so every finite-sample artifact
//! is confined to a known place.
//!
//! Run with `cargo run --release --example generator_gevp`.

use faer::prelude::*;
use koopgen::basis::{compute_basis, normalize_bistochastic};
use koopgen::dynamics::{generate_dataset, FlowSystem};
use koopgen::generator::{
    assemble_generator, finalize_solution, solve_gevp, GeneratorProblem,
};
use koopgen::kernels::{kernel_matrix, BandwidthModel, TuningOptions};

fn main() -> koopgen::Result<()> {
    let system = FlowSystem::torus_rotation_default();
    let data = generate_dataset(&system, &[0.0, 0.0], 1000, 7.0f64.sqrt(), 0, 1)?;

    let bw = BandwidthModel::fit(data.points(), data.data_dim(), &TuningOptions::default())?;
    let kmat = kernel_matrix(data.points(), data.data_dim(), bw.epsilon, &bw.rho)?;
    let basis = compute_basis(&normalize_bistochastic(kmat.as_ref())?, 12)?;
    let v = assemble_generator(&system, &data, &basis, &bw, kmat.as_ref())?;

    // How close is the raw matrix to skew-symmetry?
    let defect = (&v + v.transpose()).norm_max() / v.norm_max();
    println!("antisymmetry defect |V + V^T| / |V| = {defect:.2e}");

    let problem = GeneratorProblem::new(v, &basis.lambda, 1e-3, 0.1)?;
    let pairs = solve_gevp(problem.a.as_ref(), problem.b.as_ref())?;

    // Residual of the generalized problem A c = beta B c, mode by mode.
    println!("\n{:>4} {:>22} {:>12}", "j", "beta", "residual");
    for j in 0..pairs.beta.len() {
        let c = pairs.c.col(j);
        let mut rmax = 0.0f64;
        for i in 0..problem.a.nrows() {
            let mut acc = c64::new(0.0, 0.0);
            for k in 0..problem.a.ncols() {
                acc += c64::new(problem.a[(i, k)], 0.0) * c[k]
                    - pairs.beta[j] * c64::new(problem.b[(i, k)], 0.0) * c[k];
            }
            rmax = rmax.max(acc.norm());
        }
        println!("{j:>4} {:>10.4} + {:>8.4}i {rmax:>12.2e}", pairs.beta[j].re, pairs.beta[j].im);
    }

    let sol = finalize_solution(pairs, problem.v.as_ref(), problem.z, &basis.lambda)?;
    println!("\nfrequencies by increasing Dirichlet energy:");
    println!("{:>4} {:>10} {:>10}", "j", "omega", "energy");
    for j in 0..sol.n_modes() {
        println!("{j:>4} {:>10.4} {:>10.4}", sol.omega[j], sol.energy[j]);
    }
    Ok(())
}
