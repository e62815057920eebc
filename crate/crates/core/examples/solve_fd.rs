//! Solves one problem with Jacobi and Gauss-Seidel and compares sweep counts.
//!
//! ```bash
//! cargo run --release --example solve_fd -- [size] [tolerance]
//! ```

use heatnet::fd::{fd_solve, BoundaryMask, Method, SolverConfig};
use heatnet::field::{make_problem, BoundarySpec};
use heatnet::stencil::{physics_loss, Grid, Stencil3x3};

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let size = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let tol = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-8);

    let problem = make_problem(&BoundarySpec {
        top: 100.0,
        bottom: 0.0,
        left: 25.0,
        right: 75.0,
        size,
    })?;
    let mask = BoundaryMask::for_field(&problem);

    let mut solutions = Vec::new();
    for method in [Method::Jacobi, Method::GaussSeidel] {
        let config = SolverConfig::for_size(method, tol, size);
        let (solution, trace) = fd_solve(&problem, &mask, &config)?;
        let normalized = solution.map(|v| v / 100.0)?;
        println!(
            "{method:>12}: {:6} sweeps, converged {}, physics loss {:.3e}, center {:.6}",
            trace.sweeps_used,
            trace.converged,
            physics_loss(&Grid::from(&normalized), &Stencil3x3::canonical())?,
            solution.get(size / 2, size / 2)
        );
        solutions.push(solution);
    }
    let gap = solutions[0]
        .values()
        .iter()
        .zip(solutions[1].values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max difference between the two solutions: {gap:.3e} degrees");
    Ok(())
}
