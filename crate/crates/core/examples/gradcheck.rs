//! Finite-difference gradient checks for every differentiable operation and
//! the convolution / transposed-convolution adjoint identity.
//!
//! ```bash
//! cargo run --release --example gradcheck -- [cases]
//! ```

use heatnet::autodiff::gradcheck::{adjoint_pair, run_suite, DEFAULT_STEP};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> heatnet::Result<()> {
    let cases = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let reports = run_suite(cases, DEFAULT_STEP, &mut rng)?;
    for r in &reports {
        println!("{:<22} {:<40} rel err {:.2e}", format!("{:?}", r.op), format!("{:?}", r.shapes), r.max_relative_error);
    }
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    println!("worst relative error over {cases} cases: {worst:.2e}");

    let mut worst_adjoint = 0.0f64;
    for _ in 0..50 {
        let (lhs, rhs) = adjoint_pair(&mut rng)?;
        worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
    }
    println!("worst adjoint mismatch <conv x, y> vs <x, conv^T y>: {worst_adjoint:.2e}");
    Ok(())
}
