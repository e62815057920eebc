//! The stencil loss on a few fields, the downsampling pyramid, and the
//! coarse-to-fine weight schedule.
//!
//! ```bash
//! cargo run --release --example physics_loss
//! ```

use heatnet::fd::ground_truth;
use heatnet::field::{make_problem, BoundarySpec};
use heatnet::stencil::{
    build_pyramid, multiscale_loss, physics_loss, physics_residual, Grid, LambdaSchedule, PyramidSpec, Stencil3x3,
};

fn main() -> heatnet::Result<()> {
    let k = Stencil3x3::canonical();

    let linear = Grid::from_fn(16, 16, |i, j| 2.0 * i as f64 - 3.0 * j as f64);
    let square = Grid::from_fn(8, 8, |i, _| (i * i) as f64);
    println!("loss of a linear field:   {:e}", physics_loss(&linear, &k)?);
    println!("residual of i^2:          {:?}", &physics_residual(&square, &k)?.values[..4]);

    let problem = make_problem(&BoundarySpec {
        top: 100.0,
        bottom: 0.0,
        left: 0.0,
        right: 0.0,
        size: 128,
    })?;
    let truth = Grid::from(&ground_truth(&problem)?.map(|v| v / 100.0)?);
    let untrained = Grid::from(&problem.map(|v| v / 100.0)?);
    println!("loss of the converged solution: {:.3e}", physics_loss(&truth, &k)?);
    println!("loss of the bare problem:       {:.3e}", physics_loss(&untrained, &k)?);

    let spec = PyramidSpec::default();
    let sizes: Vec<usize> = build_pyramid(&untrained, spec)?.iter().map(|g| g.height).collect();
    println!("pyramid levels for 128: {sizes:?}");
    println!("pyramid levels for 1024: {:?}", spec.level_sizes(1024));

    let schedule = LambdaSchedule::progressive(3)?;
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("t = {t:.2}: lambda {:?}", schedule.weight_at(t));
    }
    let two_levels = LambdaSchedule::progressive(2)?;
    for t in [0.0, 0.5, 1.0] {
        println!(
            "multiscale loss of the bare problem at t = {t}: {:.3e}",
            multiscale_loss(&untrained, &k, &two_levels, t)?
        );
    }
    Ok(())
}
