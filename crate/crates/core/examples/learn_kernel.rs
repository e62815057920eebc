//! Recovers the 3x3 Laplace stencil from converged 8x8 solutions.
//!
//! ```bash
//! cargo run --release --example learn_kernel -- [unit-norm|fixed-center|none] [steps] [learning_rate] [n_samples] [seed]
//! ```

use heatnet::fd::GroundTruthOracle;
use heatnet::kernel_learn::{cross_ratio, learn_kernel, normalize_stencil, KernelLearnConfig};
use heatnet::stencil::Stencil3x3;

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = KernelLearnConfig::new(seed);
    if let Some(c) = args.first() {
        config.constraint = c.parse()?;
    }
    if let Some(steps) = args.get(1).and_then(|s| s.parse().ok()) {
        config.steps = steps;
    }
    if let Some(lr) = args.get(2).and_then(|s| s.parse().ok()) {
        config.learning_rate = lr;
    }

    if let Some(n) = args.get(3).and_then(|s| s.parse().ok()) {
        config.n_samples = n;
    }

    let (learned, history) = learn_kernel(&config, &GroundTruthOracle::uncached())?;
    let stride = (history.steps.len() / 10).max(1);
    for s in history.steps.iter().step_by(stride) {
        println!(
            "step {:5}  objective {:.3e}  norm {:.4}  alignment {:.5}",
            s.step, s.objective, s.norm, s.alignment
        );
    }

    println!("\nlearned ({}):", config.constraint);
    print_stencil(&learned);
    if let Ok(n) = normalize_stencil(&learned) {
        println!("\nnormalized:");
        print_stencil(&n);
        println!(
            "\ncosine to canonical {:.5}, cross/center ratio {:.4}",
            n.cosine_similarity(&Stencil3x3::canonical()),
            cross_ratio(&n)
        );
    }
    Ok(())
}

fn print_stencil(s: &Stencil3x3) {
    for row in s.weights {
        println!("  {:>9.5} {:>9.5} {:>9.5}", row[0], row[1], row[2]);
    }
}
