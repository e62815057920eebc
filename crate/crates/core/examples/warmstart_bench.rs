//! Sweeps needed to reach each error threshold when the solver starts from a
//! model prediction versus the constant edge-average fill.
//!
//! ```bash
//! cargo run --release --example warmstart_bench -- model.lfck [n_problems]
//! ```

use std::path::Path;

use heatnet::eval::EvalSet;
use heatnet::fd::GroundTruthOracle;
use heatnet::model::{FieldPredictor, UNet};
use heatnet::warmstart::{run_bench, summarize, BenchConfig};

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: warmstart_bench <checkpoint.lfck> [n_problems]");
        std::process::exit(2);
    };
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);

    let model = UNet::load(Path::new(path))?;
    let size = model.input_size().expect("a model knows its size");
    let config = BenchConfig::new(size);
    let set = EvalSet::generate(size, n, 0, &GroundTruthOracle::uncached())?;
    let results = run_bench(&model, &set, &config)?;

    println!("problem  start%(warm/const)  sweeps to {:?}% (warm | const)", config.thresholds);
    for r in &results {
        let show = |v: &[Option<usize>]| {
            v.iter()
                .map(|s| s.map_or("-".to_string(), |s| s.to_string()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!(
            "{:7}  {:6.2} / {:6.2}      {} | {}",
            r.problem_id,
            r.warm.initial_percent,
            r.constant.initial_percent,
            show(&r.warm.sweeps_to_threshold),
            show(&r.constant.sweeps_to_threshold)
        );
    }
    for t in summarize(&results, config.method)?.thresholds {
        println!(
            "{:>5}%: median speedup {:?}, warm start strictly faster on {:.0}% of problems",
            t.threshold_percent,
            t.median_speedup,
            100.0 * t.warm_strictly_fewer
        );
    }
    Ok(())
}
