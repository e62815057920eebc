//! Scores a checkpoint, and the constant edge-average guess for comparison,
//! against reference solutions of held-out problems.
//!
//! ```bash
//! cargo run --release --example evaluate -- model.lfck [n_problems]
//! ```

use std::path::Path;

use heatnet::eval::EvalSet;
use heatnet::fd::{constant_init, GroundTruthOracle};
use heatnet::field::TemperatureField;
use heatnet::model::{FieldPredictor, UNet};

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: evaluate <checkpoint.lfck> [n_problems]");
        std::process::exit(2);
    };
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);

    let model = UNet::load(Path::new(path))?;
    let size = model.input_size().expect("a model knows its size");
    let set = EvalSet::generate(size, n, 0, &GroundTruthOracle::uncached())?;

    let baseline = |p: &TemperatureField| Ok(constant_init(p));
    for (name, predictor) in [("model", &model as &dyn FieldPredictor), ("constant fill", &baseline)] {
        let r = set.evaluate(predictor)?.aggregate;
        println!(
            "{name:>13}: mean {:.3}%  std {:.3}%  max {:.3}%  over {} pixels",
            r.mean_percent, r.std_percent, r.max_percent, r.n_pixels
        );
    }
    Ok(())
}
