//! Trains a model from scratch and reports held-out error as it goes.
//!
//! ```bash
//! cargo run --release --example train_small -- [size] [epochs] [problems_per_epoch] [pyramid_min] [save_path]
//! ```
//!
//! A 64x64 grid only gets a coarse loss level with `pyramid_min` 16.

use std::path::Path;

use heatnet::eval::EvalSet;
use heatnet::fd::GroundTruthOracle;
use heatnet::model::{ModelConfig, UNet};
use heatnet::trainer::{train_with_progress, TrainConfig};

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let size = arg(0, 32);
    let mut config = TrainConfig::new(size, 7);
    config.epochs = arg(1, 16);
    config.problems_per_epoch = arg(2, 128);
    config.pyramid.min_size = arg(3, config.pyramid.min_size);
    config.eval_every = 4;
    config.eval_set_size = 8;

    let model = UNet::new(ModelConfig::new(size, 7))?;
    println!(
        "{size}x{size} model, {} parameters, loss levels {:?}",
        model.num_parameters(),
        config.pyramid.level_sizes(size)
    );

    let held_out = EvalSet::generate(size, config.eval_set_size, 7, &GroundTruthOracle::uncached())?;
    let mut evaluator = |m: &UNet, _epoch: usize| Ok(held_out.evaluate(m)?.aggregate);
    let (model, log) = train_with_progress(model, &config, Some(&mut evaluator), |r| {
        let eval = r
            .eval
            .map(|e| format!("  eval {:.2}% (std {:.2}%)", e.mean_percent, e.std_percent))
            .unwrap_or_default();
        let lambda: Vec<String> = r.lambda.iter().map(|l| format!("{l:.2}")).collect();
        println!(
            "epoch {:3}  lambda [{}]  loss {:.3e}  full {:.3e}  {:.1}s{eval}",
            r.epoch,
            lambda.join(", "),
            r.mean_multiscale_loss,
            r.mean_physics_loss,
            r.wall_seconds
        );
    })?;
    if let Some(path) = args.get(4) {
        model.save(Path::new(path))?;
        println!("checkpoint written to {path}");
    }
    if let Some(e) = log.last_eval() {
        println!("final held-out error {:.3}% (std {:.3}%)", e.mean_percent, e.std_percent);
    }
    Ok(())
}
