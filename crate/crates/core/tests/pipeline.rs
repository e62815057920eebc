use heatnet::eval::EvalSet;
use heatnet::fd::{fd_solve, ground_truth, BoundaryMask, GroundTruthOracle, Method, SolverConfig};
use heatnet::field::{make_problem, read_field, sample_boundary, write_field, BoundarySpec, TemperatureField};
use heatnet::model::{ModelConfig, UNet};
use heatnet::stencil::{physics_loss, Grid, Stencil3x3};
use heatnet::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(32, seed);
    c.epochs = 2;
    c.problems_per_epoch = 8;
    c.batch_size = 4;
    c.eval_every = 1;
    c.eval_set_size = 2;
    c
}

#[test]
fn training_ignores_the_reference_cache() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = GroundTruthOracle::with_cache(dir.path());
    let held_out = EvalSet::generate(32, 2, 1, &oracle).unwrap();
    let config = tiny_config(1);

    let run = || {
        let mut eval = |m: &UNet, _: usize| Ok(held_out.evaluate(m)?.aggregate);
        train(UNet::new(ModelConfig::new(32, 1)).unwrap(), &config, Some(&mut eval)).unwrap()
    };
    let (first, log_a) = run();

    // corrupt every cached solution; training must not notice
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        std::fs::write(entry.unwrap().path(), "garbage").unwrap();
    }
    let (second, log_b) = run();
    assert_eq!(first, second);
    assert_eq!(log_a.to_csv(), log_b.to_csv());

    // the oracle recomputes corrupted entries rather than trusting them
    let again = EvalSet::generate(32, 2, 1, &oracle).unwrap();
    assert_eq!(again.truths, held_out.truths);
}

#[test]
fn solutions_round_trip_through_files_and_keep_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let problem = make_problem(&sample_boundary(&mut rng, 40).unwrap()).unwrap();
    let truth = ground_truth(&problem).unwrap();
    let path = dir.path().join("truth.csv");
    write_field(&truth, &path).unwrap();
    let back = read_field(&path).unwrap();
    assert_eq!(back, truth);
    let loss = physics_loss(&Grid::from(&back.map(|v| v / 100.0).unwrap()), &Stencil3x3::canonical()).unwrap();
    assert!(loss <= 1e-12, "{loss}");
}

#[test]
fn both_solvers_agree_when_driven_tight() {
    let problem = make_problem(&BoundarySpec {
        top: 10.0,
        bottom: 90.0,
        left: 60.0,
        right: 20.0,
        size: 32,
    })
    .unwrap();
    let mask = BoundaryMask::for_field(&problem);
    let solve = |m| fd_solve(&problem, &mask, &SolverConfig::for_size(m, 1e-11, 32)).unwrap().0;
    let (j, gs) = (solve(Method::Jacobi), solve(Method::GaussSeidel));
    let gap = j.values().iter().zip(gs.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn perfect_and_constant_predictors_bracket_an_untrained_model() {
    let set = EvalSet::generate(32, 3, 4, &GroundTruthOracle::uncached()).unwrap();
    let perfect = |p: &TemperatureField| ground_truth(p);
    assert_eq!(set.evaluate(&perfect).unwrap().aggregate.mean_percent, 0.0);
    let untrained = UNet::new(ModelConfig::new(32, 4)).unwrap();
    let r = set.evaluate(&untrained).unwrap().aggregate;
    assert!(r.mean_percent > 0.0 && r.mean_percent <= r.max_percent);
    assert_eq!(r.n_pixels, 3 * 32 * 32);
}
