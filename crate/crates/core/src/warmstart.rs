//! Finite-difference convergence from a predicted field versus the constant
//! edge-average initialisation.
//!
//! Both runs of a problem use the same solver and the same reference
//! solution; only the starting interior differs. One "sweep" is one full pass
//! of the update over the grid, and every curve is indexed by it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalSet;
use crate::fd::{constant_init, BoundaryMask, Method, Solver};
use crate::field::{mean_percent_error, TemperatureField};
use crate::model::FieldPredictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    WarmStart,
    Constant,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::WarmStart => "warm-start",
            InitKind::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub method: Method,
    /// Error thresholds in percent, strictly descending.
    pub thresholds: Vec<f64>,
    /// Sweep budget per run.
    pub max_sweeps: usize,
    /// Record every this many sweeps in the curve; thresholds are still
    /// checked after every sweep.
    pub sample_every: usize,
    /// Stop a run once it is below the smallest threshold.
    pub stop_at_last_threshold: bool,
}

impl BenchConfig {
    pub fn new(size: usize) -> Self {
        Self {
            method: Method::Jacobi,
            thresholds: vec![5.0, 1.0, 0.5, 0.1],
            max_sweeps: 10 * size * size + 1000,
            sample_every: 1,
            stop_at_last_threshold: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("at least one threshold is required".into()));
        }
        if self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must be positive percentages, got {:?}",
                self.thresholds
            )));
        }
        if self.thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must be strictly descending, got {:?}",
                self.thresholds
            )));
        }
        if self.max_sweeps == 0 || self.sample_every == 0 {
            return Err(Error::InvalidArgument("max_sweeps and sample_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sweep: usize,
    pub mean_percent: f64,
}

/// Error history of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitCurve {
    pub kind: InitKind,
    /// Error of the starting field, before any sweep.
    pub initial_percent: f64,
    /// Error after sweeps `sample_every, 2*sample_every, ...`.
    pub points: Vec<CurvePoint>,
    /// Per threshold: sweeps until the error first dropped to it (0 if the
    /// start already was), `None` if the budget ran out first.
    pub sweeps_to_threshold: Vec<Option<usize>>,
    pub sweeps_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub problem_id: usize,
    pub thresholds: Vec<f64>,
    pub warm: InitCurve,
    pub constant: InitCurve,
}

impl BenchResult {
    /// Constant-init sweeps over warm-start sweeps at threshold `i`; a zero
    /// warm count is treated as one sweep.
    pub fn speedup(&self, i: usize) -> Option<f64> {
        let c = self.constant.sweeps_to_threshold[i]?;
        let w = self.warm.sweeps_to_threshold[i]?;
        Some(c as f64 / w.max(1) as f64)
    }
}

/// Solves from `initial`, tracking the error against `truth` after each sweep.
pub fn run_curve(
    kind: InitKind,
    initial: &TemperatureField,
    truth: &TemperatureField,
    config: &BenchConfig,
) -> Result<InitCurve> {
    config.validate()?;
    if initial.height() != truth.height() || initial.width() != truth.width() {
        return Err(Error::DimensionMismatch(format!(
            "initial field {}x{} vs reference {}x{}",
            initial.height(),
            initial.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mask = BoundaryMask::for_field(initial);
    let mut solver = Solver::new(initial, &mask, config.method)?;
    let initial_percent = mean_percent_error(initial.values(), truth.values());
    let mut reached: Vec<Option<usize>> = config
        .thresholds
        .iter()
        .map(|&t| (initial_percent <= t).then_some(0))
        .collect();
    let smallest = *config.thresholds.last().expect("validated nonempty");
    let mut points = Vec::new();
    let mut sweep = 0;
    while sweep < config.max_sweeps {
        if config.stop_at_last_threshold && reached.last().copied().flatten().is_some() {
            break;
        }
        solver.sweep();
        sweep += 1;
        let err = mean_percent_error(solver.values(), truth.values());
        if sweep % config.sample_every == 0 {
            points.push(CurvePoint {
                sweep,
                mean_percent: err,
            });
        }
        for (slot, &t) in reached.iter_mut().zip(&config.thresholds) {
            if slot.is_none() && err <= t {
                *slot = Some(sweep);
            }
        }
        if err <= smallest && config.stop_at_last_threshold {
            break;
        }
    }
    Ok(InitCurve {
        kind,
        initial_percent,
        points,
        sweeps_to_threshold: reached,
        sweeps_run: sweep,
    })
}

/// Runs both initialisations on every problem of `set`.
pub fn run_bench(predictor: &dyn FieldPredictor, set: &EvalSet, config: &BenchConfig) -> Result<Vec<BenchResult>> {
    config.validate()?;
    let mut out = Vec::with_capacity(set.len());
    for (id, (problem, truth)) in set.problems.iter().zip(&set.truths).enumerate() {
        if let Some(size) = predictor.input_size() {
            if size != problem.height() || size != problem.width() {
                return Err(Error::SizeMismatch(format!(
                    "model input size {size} does not match problem size {}x{}",
                    problem.height(),
                    problem.width()
                )));
            }
        }
        let warm_start = predictor.predict(problem)?.with_border_of(problem)?;
        out.push(BenchResult {
            problem_id: id,
            thresholds: config.thresholds.clone(),
            warm: run_curve(InitKind::WarmStart, &warm_start, truth, config)?,
            constant: run_curve(InitKind::Constant, &constant_init(problem), truth, config)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold_percent: f64,
    pub median_warm_sweeps: Option<f64>,
    pub median_constant_sweeps: Option<f64>,
    /// Median over problems where both runs reached the threshold.
    pub median_speedup: Option<f64>,
    /// Fraction of problems where the warm start needed strictly fewer sweeps.
    pub warm_strictly_fewer: f64,
    pub n_compared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub method: Method,
    pub n_problems: usize,
    pub median_initial_percent_warm: f64,
    pub median_initial_percent_constant: f64,
    pub thresholds: Vec<ThresholdSummary>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

pub fn summarize(results: &[BenchResult], method: Method) -> Result<BenchSummary> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no benchmark results to summarize".into()))?;
    let sweeps = |kind: fn(&BenchResult) -> &InitCurve, i: usize| -> Vec<f64> {
        results
            .iter()
            .filter_map(|r| kind(r).sweeps_to_threshold[i].map(|s| s as f64))
            .collect()
    };
    let thresholds = first
        .thresholds
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let strictly_fewer = results
                .iter()
                .filter(|r| match (r.warm.sweeps_to_threshold[i], r.constant.sweeps_to_threshold[i]) {
                    (Some(w), Some(c)) => w < c,
                    (Some(_), None) => true,
                    _ => false,
                })
                .count();
            let speedups: Vec<f64> = results.iter().filter_map(|r| r.speedup(i)).collect();
            ThresholdSummary {
                threshold_percent: t,
                median_warm_sweeps: median(sweeps(|r| &r.warm, i)),
                median_constant_sweeps: median(sweeps(|r| &r.constant, i)),
                n_compared: speedups.len(),
                median_speedup: median(speedups),
                warm_strictly_fewer: strictly_fewer as f64 / results.len() as f64,
            }
        })
        .collect();
    Ok(BenchSummary {
        method,
        n_problems: results.len(),
        median_initial_percent_warm: median(results.iter().map(|r| r.warm.initial_percent).collect())
            .expect("nonempty"),
        median_initial_percent_constant: median(results.iter().map(|r| r.constant.initial_percent).collect())
            .expect("nonempty"),
        thresholds,
    })
}

/// Curve rows: `problem_id,init_kind,sweep,mean_percent`, one per recorded point.
pub fn curves_csv(results: &[BenchResult]) -> String {
    let mut out = String::from("problem_id,init_kind,sweep,mean_percent\n");
    for r in results {
        for curve in [&r.warm, &r.constant] {
            for p in &curve.points {
                let _ = writeln!(out, "{},{},{},{:?}", r.problem_id, curve.kind.as_str(), p.sweep, p.mean_percent);
            }
        }
    }
    out
}

/// Writes `curves.csv` and `summary.json` into `dir`; returns their paths.
pub fn emit_curves(results: &[BenchResult], method: Method, dir: &Path) -> Result<[std::path::PathBuf; 2]> {
    let summary = summarize(results, method)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("curves.csv");
    fs::write(&csv_path, curves_csv(results)).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok([csv_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::{fd_solve, ground_truth, GroundTruthOracle, SolverConfig, GROUND_TRUTH_TOLERANCE};
    use crate::field::{make_problem, BoundarySpec};

    fn set(size: usize, n: usize, seed: u64) -> EvalSet {
        EvalSet::generate(size, n, seed, &GroundTruthOracle::uncached()).unwrap()
    }

    #[test]
    fn perfect_warm_start_needs_no_sweeps() {
        let s = set(16, 3, 1);
        let perfect = |p: &TemperatureField| ground_truth(p);
        let results = run_bench(&perfect, &s, &BenchConfig::new(16)).unwrap();
        for r in &results {
            assert!(r.warm.sweeps_to_threshold.iter().all(|s| *s == Some(0)));
            assert!(r.constant.sweeps_to_threshold.iter().all(|s| s.is_some_and(|v| v > 0)));
        }
    }

    #[test]
    fn constant_warm_start_gives_identical_curves() {
        let s = set(16, 2, 2);
        let stub = |p: &TemperatureField| Ok(constant_init(p));
        for r in run_bench(&stub, &s, &BenchConfig::new(16)).unwrap() {
            assert_eq!(r.warm.points, r.constant.points);
            assert_eq!(r.warm.sweeps_to_threshold, r.constant.sweeps_to_threshold);
            assert_eq!(r.warm.initial_percent, r.constant.initial_percent);
        }
    }

    #[test]
    fn fixed_budget_row_count() {
        let s = set(12, 1, 3);
        let mut config = BenchConfig::new(12);
        config.max_sweeps = 100;
        config.stop_at_last_threshold = false;
        let stub = |p: &TemperatureField| Ok(constant_init(p));
        let results = run_bench(&stub, &s, &config).unwrap();
        let csv = curves_csv(&results);
        assert_eq!(csv.lines().count(), 1 + 200);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,warm-start,1,"));

        config.sample_every = 10;
        let sparse = run_bench(&stub, &s, &config).unwrap();
        assert_eq!(curves_csv(&sparse).lines().count(), 1 + 20);
        assert_eq!(sparse[0].warm.sweeps_to_threshold, results[0].warm.sweeps_to_threshold);
    }

    #[test]
    fn every_threshold_is_eventually_reached() {
        let s = set(16, 2, 4);
        let stub = |p: &TemperatureField| Ok(constant_init(p));
        for r in run_bench(&stub, &s, &BenchConfig::new(16)).unwrap() {
            assert!(r.constant.sweeps_to_threshold.iter().all(Option::is_some));
            let reached: Vec<usize> = r.constant.sweeps_to_threshold.iter().map(|s| s.unwrap()).collect();
            assert!(reached.windows(2).all(|w| w[0] <= w[1]));
            assert!(r.constant.points.iter().all(|p| p.mean_percent >= 0.0));
        }
    }

    #[test]
    fn both_starts_reach_the_same_solution() {
        let problem = make_problem(&BoundarySpec {
            top: 90.0,
            bottom: 5.0,
            left: 40.0,
            right: 70.0,
            size: 20,
        })
        .unwrap();
        let truth = ground_truth(&problem).unwrap();
        let noisy = truth.map(|v| v + 3.0).unwrap().with_border_of(&problem).unwrap();
        let mask = BoundaryMask::for_field(&problem);
        let config = SolverConfig::for_size(Method::Jacobi, GROUND_TRUTH_TOLERANCE, 20);
        let (a, _) = fd_solve(&noisy, &mask, &config).unwrap();
        let (b, _) = fd_solve(&constant_init(&problem), &mask, &config).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 10.0 * GROUND_TRUTH_TOLERANCE * 100.0, "{x} vs {y}");
        }
    }

    #[test]
    fn size_mismatch_names_both_sizes() {
        struct Sized32;
        impl FieldPredictor for Sized32 {
            fn predict(&self, p: &TemperatureField) -> Result<TemperatureField> {
                Ok(p.clone())
            }
            fn input_size(&self) -> Option<usize> {
                Some(32)
            }
        }
        let err = run_bench(&Sized32, &set(16, 1, 5), &BenchConfig::new(16)).unwrap_err();
        assert_eq!(err.kind(), "size-mismatch");
        let msg = err.to_string();
        assert!(msg.contains("32") && msg.contains("16x16"), "{msg}");
    }

    #[test]
    fn summary_and_files() {
        let s = set(16, 3, 6);
        let perfect = |p: &TemperatureField| ground_truth(p);
        let results = run_bench(&perfect, &s, &BenchConfig::new(16)).unwrap();
        let summary = summarize(&results, Method::Jacobi).unwrap();
        assert_eq!(summary.thresholds.len(), 4);
        for t in &summary.thresholds {
            assert!(t.median_speedup.unwrap() >= 1.0);
        }
        // constant init can start below the loosest threshold, never the tightest
        assert_eq!(summary.thresholds[3].warm_strictly_fewer, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let [csv, json] = emit_curves(&results, Method::Jacobi, dir.path()).unwrap();
        assert!(csv.exists() && json.exists());
        assert!(emit_curves(&[], Method::Jacobi, dir.path()).is_err());
    }

    #[test]
    fn identical_inputs_identical_results() {
        let s = set(16, 2, 7);
        let stub = |p: &TemperatureField| constant_init(p).map(|v| v * 0.9)?.with_border_of(p);
        let a = run_bench(&stub, &s, &BenchConfig::new(16)).unwrap();
        let b = run_bench(&stub, &s, &BenchConfig::new(16)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let mut config = BenchConfig::new(16);
        config.thresholds = vec![1.0, 5.0];
        assert!(config.validate().is_err());
        config.thresholds = vec![];
        assert!(config.validate().is_err());
        config.thresholds = vec![1.0, -1.0];
        assert!(config.validate().is_err());
    }
}
