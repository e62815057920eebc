//! Scoring predictors against finite-difference reference solutions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fd::GroundTruthOracle;
use crate::field::{make_problem, pixel_percents, sample_boundary, BoundarySpec, ErrorReport, TemperatureField};
use crate::model::FieldPredictor;

/// Random source for held-out problems of `seed`. Uses a different ChaCha
/// stream than [`crate::trainer::training_rng`], so evaluation problems never
/// coincide with training draws for the same seed.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Held-out problems with their reference solutions.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub specs: Vec<BoundarySpec>,
    pub problems: Vec<TemperatureField>,
    pub truths: Vec<TemperatureField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Over all pixels of all problems.
    pub aggregate: ErrorReport,
    pub per_problem: Vec<ErrorReport>,
}

impl EvalSet {
    pub fn generate(size: usize, n_problems: usize, seed: u64, oracle: &GroundTruthOracle) -> Result<Self> {
        let mut rng = eval_rng(seed);
        let specs = (0..n_problems)
            .map(|_| sample_boundary(&mut rng, size))
            .collect::<Result<Vec<_>>>()?;
        let problems = specs.iter().map(make_problem).collect::<Result<Vec<_>>>()?;
        let truths = problems.iter().map(|p| oracle.solve(p)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            specs,
            problems,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn evaluate(&self, predictor: &dyn FieldPredictor) -> Result<EvalOutcome> {
        let mut all = Vec::new();
        let mut per_problem = Vec::with_capacity(self.len());
        for (p, truth) in self.problems.iter().zip(&self.truths) {
            let pred = predictor.predict(p)?;
            let percents = pixel_percents(&pred, truth)?;
            per_problem.push(ErrorReport::from_percents(&percents));
            all.extend(percents);
        }
        Ok(EvalOutcome {
            aggregate: ErrorReport::from_percents(&all),
            per_problem,
        })
    }
}

/// Samples `n_problems` held-out problems, solves them, and scores `predictor`.
pub fn evaluate(
    predictor: &dyn FieldPredictor,
    size: usize,
    n_problems: usize,
    seed: u64,
    oracle: &GroundTruthOracle,
) -> Result<EvalOutcome> {
    EvalSet::generate(size, n_problems, seed, oracle)?.evaluate(predictor)
}
