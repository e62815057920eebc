//! Recovering the Laplace stencil from converged solutions alone.
//!
//! A learnable 3x3 convolution is slid over reference solutions and the sum of
//! absolute responses is minimised. That objective is trivially minimised by
//! the zero kernel, so by default every step is followed by a projection back
//! onto the unit sphere. [`KernelConstraint::None`] keeps the unconstrained
//! behaviour; its history shows the kernel shrinking towards zero.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::fd::GroundTruthOracle;
use crate::field::{make_problem, sample_boundary, TEMPERATURE_RANGE};
use crate::stencil::Stencil3x3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelConstraint {
    /// Rescale to unit Frobenius norm after every step.
    UnitNorm,
    /// Pin the centre weight to [`KernelLearnConfig::center`].
    FixedCenter,
    None,
}

impl FromStr for KernelConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit-norm" | "unit_norm" => Ok(Self::UnitNorm),
            "fixed-center" | "fixed_center" => Ok(Self::FixedCenter),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown constraint {other:?} (expected unit-norm, fixed-center or none)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UnitNorm => "unit-norm",
            Self::FixedCenter => "fixed-center",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelLearnConfig {
    pub grid_size: usize,
    /// Fresh converged fields per optimisation step.
    pub n_samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Heavy momentum averages out the sign flips of the absolute-value
    /// gradient along the well-determined directions.
    pub beta1: f64,
    /// Anneal the step size to zero along a half cosine.
    pub cosine_decay: bool,
    pub constraint: KernelConstraint,
    /// Centre value used by [`KernelConstraint::FixedCenter`].
    pub center: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl KernelLearnConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            grid_size: 8,
            n_samples: 8,
            steps: 5000,
            learning_rate: 0.1,
            beta1: 0.99,
            cosine_decay: true,
            constraint: KernelConstraint::UnitNorm,
            center: 1.0,
            init_std: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(Error::InvalidDimension(format!(
                "kernel learning needs grid_size >= 3, got {}",
                self.grid_size
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::InvalidArgument(format!("init_std must be positive, got {}", self.init_std)));
        }
        if !self.center.is_finite() || self.center == 0.0 {
            return Err(Error::InvalidArgument(format!("center must be finite and nonzero, got {}", self.center)));
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            ..AdamConfig::with_learning_rate(self.learning_rate)
        }
    }
}

/// One optimisation step, recorded after the projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelStep {
    pub step: usize,
    /// Summed absolute residual over the step's samples, before the update.
    pub objective: f64,
    /// Frobenius norm of the kernel after the update.
    pub norm: f64,
    /// Cosine similarity with the canonical stencil, sign-insensitive.
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHistory {
    pub steps: Vec<KernelStep>,
}

impl KernelHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,objective,norm,alignment\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", s.step, s.objective, s.norm, s.alignment);
        }
        out
    }
}

/// Unit Frobenius norm with a positive centre.
pub fn normalize_stencil(s: &Stencil3x3) -> Result<Stencil3x3> {
    let norm = s.frobenius_norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidArgument(format!("cannot normalize stencil with norm {norm}")));
    }
    let sign = if s.center() < 0.0 { -1.0 } else { 1.0 };
    Ok(s.scaled(sign / norm))
}

/// Mean off-centre cross weight divided by the centre weight.
pub fn cross_ratio(s: &Stencil3x3) -> f64 {
    let w = &s.weights;
    (w[0][1] + w[1][0] + w[1][2] + w[2][1]) / 4.0 / w[1][1]
}

fn project(weights: &mut Tensor, config: &KernelLearnConfig) {
    let data = weights.data_mut();
    match config.constraint {
        KernelConstraint::UnitNorm => {
            let norm = data.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                data.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
            }
        }
        KernelConstraint::FixedCenter => data[4] = config.center as f32,
        KernelConstraint::None => {}
    }
}

/// Drops the gradient component that the projection would undo anyway, so the
/// optimiser's moment estimates only see movement along the constraint.
fn tangent(grad: &mut [f32], weights: &Tensor, constraint: KernelConstraint) {
    match constraint {
        KernelConstraint::UnitNorm => {
            let w = weights.data();
            let radial: f64 = grad.iter().zip(w).map(|(&g, &v)| f64::from(g) * f64::from(v)).sum();
            let norm2: f64 = w.iter().map(|&v| f64::from(v).powi(2)).sum();
            if norm2 > 0.0 {
                for (g, &v) in grad.iter_mut().zip(w) {
                    *g = (f64::from(*g) - radial / norm2 * f64::from(v)) as f32;
                }
            }
        }
        KernelConstraint::FixedCenter => grad[4] = 0.0,
        KernelConstraint::None => {}
    }
}

/// Optimises a 3x3 kernel against freshly solved fields.
pub fn learn_kernel(config: &KernelLearnConfig, oracle: &GroundTruthOracle) -> Result<(Stencil3x3, KernelHistory)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).expect("validated std");
    let mut weights = Tensor::from_fn(&[1, 1, 3, 3], |_| normal.sample(&mut rng) as f32);
    project(&mut weights, config);

    let mut adam = Adam::new(config.adam(), [&weights])?;
    let n = config.grid_size;
    let canonical = Stencil3x3::canonical();
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if config.cosine_decay {
            let progress = step as f64 / config.steps as f64;
            adam.set_learning_rate(config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))?;
        }
        let mut batch = Vec::with_capacity(config.n_samples * n * n);
        for _ in 0..config.n_samples {
            let problem = make_problem(&sample_boundary(&mut rng, n)?)?;
            let truth = oracle.solve(&problem)?;
            batch.extend(truth.values().iter().map(|&v| (v / TEMPERATURE_RANGE) as f32));
        }

        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![config.n_samples, 1, n, n], batch)?);
        let w = g.param(weights.clone());
        let response = g.conv2d(x, w, None, 1, 0)?;
        let magnitude = g.abs(response);
        let objective_var = g.sum(magnitude);
        let objective = f64::from(g.value(objective_var).data()[0]);
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("kernel objective at step {step} is {objective}")));
        }
        g.backward(objective_var)?;
        let mut grad = g.grad(w).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; 9]);
        tangent(&mut grad, &weights, config.constraint);
        adam.step(&mut [&mut weights], &[Some(&grad)])?;
        project(&mut weights, config);

        let current = Stencil3x3::from_tensor(&weights)?;
        let norm = current.frobenius_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("kernel weights diverged at step {step}")));
        }
        let alignment = if norm > 0.0 { current.cosine_similarity(&canonical).abs() } else { 0.0 };
        history.push(KernelStep {
            step,
            objective,
            norm,
            alignment,
        });
    }

    Ok((Stencil3x3::from_tensor(&weights)?, KernelHistory { steps: history }))
}

/// JSON record written next to the learned stencil.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelReport {
    pub config: KernelLearnConfig,
    pub stencil: [f64; 9],
    pub normalized: Option<[f64; 9]>,
    pub cosine_to_canonical: Option<f64>,
    pub cross_ratio: Option<f64>,
    pub final_objective: Option<f64>,
}

impl KernelReport {
    pub fn new(config: &KernelLearnConfig, stencil: &Stencil3x3, history: &KernelHistory) -> Self {
        let normalized = normalize_stencil(stencil).ok();
        Self {
            config: config.clone(),
            stencil: stencil.flat(),
            normalized: normalized.map(|s| s.flat()),
            cosine_to_canonical: normalized.map(|s| s.cosine_similarity(&Stencil3x3::canonical())),
            cross_ratio: normalized.map(|s| cross_ratio(&s)),
            final_objective: history.steps.last().map(|s| s.objective),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::ground_truth;
    use crate::stencil::{physics_residual, Grid};

    /// Learned weights reported alongside the original experiment.
    const REPORTED: [f64; 9] = [0.0, 0.0545, 0.0001, 0.0545, -0.2181, 0.0545, 0.0, 0.0545, 0.0];

    #[test]
    fn canonical_normalizes_to_itself_over_sqrt20() {
        let s = normalize_stencil(&Stencil3x3::canonical()).unwrap();
        let r = 20f64.sqrt();
        for (a, b) in s.flat().iter().zip(Stencil3x3::canonical().flat()) {
            assert!((a - b / r).abs() < 1e-15);
        }
        assert!((s.center() - 4.0 / r).abs() < 1e-15);
    }

    #[test]
    fn reported_kernel_has_quarter_structure() {
        let reported = Stencil3x3::from_flat(REPORTED);
        assert!((0.0545f64 / -0.2181 - (-0.2499)).abs() < 1e-4);
        let s = normalize_stencil(&reported).unwrap();
        for (r, c) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert!((s.weights[r][c] - (-0.25 * s.center())).abs() < 0.003);
        }
        assert!((cross_ratio(&s) + 0.25).abs() < 0.003);
        assert!(s.cosine_similarity(&Stencil3x3::canonical()) > 0.99);
    }

    #[test]
    fn zero_stencil_cannot_be_normalized() {
        let err = normalize_stencil(&Stencil3x3::from_flat([0.0; 9])).unwrap_err();
        assert_eq!(err.kind(), "invalid-argument");
    }

    #[test]
    fn canonical_objective_vanishes_on_converged_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = ground_truth(&make_problem(&sample_boundary(&mut rng, 8).unwrap()).unwrap()).unwrap();
        let residual = physics_residual(&Grid::from(&truth), &Stencil3x3::canonical()).unwrap();
        let total: f64 = residual.values.iter().map(|v| v.abs()).sum();
        assert!(total <= 4.0 * 1e-8 * residual.values.len() as f64, "total {total}");
    }

    #[test]
    fn unit_norm_run_recovers_the_stencil() {
        let mut config = KernelLearnConfig::new(11);
        config.steps = 5000;
        let (learned, history) = learn_kernel(&config, &GroundTruthOracle::uncached()).unwrap();
        assert!((learned.frobenius_norm() - 1.0).abs() < 1e-5);
        let s = normalize_stencil(&learned).unwrap();
        assert!(s.cosine_similarity(&Stencil3x3::canonical()) > 0.99, "{s:?}");
        let first = history.steps[..50].iter().map(|s| s.objective).sum::<f64>();
        let last = history.steps[history.steps.len() - 50..].iter().map(|s| s.objective).sum::<f64>();
        assert!(last < first / 10.0, "objective {first} -> {last}");
    }

    #[test]
    fn fixed_center_run_pins_the_center() {
        let mut config = KernelLearnConfig::new(3);
        config.steps = 1500;
        config.constraint = KernelConstraint::FixedCenter;
        let (learned, _) = learn_kernel(&config, &GroundTruthOracle::uncached()).unwrap();
        assert_eq!(learned.center(), 1.0);
        assert!((cross_ratio(&learned) + 0.25).abs() < 0.02, "{learned:?}");
    }

    #[test]
    fn unconstrained_run_shrinks() {
        let mut config = KernelLearnConfig::new(5);
        config.steps = 800;
        config.constraint = KernelConstraint::None;
        let (_, history) = learn_kernel(&config, &GroundTruthOracle::uncached()).unwrap();
        let first = history.steps[0].norm;
        let last = history.steps.last().unwrap().norm;
        assert!(last < 0.5 * first, "norm {first} -> {last}");
    }

    #[test]
    fn same_seed_same_kernel() {
        let mut config = KernelLearnConfig::new(9);
        config.steps = 50;
        let oracle = GroundTruthOracle::uncached();
        let a = learn_kernel(&config, &oracle).unwrap();
        let b = learn_kernel(&config, &oracle).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_csv_has_a_row_per_step() {
        let mut config = KernelLearnConfig::new(1);
        config.steps = 7;
        let (_, history) = learn_kernel(&config, &GroundTruthOracle::uncached()).unwrap();
        assert_eq!(history.to_csv().lines().count(), 8);
    }

    #[test]
    fn rejects_tiny_grids() {
        let mut config = KernelLearnConfig::new(1);
        config.grid_size = 2;
        assert_eq!(config.validate().unwrap_err().kind(), "invalid-dimension");
        assert!("sideways".parse::<KernelConstraint>().is_err());
        assert_eq!("unit-norm".parse::<KernelConstraint>().unwrap(), KernelConstraint::UnitNorm);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_scale_invariant(w in prop::array::uniform9(-5.0f64..5.0), c in 0.01f64..100.0) {
                let s = Stencil3x3::from_flat(w);
                prop_assume!(s.frobenius_norm() > 1e-3);
                let a = normalize_stencil(&s).unwrap();
                let b = normalize_stencil(&s.scaled(c)).unwrap();
                for (x, y) in a.flat().iter().zip(b.flat()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                prop_assert!((a.frobenius_norm() - 1.0).abs() < 1e-12);
                prop_assert!(a.center() >= 0.0);
            }
        }
    }
}
