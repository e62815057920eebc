//! Label-free training loop.
//!
//! Problems are sampled on the fly; the only training signal is the multiscale
//! stencil loss of the network output. This module deliberately has no access
//! to the finite-difference solver: evaluation against reference solutions is
//! injected by the caller through [`Evaluator`].

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::field::{make_problem, sample_boundary, ErrorReport, TemperatureField};
use crate::model::{problems_to_tensor, TrainingMetadata, UNet};
use crate::stencil::{
    graph_multiscale_loss, physics_loss, Grid, LambdaSchedule, PyramidSpec, ScheduleKind, Stencil3x3,
};

/// Adam step size for training. Larger than the optimizer's generic default:
/// the smooth error modes are nearly invisible to the stencil loss and
/// converge too slowly at 2e-4.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Adam first-moment decay for training. Once the loss is small the gradient
/// is mostly sampling noise, and at 0.9 the resulting steps push the weakly
/// constrained smooth modes around enough to swing the held-out error by
/// several percent between epochs.
pub const DEFAULT_BETA1: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_size: usize,
    pub epochs: usize,
    pub problems_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    pub seed: u64,
    pub curriculum: ScheduleKind,
    pub pyramid: PyramidSpec,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
    pub eval_set_size: usize,
}

impl TrainConfig {
    pub fn new(input_size: usize, seed: u64) -> Self {
        Self {
            input_size,
            epochs: 128,
            problems_per_epoch: 256,
            batch_size: if input_size <= 128 { 16 } else { 4 },
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: DEFAULT_BETA1,
            seed,
            curriculum: ScheduleKind::Progressive,
            pyramid: PyramidSpec::default(),
            eval_every: 8,
            eval_set_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("problems_per_epoch", self.problems_per_epoch),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("eval_set_size", self.eval_set_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::InvalidArgument(format!("beta1 must be in (0, 1), got {}", self.beta1)));
        }
        Ok(())
    }

    pub fn lambda_levels(&self) -> usize {
        self.pyramid.levels(self.input_size)
    }

    pub fn schedule(&self) -> Result<LambdaSchedule> {
        LambdaSchedule::new(self.lambda_levels(), self.curriculum.clone())
    }

    /// Curriculum progress of epoch `e` (0-based): `e / (epochs - 1)`.
    pub fn progress(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            1.0
        } else {
            epoch as f64 / (self.epochs - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: Vec<f64>,
    pub mean_multiscale_loss: f64,
    pub mean_physics_loss: f64,
    pub eval: Option<ErrorReport>,
    /// Excluded from equality-sensitive outputs such as the CSV log.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// One row per epoch. Wall-clock time is left out so that reruns produce
    /// identical files.
    pub fn to_csv(&self) -> String {
        let levels = self.records.first().map_or(0, |r| r.lambda.len());
        let mut out = String::from("epoch");
        for i in 1..=levels {
            out.push_str(&format!(",lambda_{i}"));
        }
        out.push_str(",mean_multiscale_loss,mean_physics_loss,eval_mean_percent,eval_std_percent,eval_max_percent\n");
        for r in &self.records {
            out.push_str(&r.epoch.to_string());
            for l in &r.lambda {
                out.push_str(&format!(",{l:?}"));
            }
            out.push_str(&format!(",{:?},{:?}", r.mean_multiscale_loss, r.mean_physics_loss));
            match &r.eval {
                Some(e) => out.push_str(&format!(",{:?},{:?},{:?}", e.mean_percent, e.std_percent, e.max_percent)),
                None => out.push_str(",,,"),
            }
            out.push('\n');
        }
        out
    }

    pub fn last_eval(&self) -> Option<&ErrorReport> {
        self.records.iter().rev().find_map(|r| r.eval.as_ref())
    }
}

/// Callback scoring the current model; called with the 0-based epoch.
pub type Evaluator<'a> = dyn FnMut(&UNet, usize) -> Result<ErrorReport> + 'a;

/// Random source for training problems of `seed`.
pub fn training_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn train(model: UNet, config: &TrainConfig, evaluator: Option<&mut Evaluator<'_>>) -> Result<(UNet, TrainLog)> {
    train_with_progress(model, config, evaluator, |_| {})
}

/// [`train`] with a hook invoked after every epoch.
pub fn train_with_progress(
    mut model: UNet,
    config: &TrainConfig,
    mut evaluator: Option<&mut Evaluator<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(UNet, TrainLog)> {
    config.validate()?;
    if model.config().input_size != config.input_size {
        return Err(Error::SizeMismatch(format!(
            "model input size {} vs training size {}",
            model.config().input_size,
            config.input_size
        )));
    }
    let schedule = config.schedule()?;
    let stencil = Stencil3x3::canonical();
    let adam_config = AdamConfig {
        beta1: config.beta1,
        ..AdamConfig::with_learning_rate(config.learning_rate)
    };
    let mut adam = Adam::new(adam_config, model.params())?;
    let mut rng = training_rng(config.seed);
    let mut log = TrainLog::default();
    let n = config.input_size;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let t = config.progress(epoch);
        let lambda = schedule.weight_at(t);
        let mut remaining = config.problems_per_epoch;
        let mut batch_idx = 0;
        let (mut ms_sum, mut phys_sum, mut count) = (0.0f64, 0.0f64, 0usize);
        while remaining > 0 {
            let bs = remaining.min(config.batch_size);
            remaining -= bs;
            let problems = (0..bs)
                .map(|_| make_problem(&sample_boundary(&mut rng, n)?))
                .collect::<Result<Vec<TemperatureField>>>()?;
            let input = problems_to_tensor(&problems, n)?;

            let mut g = Graph::new();
            let x = g.constant(input);
            let pass = model.forward(&mut g, x, true)?;
            let k = g.constant(stencil.to_tensor());
            let loss = graph_multiscale_loss(&mut g, pass.output, k, &lambda, config.pyramid)?;
            let loss_value = g.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss_value} at epoch {epoch}, batch {batch_idx}, lambda {lambda:?}"
                )));
            }
            let phys = batch_physics_loss(g.value(pass.output), &stencil)?;
            g.backward(loss)?;
            let grads: Vec<Option<&[f32]>> = pass.params.iter().map(|&v| g.grad(v)).collect();
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            adam.step(&mut params, &grads)?;

            ms_sum += loss_value * bs as f64;
            phys_sum += phys * bs as f64;
            count += bs;
            batch_idx += 1;
        }
        let is_last = epoch + 1 == config.epochs;
        let eval = match evaluator.as_deref_mut() {
            Some(f) if (epoch + 1) % config.eval_every == 0 || is_last => Some(f(&model, epoch)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            lambda,
            mean_multiscale_loss: ms_sum / count as f64,
            mean_physics_loss: phys_sum / count as f64,
            eval,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    model.metadata = Some(TrainingMetadata {
        epochs: config.epochs,
        seed: config.seed,
        lambda_progress: config.progress(config.epochs - 1),
    });
    Ok((model, log))
}

/// Mean full-resolution physics loss over a `[n, 1, h, w]` batch.
fn batch_physics_loss(out: &Tensor, stencil: &Stencil3x3) -> Result<f64> {
    let [n, _, h, w] = out.dims4("physics_loss")?;
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..n {
        let values = out.data()[b * plane..(b + 1) * plane].iter().map(|&v| v as f64).collect();
        total += physics_loss(&Grid::new(h, w, values)?, stencil)?;
    }
    Ok(total / n as f64)
}
