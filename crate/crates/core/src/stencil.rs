//! The stencil-encoded physics loss.
//!
//! The discrete Laplace rule (each free node equals the mean of its four
//! neighbours) is a 3x3 kernel; its valid-mode response on a field is the
//! residual, and the loss is the mean squared residual. A coarse-to-fine
//! pyramid of strided subsamplings, weighted by a [`LambdaSchedule`], forms
//! the multiscale loss used during training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AxisSlice, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::TemperatureField;

/// A 3x3 real kernel, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil3x3 {
    pub weights: [[f64; 3]; 3],
}

impl Stencil3x3 {
    /// `[[0,-1,0],[-1,4,-1],[0,-1,0]]`.
    pub const CANONICAL: Stencil3x3 = Stencil3x3 {
        weights: [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]],
    };

    pub fn canonical() -> Self {
        Self::CANONICAL
    }

    pub fn from_flat(w: [f64; 9]) -> Self {
        Self {
            weights: [[w[0], w[1], w[2]], [w[3], w[4], w[5]], [w[6], w[7], w[8]]],
        }
    }

    pub fn flat(&self) -> [f64; 9] {
        let w = &self.weights;
        [
            w[0][0], w[0][1], w[0][2], w[1][0], w[1][1], w[1][2], w[2][0], w[2][1], w[2][2],
        ]
    }

    pub fn center(&self) -> f64 {
        self.weights[1][1]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_flat(self.flat().map(|v| v * c))
    }

    /// Cosine similarity of the flattened weights.
    pub fn cosine_similarity(&self, other: &Stencil3x3) -> f64 {
        let dot: f64 = self.flat().iter().zip(other.flat()).map(|(a, b)| a * b).sum();
        dot / (self.frobenius_norm() * other.frobenius_norm())
    }

    /// `[1, 1, 3, 3]` tensor for use as a convolution weight.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, 3, 3], self.flat().iter().map(|&v| v as f32).collect())
            .expect("nine weights")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.numel() != 9 {
            return Err(Error::DimensionMismatch(format!(
                "stencil needs 9 weights, tensor has shape {:?}",
                t.shape()
            )));
        }
        let mut w = [0.0; 9];
        for (dst, &src) in w.iter_mut().zip(t.data()) {
            *dst = src as f64;
        }
        Ok(Self::from_flat(w))
    }

    /// Nine comma separated values on one line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.flat().iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let values: Vec<&str> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .flat_map(|l| l.split(','))
            .collect();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg,
        };
        if values.len() != 9 {
            return Err(err(format!("expected 9 values, found {}", values.len())));
        }
        let mut w = [0.0; 9];
        for (dst, tok) in w.iter_mut().zip(values) {
            *dst = tok
                .trim()
                .parse()
                .map_err(|_| err(format!("not a number: {:?}", tok.trim())))?;
        }
        Ok(Self::from_flat(w))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

/// Dense row-major grid with no minimum size, used for residuals and pyramid
/// levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} grid with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self {
            height,
            width,
            values: (0..height * width).map(|k| f(k / width, k % width)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

impl From<&TemperatureField> for Grid {
    fn from(f: &TemperatureField) -> Self {
        Self {
            height: f.height(),
            width: f.width(),
            values: f.values().to_vec(),
        }
    }
}

/// Valid-mode cross-correlation of `stencil` with `field`; the result is
/// `(h - 2) x (w - 2)`.
pub fn physics_residual(field: &Grid, stencil: &Stencil3x3) -> Result<Grid> {
    if field.height < 3 || field.width < 3 {
        return Err(Error::InvalidDimension(format!(
            "residual needs at least 3x3, got {}x{}",
            field.height, field.width
        )));
    }
    let (oh, ow) = (field.height - 2, field.width - 2);
    let w = &stencil.weights;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, row) in w.iter().enumerate() {
                for (j, &k) in row.iter().enumerate() {
                    if k != 0.0 {
                        acc += k * field.get(r + i, c + j);
                    }
                }
            }
            out.push(acc);
        }
    }
    Grid::new(oh, ow, out)
}

/// Mean squared residual.
pub fn physics_loss(field: &Grid, stencil: &Stencil3x3) -> Result<f64> {
    let res = physics_residual(field, stencil)?;
    Ok(res.values.iter().map(|v| v * v).sum::<f64>() / res.values.len() as f64)
}

/// Keeps rows and columns `0, n, 2n, ...`.
pub fn downsample_stride(field: &Grid, n: usize) -> Result<Grid> {
    if n == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    let (h, w) = (field.height.div_ceil(n), field.width.div_ceil(n));
    Ok(Grid::from_fn(h, w, |r, c| field.get(r * n, c * n)))
}

/// Downsampling factor and size floor of the loss pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub factor: usize,
    pub min_size: usize,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            factor: 4,
            min_size: 32,
        }
    }
}

impl PyramidSpec {
    /// Side lengths of every level, finest first. A level is added only while
    /// it stays at or above `min_size`; inputs already below the floor give a
    /// single level.
    pub fn level_sizes(&self, side: usize) -> Vec<usize> {
        let mut sizes = vec![side];
        if self.factor < 2 {
            return sizes;
        }
        loop {
            let next = sizes.last().unwrap().div_ceil(self.factor);
            if next < self.min_size || next < 3 {
                break;
            }
            sizes.push(next);
        }
        sizes
    }

    pub fn levels(&self, side: usize) -> usize {
        self.level_sizes(side).len()
    }
}

pub fn build_pyramid(field: &Grid, spec: PyramidSpec) -> Result<Vec<Grid>> {
    if field.height != field.width {
        return Err(Error::InvalidDimension(format!(
            "pyramid needs a square field, got {}x{}",
            field.height, field.width
        )));
    }
    let mut levels = vec![field.clone()];
    for _ in 1..spec.levels(field.height) {
        let next = downsample_stride(levels.last().unwrap(), spec.factor)?;
        levels.push(next);
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Weight mass travels linearly from the coarsest to the finest level.
    Progressive,
    /// All weight on the finest level throughout.
    FinestOnly,
}

/// Per-level loss weights as a function of training progress `t` in [0, 1].
/// Level 1 is full resolution, level `levels` the coarsest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub levels: usize,
    pub kind: ScheduleKind,
}

impl LambdaSchedule {
    pub fn progressive(levels: usize) -> Result<Self> {
        Self::new(levels, ScheduleKind::Progressive)
    }

    pub fn finest_only(levels: usize) -> Result<Self> {
        Self::new(levels, ScheduleKind::FinestOnly)
    }

    pub fn new(levels: usize, kind: ScheduleKind) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one level".into()));
        }
        Ok(Self { levels, kind })
    }

    /// At progress `t` the mass sits at position `p = L - t (L - 1)` (1-based)
    /// and is split linearly between levels `floor(p)` and `ceil(p)`.
    pub fn weight_at(&self, t: f64) -> Vec<f64> {
        let l = self.levels;
        let mut w = vec![0.0; l];
        if self.kind == ScheduleKind::FinestOnly || l == 1 {
            w[0] = 1.0;
            return w;
        }
        let t = t.clamp(0.0, 1.0);
        let p = l as f64 - t * (l as f64 - 1.0);
        let lo = p.floor();
        let frac = p - lo;
        let lo_idx = lo as usize - 1;
        if frac == 0.0 {
            w[lo_idx] = 1.0;
        } else {
            w[lo_idx] = 1.0 - frac;
            w[lo_idx + 1] = frac;
        }
        w
    }
}

/// `sum_i lambda_i(t) * physics_loss(level_i)` over the default pyramid.
pub fn multiscale_loss(field: &Grid, stencil: &Stencil3x3, schedule: &LambdaSchedule, t: f64) -> Result<f64> {
    multiscale_loss_with(field, stencil, schedule, t, PyramidSpec::default())
}

pub fn multiscale_loss_with(
    field: &Grid,
    stencil: &Stencil3x3,
    schedule: &LambdaSchedule,
    t: f64,
    spec: PyramidSpec,
) -> Result<f64> {
    let pyramid = build_pyramid(field, spec)?;
    if pyramid.len() != schedule.levels {
        return Err(Error::DimensionMismatch(format!(
            "pyramid has {} levels, schedule has {}",
            pyramid.len(),
            schedule.levels
        )));
    }
    let mut total = 0.0;
    for (level, lambda) in pyramid.iter().zip(schedule.weight_at(t)) {
        if lambda > 0.0 {
            total += lambda * physics_loss(level, stencil)?;
        }
    }
    Ok(total)
}

/// Differentiable physics loss of a `[n, 1, h, w]` batch: mean squared
/// response of `stencil` (a `[1, 1, 3, 3]` node).
pub fn graph_physics_loss(g: &mut Graph, field: Var, stencil: Var) -> Result<Var> {
    let res = g.conv2d(field, stencil, None, 1, 0)?;
    let sq = g.square(res);
    Ok(g.mean(sq))
}

/// Differentiable multiscale loss with explicit per-level weights. Levels with
/// zero weight are skipped.
pub fn graph_multiscale_loss(
    g: &mut Graph,
    field: Var,
    stencil: Var,
    weights: &[f64],
    spec: PyramidSpec,
) -> Result<Var> {
    let shape = g.shape(field).to_vec();
    let [n, c, h, w] = match shape[..] {
        [n, c, h, w] => [n, c, h, w],
        _ => {
            return Err(Error::ShapeMismatch {
                op: "multiscale_loss",
                lhs: shape,
                rhs: vec![0, 1, 0, 0],
            })
        }
    };
    if h != w {
        return Err(Error::InvalidDimension(format!("pyramid needs a square field, got {h}x{w}")));
    }
    let levels = spec.levels(h);
    if levels != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "pyramid has {levels} levels, schedule has {}",
            weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut stride = 1;
    for &lambda in weights {
        if lambda > 0.0 {
            let level = if stride == 1 {
                field
            } else {
                let axes = [
                    AxisSlice::full(n),
                    AxisSlice::full(c),
                    AxisSlice::strided(h, stride),
                    AxisSlice::strided(w, stride),
                ];
                g.slice(field, &axes)?
            };
            let loss = graph_physics_loss(g, level, stencil)?;
            let weighted = g.scale(loss, lambda as f32);
            total = Some(match total {
                Some(acc) => g.add(acc, weighted)?,
                None => weighted,
            });
        }
        stride *= spec.factor;
    }
    total.ok_or_else(|| Error::InvalidArgument("all level weights are zero".into()))
}
