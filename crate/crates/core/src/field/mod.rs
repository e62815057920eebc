//! Temperature grids, random Dirichlet problems and error metrics.
//!
//! A [`TemperatureField`] is a dense row-major grid of temperatures in degrees.
//! Generated problems carry four constant edge temperatures on the border ring
//! and zeros in the interior.

mod io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_field, read_field_csv, read_field_pgm, write_field, write_field_csv, write_field_pgm};

/// Upper end of the edge temperature sampling range; also the denominator of
/// the percent error metric.
pub const TEMPERATURE_RANGE: f64 = 100.0;

/// Smallest grid side that still has an interior node.
pub const MIN_SIDE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl TemperatureField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidDimension(format!(
                "field must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} field needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value at ({}, {}) is {}",
                pos / width,
                pos % width,
                values[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    /// Builds a field by evaluating `f(row, col)` at every node.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_border(&self, row: usize, col: usize) -> bool {
        row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width
    }

    /// Values of the border ring in row-major order.
    pub fn border_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.height * self.width).filter_map(move |k| {
            let (r, c) = (k / self.width, k % self.width);
            self.is_border(r, c).then(|| self.values[k])
        })
    }

    /// Returns a copy with every value passed through `f`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Copy of `self` whose border ring is taken from `other`.
    pub fn with_border_of(&self, other: &TemperatureField) -> Result<Self> {
        check_same_dims(self, other)?;
        let mut values = self.values.clone();
        for (k, v) in values.iter_mut().enumerate() {
            if self.is_border(k / self.width, k % self.width) {
                *v = other.values[k];
            }
        }
        Self::new(self.height, self.width, values)
    }

    /// Little-endian bytes of the dimensions followed by every value; the
    /// ground-truth cache keys problems by a digest of these bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        out.extend_from_slice(&(self.height as u64).to_le_bytes());
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

pub(crate) fn check_same_dims(a: &TemperatureField, b: &TemperatureField) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Four constant edge temperatures of one square Dirichlet problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
    pub size: usize,
}

impl BoundarySpec {
    pub fn uniform(temperature: f64, size: usize) -> Self {
        Self {
            top: temperature,
            bottom: temperature,
            left: temperature,
            right: temperature,
            size,
        }
    }

    pub fn edges(&self) -> [f64; 4] {
        [self.top, self.bottom, self.left, self.right]
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_SIDE {
            return Err(Error::InvalidDimension(format!(
                "problem size must be at least {MIN_SIDE}, got {}",
                self.size
            )));
        }
        for t in self.edges() {
            if !t.is_finite() || !(0.0..=TEMPERATURE_RANGE).contains(&t) {
                return Err(Error::InvalidArgument(format!(
                    "edge temperature {t} outside [0, {TEMPERATURE_RANGE}]"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the problem field for `spec`: zero interior, constant edges.
///
/// Edges are written top, bottom, left, right, so the left and right columns
/// own the four corners.
pub fn make_problem(spec: &BoundarySpec) -> Result<TemperatureField> {
    spec.validate()?;
    let n = spec.size;
    let mut values = vec![0.0; n * n];
    for c in 0..n {
        values[c] = spec.top;
        values[(n - 1) * n + c] = spec.bottom;
    }
    for r in 0..n {
        values[r * n] = spec.left;
        values[r * n + n - 1] = spec.right;
    }
    TemperatureField::new(n, n, values)
}

/// Draws four independent Uniform(0, 100) edge temperatures.
pub fn sample_boundary<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Result<BoundarySpec> {
    if size < MIN_SIDE {
        return Err(Error::InvalidDimension(format!(
            "problem size must be at least {MIN_SIDE}, got {size}"
        )));
    }
    let mut draw = || rng.gen_range(0.0..=TEMPERATURE_RANGE);
    Ok(BoundarySpec {
        top: draw(),
        bottom: draw(),
        left: draw(),
        right: draw(),
        size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean_percent: f64,
    pub std_percent: f64,
    pub max_percent: f64,
    pub n_pixels: usize,
}

impl ErrorReport {
    /// Summarises a list of per-pixel percent errors (population std).
    pub fn from_percents(percents: &[f64]) -> Self {
        let n = percents.len();
        if n == 0 {
            return Self {
                mean_percent: 0.0,
                std_percent: 0.0,
                max_percent: 0.0,
                n_pixels: 0,
            };
        }
        let mean = percents.iter().sum::<f64>() / n as f64;
        let var = percents.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
        let max = percents.iter().cloned().fold(0.0, f64::max);
        Self {
            mean_percent: mean,
            std_percent: var.sqrt(),
            max_percent: max,
            n_pixels: n,
        }
    }
}

/// Percent error of each pixel: absolute error as a fraction of the 100
/// degree generation range.
pub fn pixel_percents(predicted: &TemperatureField, truth: &TemperatureField) -> Result<Vec<f64>> {
    check_same_dims(predicted, truth)?;
    Ok(predicted
        .values
        .iter()
        .zip(&truth.values)
        .map(|(p, t)| (p - t).abs() / TEMPERATURE_RANGE * 100.0)
        .collect())
}

pub fn per_pixel_error(predicted: &TemperatureField, truth: &TemperatureField) -> Result<ErrorReport> {
    Ok(ErrorReport::from_percents(&pixel_percents(predicted, truth)?))
}

/// Mean percent error without materialising the per-pixel vector.
pub fn mean_percent_error(predicted: &[f64], truth: &[f64]) -> f64 {
    let total: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    total / predicted.len() as f64 / TEMPERATURE_RANGE * 100.0
}
