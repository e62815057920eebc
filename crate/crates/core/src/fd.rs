//! Iterative finite-difference solver for the discrete Laplace equation.
//!
//! Every free node is repeatedly replaced by the mean of its four neighbours.
//! Convergence is declared when the largest absolute nodal change of a full
//! sweep drops to the tolerance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{self, TemperatureField};

/// Nodal-change tolerance of the reference solutions, in degrees.
pub const GROUND_TRUTH_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Jacobi,
    GaussSeidel,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Method::Jacobi),
            "gauss-seidel" | "gauss_seidel" => Ok(Method::GaussSeidel),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Jacobi => "jacobi",
            Method::GaussSeidel => "gauss-seidel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Max absolute nodal change per sweep, degrees.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl SolverConfig {
    pub fn new(method: Method, tolerance: f64, max_sweeps: usize) -> Result<Self> {
        let cfg = Self {
            method,
            tolerance,
            max_sweeps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sweep budget generous enough for an `n`x`n` grid to reach `tolerance`.
    pub fn for_size(method: Method, tolerance: f64, n: usize) -> Self {
        Self {
            method,
            tolerance,
            max_sweeps: 10 * n * n + 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("max_sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub sweeps_used: usize,
    pub converged: bool,
    /// Max nodal change of each sweep.
    pub residual_history: Vec<f64>,
}

/// Per-cell flags marking nodes whose values are held fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    height: usize,
    width: usize,
    fixed: Vec<bool>,
}

impl BoundaryMask {
    pub fn border(height: usize, width: usize) -> Self {
        let fixed = (0..height * width)
            .map(|k| {
                let (r, c) = (k / width, k % width);
                r == 0 || c == 0 || r + 1 == height || c + 1 == width
            })
            .collect();
        Self {
            height,
            width,
            fixed,
        }
    }

    pub fn for_field(field: &TemperatureField) -> Self {
        Self::border(field.height(), field.width())
    }

    pub fn from_flags(height: usize, width: usize, fixed: Vec<bool>) -> Result<Self> {
        if fixed.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask of {height}x{width} needs {} flags, got {}",
                height * width,
                fixed.len()
            )));
        }
        Ok(Self {
            height,
            width,
            fixed,
        })
    }

    pub fn is_fixed(&self, row: usize, col: usize) -> bool {
        self.fixed[row * self.width + col]
    }

    pub fn fix(&mut self, row: usize, col: usize) {
        self.fixed[row * self.width + col] = true;
    }
}

/// Incremental solver state; one call to [`Solver::sweep`] is one full-grid
/// iteration.
pub struct Solver<'a> {
    width: usize,
    height: usize,
    values: Vec<f64>,
    scratch: Vec<f64>,
    mask: &'a BoundaryMask,
    method: Method,
}

impl<'a> Solver<'a> {
    pub fn new(initial: &TemperatureField, mask: &'a BoundaryMask, method: Method) -> Result<Self> {
        if mask.height != initial.height() || mask.width != initial.width() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs field {}x{}",
                mask.height,
                mask.width,
                initial.height(),
                initial.width()
            )));
        }
        let (h, w) = (initial.height(), initial.width());
        for r in 0..h {
            for c in 0..w {
                let on_border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
                if on_border && !mask.is_fixed(r, c) {
                    return Err(Error::InvalidArgument(format!(
                        "border cell ({r}, {c}) is not fixed"
                    )));
                }
            }
        }
        let values = initial.values().to_vec();
        Ok(Self {
            width: w,
            height: h,
            scratch: values.clone(),
            values,
            mask,
            method,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Performs one sweep and returns its max absolute nodal change.
    pub fn sweep(&mut self) -> f64 {
        match self.method {
            Method::Jacobi => self.jacobi_sweep(),
            Method::GaussSeidel => self.gauss_seidel_sweep(),
        }
    }

    fn jacobi_sweep(&mut self) -> f64 {
        let w = self.width;
        let (v, out) = (&self.values, &mut self.scratch);
        let mut change = 0.0f64;
        for r in 1..self.height - 1 {
            for c in 1..w - 1 {
                let k = r * w + c;
                if self.mask.fixed[k] {
                    continue;
                }
                let new = 0.25 * (v[k - w] + v[k + w] + v[k - 1] + v[k + 1]);
                change = change.max((new - v[k]).abs());
                out[k] = new;
            }
        }
        // fixed cells are identical in both buffers and every free cell was
        // rewritten, so a swap is a complete update
        std::mem::swap(&mut self.values, &mut self.scratch);
        change
    }

    fn gauss_seidel_sweep(&mut self) -> f64 {
        let w = self.width;
        let v = &mut self.values;
        let mut change = 0.0f64;
        for r in 1..self.height - 1 {
            for c in 1..w - 1 {
                let k = r * w + c;
                if self.mask.fixed[k] {
                    continue;
                }
                let new = 0.25 * (v[k - w] + v[k + w] + v[k - 1] + v[k + 1]);
                change = change.max((new - v[k]).abs());
                v[k] = new;
            }
        }
        change
    }

    pub fn into_field(self) -> TemperatureField {
        TemperatureField::new(self.height, self.width, self.values).expect("solver keeps values finite")
    }
}

/// Runs sweeps until the nodal change falls to `config.tolerance`.
///
/// Exhausting `max_sweeps` is not an error: the latest field is returned with
/// `converged = false`.
pub fn fd_solve(
    initial: &TemperatureField,
    mask: &BoundaryMask,
    config: &SolverConfig,
) -> Result<(TemperatureField, SolveTrace)> {
    config.validate()?;
    let mut solver = Solver::new(initial, mask, config.method)?;
    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < config.max_sweeps {
        let change = solver.sweep();
        history.push(change);
        if change <= config.tolerance {
            converged = true;
            break;
        }
    }
    let trace = SolveTrace {
        sweeps_used: history.len(),
        converged,
        residual_history: history,
    };
    Ok((solver.into_field(), trace))
}

/// Problem field with every interior node set to the average of the four edge
/// temperatures. Each edge temperature is the mean of that edge excluding the
/// corners, which equals the sampled edge value for generated problems.
pub fn constant_init(problem: &TemperatureField) -> TemperatureField {
    let fill = edge_average(problem);
    let (h, w) = (problem.height(), problem.width());
    let values = problem
        .values()
        .iter()
        .enumerate()
        .map(|(k, &v)| if problem.is_border(k / w, k % w) { v } else { fill })
        .collect();
    TemperatureField::new(h, w, values).expect("same shape as a valid field")
}

fn edge_average(problem: &TemperatureField) -> f64 {
    let (h, w) = (problem.height(), problem.width());
    let mean = |it: &mut dyn Iterator<Item = f64>, n: usize| it.sum::<f64>() / n as f64;
    let top = mean(&mut (1..w - 1).map(|c| problem.get(0, c)), w - 2);
    let bottom = mean(&mut (1..w - 1).map(|c| problem.get(h - 1, c)), w - 2);
    let left = mean(&mut (1..h - 1).map(|r| problem.get(r, 0)), h - 2);
    let right = mean(&mut (1..h - 1).map(|r| problem.get(r, w - 1)), h - 2);
    (top + bottom + left + right) / 4.0
}

/// Solves `problem` with Gauss-Seidel to [`GROUND_TRUTH_TOLERANCE`].
pub fn ground_truth(problem: &TemperatureField) -> Result<TemperatureField> {
    solve_to(problem, Method::GaussSeidel, GROUND_TRUTH_TOLERANCE)
}

pub(crate) fn solve_to(problem: &TemperatureField, method: Method, tolerance: f64) -> Result<TemperatureField> {
    let n = problem.height().max(problem.width());
    let config = SolverConfig::for_size(method, tolerance, n);
    let (field, trace) = fd_solve(problem, &BoundaryMask::for_field(problem), &config)?;
    if !trace.converged {
        return Err(Error::NotConverged {
            sweeps: trace.sweeps_used,
            last_change: trace.residual_history.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(field)
}

/// Ground-truth oracle with an optional on-disk cache.
///
/// Cached solutions live in `dir/<sha256 of problem bytes>.csv`, where the
/// problem bytes are [`TemperatureField::to_bytes`]. Unreadable or mismatched
/// cache entries are recomputed and overwritten.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthOracle {
    cache_dir: Option<PathBuf>,
}

impl GroundTruthOracle {
    pub fn uncached() -> Self {
        Self { cache_dir: None }
    }

    pub fn with_cache(dir: impl Into<PathBuf>) -> Self {
        Self {
            cache_dir: Some(dir.into()),
        }
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cache_dir.as_deref()
    }

    pub fn cache_key(problem: &TemperatureField) -> String {
        hex::encode(Sha256::digest(problem.to_bytes()))
    }

    pub fn solve(&self, problem: &TemperatureField) -> Result<TemperatureField> {
        let Some(dir) = &self.cache_dir else {
            return ground_truth(problem);
        };
        let path = dir.join(format!("{}.csv", Self::cache_key(problem)));
        if let Ok(cached) = field::read_field_csv(&path) {
            if cached.height() == problem.height()
                && cached.width() == problem.width()
                && cached.border_values().eq(problem.border_values())
            {
                return Ok(cached);
            }
        }
        let solved = ground_truth(problem)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        field::write_field_csv(&solved, &path)?;
        Ok(solved)
    }
}
