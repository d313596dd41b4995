//! Inference time grids on `[0, 1]`.
//!
//! A grid is built from `n_steps + 1` pre-warp positions `u_i` spaced evenly
//! over `[tz, 1]`, then warped: the cosine kind maps `u` to
//! `1 - cos(pi/2 * u)`, the uniform kind leaves it alone. With `tz = 0` the
//! cosine grid is `t_i = 1 - cos(pi * i / (2n))`, which front-loads small
//! steps. A positive `tz` truncates the start (zero-init) while keeping the
//! same number of steps.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Cosine,
    Uniform,
}

/// Serialized form of a grid: `{kind, n_steps, tz}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub kind: GridKind,
    pub n_steps: usize,
    #[serde(default)]
    pub tz: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { kind: GridKind::Cosine, n_steps: 32, tz: 0.0 }
    }
}

impl GridParams {
    pub fn build(&self) -> Result<TimeGrid> {
        make_grid(self.kind, self.n_steps, self.tz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    kind: GridKind,
    n_steps: usize,
    tz: f64,
    points: Vec<f64>,
}

impl GridKind {
    fn warp(self, u: f64) -> f64 {
        match self {
            GridKind::Cosine => 1.0 - (FRAC_PI_2 * u).cos(),
            GridKind::Uniform => u,
        }
    }
}

pub fn make_grid(kind: GridKind, n_steps: usize, tz: f64) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    if !(0.0..1.0).contains(&tz) {
        return Err(invalid(format!("tz must lie in [0, 1), got {tz}")));
    }
    let n = n_steps as f64;
    let mut points: Vec<f64> = (0..=n_steps).map(|i| kind.warp(tz + (1.0 - tz) * i as f64 / n)).collect();
    // cos(pi/2) is 6e-17, not 0.
    points[n_steps] = 1.0;
    Ok(TimeGrid { kind, n_steps, tz, points })
}

/// Start time of a grid truncated at `tz`.
pub fn start_time(kind: GridKind, tz: f64) -> f64 {
    kind.warp(tz)
}

impl TimeGrid {
    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn tz(&self) -> f64 {
        self.tz
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn params(&self) -> GridParams {
        GridParams { kind: self.kind, n_steps: self.n_steps, tz: self.tz }
    }

    /// `(t_i, t_{i+1})` pairs.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

pub fn step_sizes(grid: &TimeGrid) -> Vec<f64> {
    grid.intervals().map(|(a, b)| b - a).collect()
}
