//! Uniform space-time grids on `[0, T] × [0, 1]` and fields with zero
//! Dirichlet boundary values.
//!
//! Only interior nodes are stored. Every routine that needs boundary values
//! (gradients, face averages, CSV dumps of traces) extends the interior
//! vector with the zero boundary on the fly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of `n_interior` nodes `x_i = i h`, `h = 1 / (n_interior + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    n_interior: usize,
    h: f64,
}

impl SpatialGrid {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidGrid("need at least one interior node".into()));
        }
        Ok(Self {
            n_interior,
            h: 1.0 / (n_interior as f64 + 1.0),
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of cell faces, including the two boundary faces.
    pub fn n_faces(&self) -> usize {
        self.n_interior + 1
    }

    /// Position of interior node `i` (zero based, so `node(0) = h`).
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_interior).map(move |i| self.node(i))
    }

    /// The grid with half the spacing; its even nodes coincide with ours.
    pub fn refined(&self) -> Self {
        Self::new(2 * self.n_interior + 1).expect("refinement of a valid grid")
    }

    /// Whether `fine` halves our spacing an integer power of two times.
    pub fn nests_in(&self, fine: &SpatialGrid) -> Option<usize> {
        let coarse = self.n_interior + 1;
        let fine = fine.n_interior + 1;
        if !fine.is_multiple_of(coarse) || !(fine / coarse).is_power_of_two() {
            return None;
        }
        Some(fine / coarse)
    }
}

/// Uniform time grid `t_n = n dt`, `n = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        Ok(Self {
            n_steps,
            dt: horizon / n_steps as f64,
            horizon,
        })
    }

    /// Builds the grid from a requested step, which must divide the horizon.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("time step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || ((steps * dt) - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidGrid(format!(
                "time step {dt} does not divide the horizon {horizon}"
            )));
        }
        Self::new(horizon, steps as usize)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Ratio `fine.n_steps / self.n_steps` when it is a power of two.
    pub fn nests_in(&self, fine: &TimeGrid) -> Option<usize> {
        if (self.horizon - fine.horizon).abs() > 1e-12 * self.horizon
            || !fine.n_steps.is_multiple_of(self.n_steps)
        {
            return None;
        }
        let ratio = fine.n_steps / self.n_steps;
        ratio.is_power_of_two().then_some(ratio)
    }
}

/// Values on every (time level, interior node) pair, stored densely and
/// row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: SpatialGrid,
    times: TimeGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: SpatialGrid, times: TimeGrid) -> Self {
        Self {
            grid,
            times,
            values: vec![0.0; grid.n_interior * times.n_levels()],
        }
    }

    /// Fills level 0 with `init(x_i)`; later levels start at zero.
    pub fn from_initial(
        grid: SpatialGrid,
        times: TimeGrid,
        init: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let mut field = Self::zeros(grid, times);
        for (i, x) in grid.nodes().enumerate() {
            let v = init(x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "initial profile",
                    index: i,
                });
            }
            field.values[i] = v;
        }
        Ok(field)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn n_levels(&self) -> usize {
        self.times.n_levels()
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let m = self.grid.n_interior;
        &self.values[n * m..(n + 1) * m]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let m = self.grid.n_interior;
        &mut self.values[n * m..(n + 1) * m]
    }

    pub fn try_level(&self, n: usize) -> Result<&[f64]> {
        if n >= self.n_levels() {
            return Err(Error::IndexOutOfRange {
                what: "time level",
                index: n,
                len: self.n_levels(),
            });
        }
        Ok(self.level(n))
    }

    pub fn levels(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.n_interior)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.grid.n_interior + node]
    }

    /// Largest absolute value over the whole space-time grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same grid, with `f` applied node by node.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            times: self.times,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise `self - other`; the grids must agree.
    pub fn difference(&self, other: &SpaceTimeField) -> Result<Self> {
        self.check_aligned(other)?;
        Ok(Self {
            grid: self.grid,
            times: self.times,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn check_aligned(&self, other: &SpaceTimeField) -> Result<()> {
        if self.grid != other.grid || self.times != other.times {
            return Err(Error::GridMismatch(format!(
                "fields live on ({} nodes, {} steps) and ({} nodes, {} steps)",
                self.grid.n_interior,
                self.times.n_steps,
                other.grid.n_interior,
                other.times.n_steps
            )));
        }
        Ok(())
    }

    /// Face slopes of one time level, see [`gradient`].
    pub fn discrete_gradient(&self, level: usize) -> Result<Vec<f64>> {
        Ok(gradient(self.try_level(level)?, self.grid.h))
    }

    /// Writes `t,x,value` rows, time-major, with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::with_capacity(64);
        writeln!(out, "t,x,value")?;
        for n in 0..self.n_levels() {
            let t = self.times.time(n);
            for (i, v) in self.level(n).iter().enumerate() {
                line.clear();
                let _ = writeln!(line, "{:.16e},{:.16e},{:.16e}", t, self.grid.node(i), v);
                out.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads back what [`write_csv`](Self::write_csv) produced on the given
    /// grids. Leading `#` comment lines are skipped.
    pub fn read_csv<R: BufRead>(input: R, grid: SpatialGrid, times: TimeGrid) -> Result<Self> {
        let mut lines = input
            .lines()
            .skip_while(|l| l.as_ref().is_ok_and(|l| l.starts_with('#')));
        match lines.next() {
            Some(Ok(header)) if header.trim() == "t,x,value" => {}
            _ => return Err(Error::InvalidGrid("missing `t,x,value` header".into())),
        }
        let mut values = Vec::with_capacity(grid.n_interior * times.n_levels());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .rsplit(',')
                .next()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidGrid(format!("malformed row {}", row + 2)))?;
            values.push(v);
        }
        if values.len() != grid.n_interior * times.n_levels() {
            return Err(Error::InvalidGrid(format!(
                "expected {} rows, found {}",
                grid.n_interior * times.n_levels(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            times,
            values,
        })
    }
}

/// Face slopes `(v_{i+1} - v_i) / h` at the `n + 1` faces of an interior
/// vector extended by zero at both ends.
pub fn gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = Vec::with_capacity(n + 1);
    let mut prev = 0.0;
    for &v in values {
        out.push((v - prev) / h);
        prev = v;
    }
    out.push((0.0 - prev) / h);
    out
}

/// Conservative divergence `(g_{i+1} - g_i) / h` of face data, one value per
/// interior node. `faces.len()` must be `n + 1`.
pub fn divergence(faces: &[f64], h: f64) -> Vec<f64> {
    faces.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

/// Discrete `L^2(0,1)` norm of an interior vector.
pub fn l2_norm(values: &[f64], h: f64) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() * h).sqrt()
}

/// Discrete `L^p(0,1)` norm; `p = ∞` gives the sup norm.
pub fn lp_norm(values: &[f64], h: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return sup_norm(values);
    }
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * h).powf(1.0 / p)
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Value at face midpoints, `(u_i + u_{i+1}) / 2` with zero boundary.
pub fn face_midpoints(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    let mut prev = 0.0;
    for &v in values {
        out.push(0.5 * (prev + v));
        prev = v;
    }
    out.push(0.5 * prev);
    out
}
