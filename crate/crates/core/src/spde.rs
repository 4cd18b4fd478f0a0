//! Linearly-implicit Euler–Maruyama solver for
//!
//! ```text
//! du = ∂x B(u) dt + ∂x(A(u) ∂x u) dt + F(u) dt + H(u) dW,   u = 0 on {0, 1}.
//! ```
//!
//! Each step freezes the diffusion coefficient at `u_n`, treats diffusion
//! implicitly and everything else explicitly:
//!
//! ```text
//! (I - dt D(a_n D)) u_{n+1} = u_n + dt (D B_n + F(u_n)) + Σ_k H(u_n) e_k ΔW_k^n
//! ```
//!
//! where `a_n` and `B_n` are evaluated at face midpoints `(u_i + u_{i+1}) / 2`
//! and `D` is the conservative difference across a cell. The noise is Itô
//! (left endpoint).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::noise::{NoiseForcing, NoiseModel, WienerPath};
use crate::tridiag;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar coefficient function together with its derivative.
#[derive(Clone)]
pub struct Coefficient {
    name: String,
    value: ScalarFn,
    derivative: ScalarFn,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Coefficient").field(&self.name).finish()
    }
}

impl Coefficient {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| c, |_| 0.0)
    }

    /// `c0 + c1 ξ`.
    pub fn affine(c0: f64, c1: f64) -> Self {
        Self::new(format!("affine({c0},{c1})"), move |x| c0 + c1 * x, move |_| c1)
    }

    /// `2 + sin ξ`, elliptic with window `[1, 3]`.
    pub fn two_plus_sin() -> Self {
        Self::new("twoplus_sin", |x: f64| 2.0 + x.sin(), |x: f64| x.cos())
    }

    /// `ξ²/2` on `[-R, R]`, continued linearly (C¹) outside.
    pub fn burgers_flux(radius: f64) -> Self {
        Self::new(
            format!("burgers_flux({radius})"),
            move |x: f64| {
                if x.abs() <= radius {
                    0.5 * x * x
                } else {
                    radius * x.abs() - 0.5 * radius * radius
                }
            },
            move |x: f64| x.clamp(-radius, radius),
        )
    }

    /// Piecewise-linear interpolation of `(ξ, value)` knots, constant
    /// outside the knot range.
    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("table needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidParameter("table knots must be strictly increasing".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter("table knots must be finite".into()));
        }
        let knots: Arc<[(f64, f64)]> = knots.into();
        let segment = {
            let knots = knots.clone();
            move |x: f64| -> Option<usize> {
                if x < knots[0].0 || x >= knots[knots.len() - 1].0 {
                    return None;
                }
                Some(knots.partition_point(|k| k.0 <= x) - 1)
            }
        };
        let seg = segment.clone();
        let kv = knots.clone();
        let value = move |x: f64| match seg(x) {
            Some(i) => {
                let ((x0, y0), (x1, y1)) = (kv[i], kv[i + 1]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
            None if x < kv[0].0 => kv[0].1,
            None => kv[kv.len() - 1].1,
        };
        let kd = knots;
        let derivative = move |x: f64| match segment(x) {
            Some(i) => (kd[i + 1].1 - kd[i].1) / (kd[i + 1].0 - kd[i].0),
            None => 0.0,
        };
        Ok(Self::new("table", value, derivative))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, xi: f64) -> f64 {
        (self.value)(xi)
    }

    pub fn derivative(&self, xi: f64) -> f64 {
        (self.derivative)(xi)
    }
}

/// `A`, `B`, `F` and the ellipticity window `[ν, μ]` of `A`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub a: Coefficient,
    pub b: Coefficient,
    pub f: Coefficient,
    nu: f64,
    mu: f64,
}

impl CoefficientSet {
    pub fn new(a: Coefficient, b: Coefficient, f: Coefficient, nu: f64, mu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        if !(nu <= mu) {
            return Err(Error::InvalidParameter(format!("nu = {nu} exceeds mu = {mu}")));
        }
        Ok(Self { a, b, f, nu, mu })
    }

    /// `A ≡ 1`, `B = F = 0`.
    pub fn heat() -> Self {
        Self::new(
            Coefficient::constant(1.0),
            Coefficient::constant(0.0),
            Coefficient::constant(0.0),
            1.0,
            1.0,
        )
        .expect("heat coefficients are valid")
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Observed `(min A, max A)` on `samples` points of `[lo, hi]`.
    pub fn ellipticity_window(&self, lo: f64, hi: f64, samples: usize) -> (f64, f64) {
        let samples = samples.max(2);
        (0..samples)
            .map(|i| self.a.eval(lo + (hi - lo) * i as f64 / (samples - 1) as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(m, n), v| (m.min(v), n.max(v)))
    }

    /// Checks `ν ≤ A ≤ μ` on a sampled range.
    pub fn validate_ellipticity(&self, lo: f64, hi: f64, samples: usize) -> Result<(f64, f64)> {
        let (lo_a, hi_a) = self.ellipticity_window(lo, hi, samples);
        if lo_a < self.nu * (1.0 - 1e-12) || hi_a > self.mu * (1.0 + 1e-12) {
            let value = if lo_a < self.nu { lo_a } else { hi_a };
            return Err(Error::Ellipticity {
                step: 0,
                value,
                nu: self.nu,
                mu: self.mu,
            });
        }
        Ok((lo_a, hi_a))
    }

    /// Smallest `C` with `|B(ξ)| + |F(ξ)| ≤ C (1 + |ξ|)` on the sampled range.
    pub fn growth_constant(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        let samples = samples.max(2);
        (0..samples)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
                (self.b.eval(x).abs() + self.f.eval(x).abs()) / (1.0 + x.abs())
            })
            .fold(0.0, f64::max)
    }

    /// `A` at face midpoints of `u`, checked against the window.
    pub fn diffusion_faces(&self, u: &[f64], step: usize) -> Result<Vec<f64>> {
        let faces: Vec<f64> = grid::face_midpoints(u).into_iter().map(|m| self.a.eval(m)).collect();
        let (lo, hi) = (self.nu * (1.0 - 1e-12), self.mu * (1.0 + 1e-12));
        if let Some(&value) = faces.iter().find(|&&a| !(a >= lo && a <= hi)) {
            return Err(Error::Ellipticity {
                step,
                value,
                nu: self.nu,
                mu: self.mu,
            });
        }
        Ok(faces)
    }

    /// `B` at face midpoints of `u`.
    pub fn flux_faces(&self, u: &[f64]) -> Vec<f64> {
        grid::face_midpoints(u).into_iter().map(|m| self.b.eval(m)).collect()
    }
}

/// One step of the scheme; `noise` already holds `Σ_k H(u_n) e_k ΔW_k^n`.
pub fn step(
    grid: &SpatialGrid,
    dt: f64,
    u_n: &[f64],
    coeffs: &CoefficientSet,
    noise: &[f64],
    step_index: usize,
) -> Result<Vec<f64>> {
    let a_faces = coeffs.diffusion_faces(u_n, step_index)?;
    let div_b = grid::divergence(&coeffs.flux_faces(u_n), grid.h());
    let rhs: Vec<f64> = u_n
        .iter()
        .zip(&div_b)
        .zip(noise)
        .map(|((&u, &db), &w)| u + dt * (db + coeffs.f.eval(u)) + w)
        .collect();
    tridiag::implicit_diffusion(grid, dt, &a_faces, &rhs)
}

pub const DEFAULT_CEILING: f64 = 1e6;

/// Everything needed to produce one sample path.
#[derive(Clone)]
pub struct RunConfig {
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    pub coefficients: CoefficientSet,
    pub noise: NoiseModel,
    pub initial: ScalarFn,
    pub seed: u64,
    /// Abort once the sup norm exceeds this.
    pub ceiling: f64,
}

impl fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunConfig")
            .field("grid", &self.grid)
            .field("times", &self.times)
            .field("coefficients", &self.coefficients)
            .field("noise", &self.noise)
            .field("seed", &self.seed)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub scheme: String,
    pub dt: f64,
    pub h: f64,
    pub n_interior: usize,
    pub n_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub t: f64,
    pub l2: f64,
    pub grad_l2: f64,
    pub sup: f64,
}

impl MonitorRow {
    fn of(grid: &SpatialGrid, t: f64, u: &[f64]) -> Self {
        let h = grid.h();
        Self {
            t,
            l2: grid::l2_norm(u, h),
            grad_l2: grid::l2_norm(&grid::gradient(u, h), h),
            sup: grid::sup_norm(u),
        }
    }
}

/// A completed sample path with its inputs.
#[derive(Debug, Clone)]
pub struct SpdeRun {
    pub u: SpaceTimeField,
    pub path: WienerPath,
    pub coefficients: CoefficientSet,
    pub noise: NoiseModel,
    pub meta: SchemeMeta,
    pub monitor: Vec<MonitorRow>,
}

pub const SCHEME_TAG: &str = "linearly-implicit-euler-maruyama";

pub fn run(config: &RunConfig) -> Result<SpdeRun> {
    let path = WienerPath::sample(config.seed, config.times, config.noise.k_trunc())?;
    run_with_path(config, path)
}

/// Runs on a given path; it must share the time grid and mode count.
pub fn run_with_path(config: &RunConfig, path: WienerPath) -> Result<SpdeRun> {
    let grid = config.grid;
    let times = config.times;
    if *path.times() != times {
        return Err(Error::GridMismatch("Wiener path and run use different time grids".into()));
    }
    if path.k_trunc() != config.noise.k_trunc() {
        return Err(Error::TruncationMismatch {
            path: path.k_trunc(),
            model: config.noise.k_trunc(),
        });
    }
    let initial = config.initial.clone();
    let mut u = SpaceTimeField::from_initial(grid, times, move |x| initial(x))?;
    let forcing = NoiseForcing::new(&config.noise, &grid);
    let mut noise = vec![0.0; grid.n_interior()];
    let mut monitor = Vec::with_capacity(times.n_levels());
    monitor.push(MonitorRow::of(&grid, 0.0, u.level(0)));

    for n in 0..times.n_steps() {
        let current = u.level(n).to_vec();
        forcing.accumulate(&current, path.increments(n), &mut noise)?;
        let next = step(&grid, times.dt(), &current, &config.coefficients, &noise, n)?;
        let row = MonitorRow::of(&grid, times.time(n + 1), &next);
        if !row.sup.is_finite() {
            return Err(Error::NonFinite {
                what: "solution level",
                index: n + 1,
            });
        }
        if row.sup > config.ceiling {
            return Err(Error::BlowUp {
                step: n + 1,
                sup: row.sup,
                ceiling: config.ceiling,
            });
        }
        u.level_mut(n + 1).copy_from_slice(&next);
        monitor.push(row);
    }

    Ok(SpdeRun {
        u,
        meta: SchemeMeta {
            scheme: SCHEME_TAG.into(),
            dt: times.dt(),
            h: grid.h(),
            n_interior: grid.n_interior(),
            n_steps: times.n_steps(),
            seed: config.seed,
        },
        path,
        coefficients: config.coefficients.clone(),
        noise: config.noise.clone(),
        monitor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriRow {
    pub t: f64,
    /// `‖u(t)‖_p`.
    pub lp: f64,
    /// `‖∇u‖_{L²(0,t; L²)}`.
    pub grad_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriSeries {
    pub p: f64,
    pub rows: Vec<AprioriRow>,
    /// `sup_t ‖u(t)‖_p`.
    pub max_lp: f64,
    /// Set when `max_lp` or the gradient energy exceeds the ceiling.
    pub flagged: bool,
}

/// Space `L^p` norms per level and the cumulative gradient energy.
pub fn a_priori_monitor(run: &SpdeRun, p: f64, ceiling: f64) -> Result<AprioriSeries> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("exponent p must be ≥ 2, got {p}")));
    }
    let grid = run.u.grid();
    let dt = run.u.times().dt();
    let mut energy = 0.0;
    let mut rows = Vec::with_capacity(run.u.n_levels());
    for (n, level) in run.u.levels().enumerate() {
        if n > 0 {
            energy += dt * grid::l2_norm(&grid::gradient(level, grid.h()), grid.h()).powi(2);
        }
        rows.push(AprioriRow {
            t: run.u.times().time(n),
            lp: grid::lp_norm(level, grid.h(), p),
            grad_energy: energy.sqrt(),
        });
    }
    let max_lp = rows.iter().fold(0.0_f64, |m, r| m.max(r.lp));
    let flagged = max_lp > ceiling || energy.sqrt() > ceiling;
    Ok(AprioriSeries {
        p,
        rows,
        max_lp,
        flagged,
    })
}

/// `e^{-π² t} e_1(x)`, the heat flow of the first eigenfunction.
pub fn heat_mode_one(t: f64, x: f64) -> f64 {
    (-PI * PI * t).exp() * crate::spectral::eigenfunction(1, x)
}
