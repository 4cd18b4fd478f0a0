//! Splitting `u = y + z`.
//!
//! `z` solves the linear stochastic heat equation `dz = Δz dt + H(u) dW`,
//! `z(0) = 0`, and is computed mode by mode with the exact semigroup:
//!
//! ```text
//! c_k(t_{n+1}) = e^{-λ_k dt} (c_k(t_n) + ⟨H(u_n) ΔW^n⟩_k)
//! ```
//!
//! `y` then solves a linear parabolic equation with coefficients read off the
//! stored path `u`:
//!
//! ```text
//! ∂t y = ∂x(a ∂x y) + ∂x g + f,   a = A(u),  g = B(u) + (a - 1) ∂x z,  f = F(u),
//! ```
//!
//! with `y(0) = u0`. The residual `u - y - z` then only reflects the
//! mismatch between the exponential step for `z` and the implicit step used
//! for `u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, SpaceTimeField, SpatialGrid, TimeGrid};
use crate::noise::{NoiseForcing, NoiseModel, WienerPath};
use crate::spde::{CoefficientSet, SpdeRun};
use crate::spectral::{DirichletEigenSystem, EigenVariant, SineBasis};
use crate::tridiag;

/// Stochastic convolution with continuum eigenvalues.
pub fn stochastic_convolution(
    path: &WienerPath,
    model: &NoiseModel,
    u: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    stochastic_convolution_with(path, model, u, EigenVariant::Continuum)
}

pub fn stochastic_convolution_with(
    path: &WienerPath,
    model: &NoiseModel,
    u: &SpaceTimeField,
    variant: EigenVariant,
) -> Result<SpaceTimeField> {
    let grid = *u.grid();
    let times = *u.times();
    if *path.times() != times {
        return Err(Error::GridMismatch("Wiener path and field use different time grids".into()));
    }
    if path.k_trunc() != model.k_trunc() {
        return Err(Error::TruncationMismatch {
            path: path.k_trunc(),
            model: model.k_trunc(),
        });
    }
    let n = grid.n_interior();
    let basis = SineBasis::full(grid);
    let decay: Vec<f64> = DirichletEigenSystem::new(&grid, n, variant)?
        .eigenvalues()
        .into_iter()
        .map(|l| (-l * times.dt()).exp())
        .collect();
    let forcing = NoiseForcing::new(model, &grid);

    let mut z = SpaceTimeField::zeros(grid, times);
    let mut coeffs = vec![0.0; n];
    let mut kick = vec![0.0; n];
    let mut kick_coeffs = vec![0.0; n];
    for step in 0..times.n_steps() {
        forcing.accumulate(u.level(step), path.increments(step), &mut kick)?;
        basis.forward_into(&kick, &mut kick_coeffs);
        for ((c, dk), e) in coeffs.iter_mut().zip(&kick_coeffs).zip(&decay) {
            *c = e * (*c + dk);
        }
        basis.inverse_into(&coeffs, z.level_mut(step + 1));
    }
    Ok(z)
}

/// `∂t v = ∂x(a ∂x v) + ∂x g + f` with zero Dirichlet data, stepped by
/// implicit Euler. Row `n` of each coefficient holds the data frozen over
/// `[t_n, t_{n+1}]`: `a` and `g` on the `n + 1` faces, `f` on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceProblem {
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    pub a: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
}

impl DivergenceProblem {
    /// Builds the problem from closures of `(t, x)`; face data are evaluated
    /// at face centres `(i + 1/2) h`, shifted by one half cell from the nodes.
    pub fn from_fns(
        grid: SpatialGrid,
        times: TimeGrid,
        a: impl Fn(f64, f64) -> f64,
        g: impl Fn(f64, f64) -> f64,
        f: impl Fn(f64, f64) -> f64,
        v0: impl Fn(f64) -> f64,
    ) -> Self {
        let h = grid.h();
        let faces: Vec<f64> = (0..grid.n_faces()).map(|i| (i as f64 + 0.5) * h).collect();
        let nodes: Vec<f64> = grid.nodes().collect();
        let rows = |fun: &dyn Fn(f64, f64) -> f64, xs: &[f64]| -> Vec<Vec<f64>> {
            (0..times.n_steps())
                .map(|n| xs.iter().map(|&x| fun(times.time(n), x)).collect())
                .collect()
        };
        Self {
            grid,
            times,
            a: rows(&a, &faces),
            g: rows(&g, &faces),
            f: rows(&f, &nodes),
            v0: nodes.iter().map(|&x| v0(x)).collect(),
        }
    }

    fn check_shape(&self) -> Result<()> {
        let (steps, n) = (self.times.n_steps(), self.grid.n_interior());
        let ok = self.a.len() == steps
            && self.g.len() == steps
            && self.f.len() == steps
            && self.v0.len() == n
            && self.a.iter().all(|r| r.len() == n + 1)
            && self.g.iter().all(|r| r.len() == n + 1)
            && self.f.iter().all(|r| r.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::GridMismatch("divergence problem data do not match its grids".into()))
        }
    }
}

pub fn solve_divergence(problem: &DivergenceProblem) -> Result<SpaceTimeField> {
    problem.check_shape()?;
    let (grid, times) = (problem.grid, problem.times);
    let dt = times.dt();
    let mut v = SpaceTimeField::zeros(grid, times);
    v.level_mut(0).copy_from_slice(&problem.v0);
    for n in 0..times.n_steps() {
        let div_g = grid::divergence(&problem.g[n], grid.h());
        let rhs: Vec<f64> = v
            .level(n)
            .iter()
            .zip(&div_g)
            .zip(&problem.f[n])
            .map(|((&vn, &dg), &fn_)| vn + dt * (dg + fn_))
            .collect();
        let next = tridiag::implicit_diffusion(&grid, dt, &problem.a[n], &rhs)?;
        v.level_mut(n + 1).copy_from_slice(&next);
    }
    Ok(v)
}

/// The `y` problem read off a stored path `u` and its stochastic convolution `z`.
pub fn y_problem(u: &SpaceTimeField, z: &SpaceTimeField, coeffs: &CoefficientSet) -> Result<DivergenceProblem> {
    u.check_aligned(z)?;
    let (grid, times) = (*u.grid(), *u.times());
    let steps = times.n_steps();
    let mut a = Vec::with_capacity(steps);
    let mut g = Vec::with_capacity(steps);
    let mut f = Vec::with_capacity(steps);
    for n in 0..steps {
        let un = u.level(n);
        let a_faces = coeffs.diffusion_faces(un, n)?;
        let grad_z = grid::gradient(z.level(n + 1), grid.h());
        g.push(
            coeffs
                .flux_faces(un)
                .iter()
                .zip(&a_faces)
                .zip(&grad_z)
                .map(|((b, a), dz)| b + (a - 1.0) * dz)
                .collect(),
        );
        f.push(un.iter().map(|&x| coeffs.f.eval(x)).collect());
        a.push(a_faces);
    }
    Ok(DivergenceProblem {
        grid,
        times,
        a,
        g,
        f,
        v0: u.level(0).to_vec(),
    })
}

pub fn solve_y_divergence(u: &SpaceTimeField, z: &SpaceTimeField, coeffs: &CoefficientSet) -> Result<SpaceTimeField> {
    solve_divergence(&y_problem(u, z, coeffs)?)
}

/// `∂t v = a ∂xx v + f` on `(0, 1)` with boundary values `v(t, 0) = left(t)`,
/// `v(t, 1) = right(t)`. `a` and `f` hold one row of node values per step;
/// `left` and `right` one value per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct NonDivergenceProblem {
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    pub a: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl NonDivergenceProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn from_fns(
        grid: SpatialGrid,
        times: TimeGrid,
        a: impl Fn(f64, f64) -> f64,
        f: impl Fn(f64, f64) -> f64,
        v0: impl Fn(f64) -> f64,
        left: impl Fn(f64) -> f64,
        right: impl Fn(f64) -> f64,
    ) -> Self {
        let nodes: Vec<f64> = grid.nodes().collect();
        let rows = |fun: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
            (0..times.n_steps())
                .map(|n| nodes.iter().map(|&x| fun(times.time(n), x)).collect())
                .collect()
        };
        let levels = |fun: &dyn Fn(f64) -> f64| -> Vec<f64> { (0..times.n_levels()).map(|n| fun(times.time(n))).collect() };
        Self {
            grid,
            times,
            a: rows(&a),
            f: rows(&f),
            v0: nodes.iter().map(|&x| v0(x)).collect(),
            left: levels(&left),
            right: levels(&right),
        }
    }
}

/// Interior values plus the boundary traces used at each level.
#[derive(Debug, Clone, PartialEq)]
pub struct NonDivergenceSolution {
    pub interior: SpaceTimeField,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

pub fn solve_nondivergence(problem: &NonDivergenceProblem, nu: f64, mu: f64) -> Result<NonDivergenceSolution> {
    let (grid, times) = (problem.grid, problem.times);
    let (n, steps) = (grid.n_interior(), times.n_steps());
    if problem.a.len() != steps
        || problem.f.len() != steps
        || problem.v0.len() != n
        || problem.left.len() != times.n_levels()
        || problem.right.len() != times.n_levels()
        || problem.a.iter().chain(&problem.f).any(|r| r.len() != n)
    {
        return Err(Error::GridMismatch("non-divergence problem data do not match its grids".into()));
    }
    let r = times.dt() / (grid.h() * grid.h());
    let mut v = SpaceTimeField::zeros(grid, times);
    v.level_mut(0).copy_from_slice(&problem.v0);
    for step in 0..steps {
        let a = &problem.a[step];
        if let Some(&value) = a.iter().find(|&&x| !(x >= nu && x <= mu)) {
            return Err(Error::Ellipticity { step, value, nu, mu });
        }
        let lower: Vec<f64> = a.iter().map(|ai| -r * ai).collect();
        let diag: Vec<f64> = a.iter().map(|ai| 1.0 + 2.0 * r * ai).collect();
        let mut rhs: Vec<f64> = v
            .level(step)
            .iter()
            .zip(&problem.f[step])
            .map(|(vn, fn_)| vn + times.dt() * fn_)
            .collect();
        rhs[0] += r * a[0] * problem.left[step + 1];
        rhs[n - 1] += r * a[n - 1] * problem.right[step + 1];
        let next = tridiag::solve(&lower, &diag, &lower, &rhs)?;
        v.level_mut(step + 1).copy_from_slice(&next);
    }
    Ok(NonDivergenceSolution {
        interior: v,
        left: problem.left.clone(),
        right: problem.right.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSettings {
    pub dt: f64,
    pub h: f64,
    pub n_interior: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub k_trunc: usize,
    pub eigen_variant: EigenVariant,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub z: SpaceTimeField,
    pub y: SpaceTimeField,
    pub y_problem: DivergenceProblem,
    /// `sup_x |u - y - z|` per time level.
    pub residual_series: Vec<f64>,
    pub residual_sup: f64,
    pub settings: DecompositionSettings,
}

/// The serialized form of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub residual_sup: f64,
    pub residual_series: Vec<f64>,
    pub settings: DecompositionSettings,
}

impl DecompositionResult {
    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            residual_sup: self.residual_sup,
            residual_series: self.residual_series.clone(),
            settings: self.settings.clone(),
        }
    }
}

pub fn decompose(run: &SpdeRun) -> Result<DecompositionResult> {
    decompose_with(run, EigenVariant::Continuum)
}

pub fn decompose_with(run: &SpdeRun, variant: EigenVariant) -> Result<DecompositionResult> {
    let z = stochastic_convolution_with(&run.path, &run.noise, &run.u, variant)?;
    let y_problem = y_problem(&run.u, &z, &run.coefficients)?;
    let y = solve_divergence(&y_problem)?;
    let residual_series: Vec<f64> = (0..run.u.n_levels())
        .map(|n| {
            run.u
                .level(n)
                .iter()
                .zip(y.level(n))
                .zip(z.level(n))
                .fold(0.0_f64, |m, ((u, y), z)| m.max((u - y - z).abs()))
        })
        .collect();
    let residual_sup = residual_series.iter().fold(0.0_f64, |m, &r| m.max(r));
    Ok(DecompositionResult {
        settings: DecompositionSettings {
            dt: run.meta.dt,
            h: run.meta.h,
            n_interior: run.meta.n_interior,
            n_steps: run.meta.n_steps,
            seed: run.meta.seed,
            k_trunc: run.noise.k_trunc(),
            eigen_variant: variant,
        },
        z,
        y,
        y_problem,
        residual_series,
        residual_sup,
    })
}

/// Residual tolerance `factor (dt^{1/2} + h²) max(1, sup|u|)`.
pub fn residual_tolerance(factor: f64, dt: f64, h: f64, u_scale: f64) -> f64 {
    factor * (dt.sqrt() + h * h) * u_scale.max(1.0)
}

/// Ratio of a measured quantity to its data bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

const ZERO_TOL: f64 = 1e-300;

impl EstimateReport {
    fn new(lhs: f64, rhs: f64, bound: f64) -> Self {
        if rhs <= ZERO_TOL {
            if lhs <= 1e-12 {
                return Self {
                    lhs,
                    rhs,
                    ratio: 0.0,
                    bound,
                    pass: true,
                    diagnostic: None,
                };
            }
            return Self {
                lhs,
                rhs,
                ratio: f64::INFINITY,
                bound,
                pass: false,
                diagnostic: Some(format!("data vanish but solution norm is {lhs:e}")),
            };
        }
        let ratio = lhs / rhs;
        let pass = ratio.is_finite() && ratio <= bound;
        Self {
            lhs,
            rhs,
            ratio,
            bound,
            pass,
            diagnostic: (!pass).then(|| format!("ratio {ratio:e} exceeds {bound}")),
        }
    }

    /// Relative change of the ratio between two resolutions.
    pub fn refinement_change(&self, finer: &EstimateReport) -> f64 {
        let scale = self.ratio.abs().max(finer.ratio.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.ratio - finer.ratio).abs() / scale
        }
    }
}

/// `(Σ_n dt Σ_i h |w|^p)^{1/p}` over the rows of per-step data.
pub fn space_time_lp(rows: &[Vec<f64>], dt: f64, h: f64, p: f64) -> f64 {
    rows.iter()
        .map(|r| r.iter().map(|w| w.abs().powf(p)).sum::<f64>() * h * dt)
        .sum::<f64>()
        .powf(1.0 / p)
}

/// `max_n ‖v_n‖₂ + ‖∂x v‖_{L²(D_T)}` against `‖v0‖₂ + ‖g‖_{L²(D_T)} + ‖f‖_{L²(D_T)}`.
pub fn energy_estimate_check(problem: &DivergenceProblem, v: &SpaceTimeField, c_max: f64) -> Result<EstimateReport> {
    let (h, dt) = (problem.grid.h(), problem.times.dt());
    if v.grid() != &problem.grid || v.times() != &problem.times {
        return Err(Error::GridMismatch("solution and problem use different grids".into()));
    }
    let max_l2 = v.levels().map(|l| grid::l2_norm(l, h)).fold(0.0, f64::max);
    let grad: f64 = v
        .levels()
        .skip(1)
        .map(|l| dt * grid::l2_norm(&grid::gradient(l, h), h).powi(2))
        .sum::<f64>()
        .sqrt();
    let rhs = grid::l2_norm(&problem.v0, h) + space_time_lp(&problem.g, dt, h, 2.0) + space_time_lp(&problem.f, dt, h, 2.0);
    Ok(EstimateReport::new(max_l2 + grad, rhs, c_max))
}

/// `sup|v|` against `‖v0‖_∞ + ‖g‖_{L^{2 r0}(D_T)} + ‖f‖_{L^{r0}(D_T)}`.
pub fn linfty_bound_check(problem: &DivergenceProblem, v: &SpaceTimeField, r0: f64, c_max: f64) -> Result<EstimateReport> {
    if !(r0 >= 2.0) {
        return Err(Error::InvalidParameter(format!("r0 must be ≥ 2, got {r0}")));
    }
    if v.grid() != &problem.grid || v.times() != &problem.times {
        return Err(Error::GridMismatch("solution and problem use different grids".into()));
    }
    let (h, dt) = (problem.grid.h(), problem.times.dt());
    let rhs = grid::sup_norm(&problem.v0)
        + space_time_lp(&problem.g, dt, h, 2.0 * r0)
        + space_time_lp(&problem.f, dt, h, r0);
    Ok(EstimateReport::new(v.sup_norm(), rhs, c_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub name: String,
    pub left: f64,
    pub right: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub order: u32,
    pub h: f64,
    pub tol: f64,
    pub traces: Vec<BoundaryTrace>,
    pub pass: bool,
}

impl CompatibilityReport {
    pub fn trace(&self, name: &str) -> Option<&BoundaryTrace> {
        self.traces.iter().find(|t| t.name == name)
    }
}

/// Boundary conditions on `u0` needed for smoothness of order `k` up to
/// `t = 0`:
///
/// * `u0 = 0` on the boundary (all `k`),
/// * `u0⁽¹⁾ = ∂x(A(u0) ∂x u0) + ∂x B(u0) + F(u0) = 0` for `k ≥ 2`,
/// * `2 A'(0) ∂x u0 ∂x u0⁽¹⁾ + B'(0) ∂x u0⁽¹⁾ + A(0) ∂xx u0⁽¹⁾ = 0` for `k = 4`.
///
/// Derivatives are central differences of `u0` sampled one node past each
/// end; each expression is extrapolated to the boundary linearly from the
/// two nearest interior nodes. A condition passes when `|trace| ≤ tol_factor · h`.
pub fn compatibility_check(
    u0: &dyn Fn(f64) -> f64,
    coeffs: &CoefficientSet,
    grid: &SpatialGrid,
    order: u32,
    tol_factor: f64,
) -> Result<CompatibilityReport> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidParameter(format!("compatibility order must be 1..=4, got {order}")));
    }
    let n = grid.n_interior();
    if n < 3 {
        return Err(Error::InvalidGrid("compatibility check needs at least 3 interior nodes".into()));
    }
    let h = grid.h();
    // s[j + 2] = u0(j h) for j = -2..=n+3
    let s: Vec<f64> = (-2..=(n as i64 + 3)).map(|j| u0(j as f64 * h)).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientSmoothness(
            "initial profile is not finite one cell beyond the boundary".into(),
        ));
    }
    let (a, b, f) = (&coeffs.a, &coeffs.b, &coeffs.f);
    // u0⁽¹⁾ at j = -1..=n+2, stored at w[j + 1]
    let first: Vec<f64> = (1..s.len() - 1)
        .map(|m| {
            let (v, d1, d2) = (s[m], (s[m + 1] - s[m - 1]) / (2.0 * h), (s[m + 1] - 2.0 * s[m] + s[m - 1]) / (h * h));
            a.derivative(v) * d1 * d1 + a.eval(v) * d2 + b.derivative(v) * d1 + f.eval(v)
        })
        .collect();
    let at = |field: &dyn Fn(usize) -> f64| -> (f64, f64) {
        (
            2.0 * field(1) - field(2),
            2.0 * field(n) - field(n - 1),
        )
    };
    let tol = tol_factor * h;
    let mut traces = Vec::new();
    let mut push = |name: &str, (left, right): (f64, f64)| {
        let pass = left.abs() <= tol && right.abs() <= tol;
        traces.push(BoundaryTrace {
            name: name.into(),
            left,
            right,
            pass,
        });
    };
    // node j lives at s[j + 2] and first[j + 1]
    push("u0", at(&|j| s[j + 2]));
    if order >= 2 {
        push("u0_1", at(&|j| first[j + 1]));
    }
    if order == 4 {
        let expr = |j: usize| {
            let m = j + 1;
            let du0 = (s[j + 3] - s[j + 1]) / (2.0 * h);
            let dw = (first[m + 1] - first[m - 1]) / (2.0 * h);
            let d2w = (first[m + 1] - 2.0 * first[m] + first[m - 1]) / (h * h);
            2.0 * a.derivative(0.0) * du0 * dw + b.derivative(0.0) * dw + a.eval(0.0) * d2w
        };
        push("order4", at(&expr));
    }
    let pass = traces.iter().all(|t| t.pass);
    Ok(CompatibilityReport {
        order,
        h,
        tol,
        traces,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spde::{self, Coefficient, RunConfig};
    use crate::spectral::eigenfunction;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn heat_problem(n: usize, steps: usize, horizon: f64) -> DivergenceProblem {
        DivergenceProblem::from_fns(
            SpatialGrid::new(n).unwrap(),
            TimeGrid::new(horizon, steps).unwrap(),
            |_, _| 1.0,
            |_, _| 0.0,
            |_, _| 0.0,
            |x| eigenfunction(1, x),
        )
    }

    #[test]
    fn energy_ratio_of_heat_mode() {
        let horizon = 0.1;
        let p = heat_problem(127, 2000, horizon);
        let v = solve_divergence(&p).unwrap();
        let r = energy_estimate_check(&p, &v, 100.0).unwrap();
        let exact = 1.0 + ((1.0 - (-2.0 * PI * PI * horizon).exp()) / 2.0).sqrt();
        assert!((r.ratio - exact).abs() < 5e-3, "{} vs {exact}", r.ratio);
        assert!(r.ratio <= 1.0 + 1.0 / 2f64.sqrt());
        assert!(r.pass);
    }

    #[test]
    fn zero_data_estimates_pass() {
        let p = DivergenceProblem::from_fns(
            SpatialGrid::new(15).unwrap(),
            TimeGrid::new(0.1, 10).unwrap(),
            |_, _| 1.0,
            |_, _| 0.0,
            |_, _| 0.0,
            |_| 0.0,
        );
        let v = solve_divergence(&p).unwrap();
        for r in [energy_estimate_check(&p, &v, 10.0).unwrap(), linfty_bound_check(&p, &v, 2.0, 10.0).unwrap()] {
            assert!(r.pass);
            assert_eq!(r.ratio, 0.0);
        }
    }

    #[test]
    fn vanishing_data_with_nonzero_solution_fails() {
        let p = heat_problem(15, 10, 0.1);
        let mut q = p.clone();
        q.v0 = vec![0.0; 15];
        let v = solve_divergence(&p).unwrap();
        let r = energy_estimate_check(&q, &v, 10.0).unwrap();
        assert!(!r.pass && r.diagnostic.is_some());
    }

    #[test]
    fn maximum_principle_ratio() {
        let p = heat_problem(31, 100, 0.1);
        let v = solve_divergence(&p).unwrap();
        let r = linfty_bound_check(&p, &v, 2.0, 10.0).unwrap();
        assert!(r.ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn forced_steady_state() {
        let (n, steps, horizon, r0) = (31, 400, 2.0, 2.0);
        let p = DivergenceProblem::from_fns(
            SpatialGrid::new(n).unwrap(),
            TimeGrid::new(horizon, steps).unwrap(),
            |_, _| 1.0,
            |_, _| 0.0,
            |_, _| 1.0,
            |_| 0.0,
        );
        let v = solve_divergence(&p).unwrap();
        // -D²(x(1-x)/2) = 1 holds exactly on the grid
        let h = p.grid.h();
        let steady = |x: f64| 0.5 * x * (1.0 - x);
        let last = v.level(steps);
        for (i, x) in p.grid.nodes().enumerate() {
            assert!((last[i] - steady(x)).abs() < 1e-9);
        }
        assert!((v.sup_norm() - 0.125).abs() < 1e-8);
        let r = linfty_bound_check(&p, &v, r0, 10.0).unwrap();
        let f_norm = (steps as f64 * p.times.dt() * n as f64 * h).powf(1.0 / r0);
        assert!((r.ratio - v.sup_norm() / f_norm).abs() < 1e-12);
    }

    #[test]
    fn nondivergence_heat_and_steady_state() {
        let grid = SpatialGrid::new(63).unwrap();
        let times = TimeGrid::new(0.1, 1000).unwrap();
        let p = NonDivergenceProblem::from_fns(grid, times, |_, _| 1.0, |_, _| 0.0, |x| eigenfunction(1, x), |_| 0.0, |_| 0.0);
        let s = solve_nondivergence(&p, 1.0, 1.0).unwrap();
        let err = grid
            .nodes()
            .enumerate()
            .fold(0.0_f64, |m, (i, x)| m.max((s.interior.get(1000, i) - (-PI * PI * 0.1).exp() * eigenfunction(1, x)).abs()));
        assert!(err < 2e-3, "{err}");

        let times = TimeGrid::new(3.0, 300).unwrap();
        let p = NonDivergenceProblem::from_fns(grid, times, |_, _| 1.0, |_, _| 2.0, |_| 0.0, |_| 0.0, |_| 0.0);
        let s = solve_nondivergence(&p, 1.0, 1.0).unwrap();
        for (i, x) in grid.nodes().enumerate() {
            assert!((s.interior.get(300, i) - x * (1.0 - x)).abs() < 1e-9);
        }
    }

    #[test]
    fn nondivergence_boundary_data() {
        // v = 1 + x solves v_t = v_xx with v(0) = 1, v(1) = 2
        let grid = SpatialGrid::new(15).unwrap();
        let times = TimeGrid::new(0.1, 10).unwrap();
        let p = NonDivergenceProblem::from_fns(grid, times, |_, _| 1.5, |_, _| 0.0, |x| 1.0 + x, |_| 1.0, |_| 2.0);
        let s = solve_nondivergence(&p, 1.0, 2.0).unwrap();
        for (i, x) in grid.nodes().enumerate() {
            assert!((s.interior.get(10, i) - 1.0 - x).abs() < 1e-12);
        }
        assert_eq!(s.left[10], 1.0);
        assert!(matches!(solve_nondivergence(&p, 1.6, 2.0), Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn divergence_and_nondivergence_agree_on_manufactured_solution() {
        // v = e^{-t} sin(πx), a = 2 + sin(x t)
        let exact = |t: f64, x: f64| (-t).exp() * (PI * x).sin();
        let a = |t: f64, x: f64| 2.0 + (x * t).sin();
        let a_x = |t: f64, x: f64| t * (x * t).cos();
        let f_nd = move |t: f64, x: f64| exact(t, x) * (-1.0 + a(t, x) * PI * PI);
        let f_div = move |t: f64, x: f64| f_nd(t, x) - a_x(t, x) * (-t).exp() * PI * (PI * x).cos();
        let errs = |n: usize, steps: usize| {
            let grid = SpatialGrid::new(n).unwrap();
            let times = TimeGrid::new(0.5, steps).unwrap();
            let nd = NonDivergenceProblem::from_fns(grid, times, a, f_nd, |x| exact(0.0, x), |_| 0.0, |_| 0.0);
            let nd = solve_nondivergence(&nd, 1.0, 3.0).unwrap().interior;
            let dv = DivergenceProblem::from_fns(grid, times, a, |_, _| 0.0, f_div, |x| exact(0.0, x));
            let dv = solve_divergence(&dv).unwrap();
            let cross = nd.difference(&dv).unwrap().sup_norm();
            let truth = grid
                .nodes()
                .enumerate()
                .fold(0.0_f64, |m, (i, x)| m.max((nd.get(steps, i) - exact(0.5, x)).abs()));
            (cross, truth)
        };
        let (c1, t1) = errs(31, 200);
        let (c2, t2) = errs(63, 400);
        assert!(c1 < 2e-2 && t1 < 2e-2, "{c1} {t1}");
        assert!(c2 < 0.6 * c1 && t2 < 0.6 * t1, "{c1} {c2} {t1} {t2}");
    }

    fn quasi_config(n: usize, steps: usize, noise: NoiseModel) -> RunConfig {
        RunConfig {
            grid: SpatialGrid::new(n).unwrap(),
            times: TimeGrid::new(0.05, steps).unwrap(),
            coefficients: CoefficientSet::new(
                Coefficient::two_plus_sin(),
                Coefficient::burgers_flux(2.0),
                Coefficient::affine(0.0, -1.0),
                1.0,
                3.0,
            )
            .unwrap(),
            noise,
            initial: Arc::new(|x| (PI * x).sin()),
            seed: 5,
            ceiling: spde::DEFAULT_CEILING,
        }
    }

    #[test]
    fn zero_noise_gives_zero_z_and_exact_y() {
        let run = spde::run(&quasi_config(31, 100, NoiseModel::zero())).unwrap();
        let d = decompose(&run).unwrap();
        assert_eq!(d.z.sup_norm(), 0.0);
        assert!(d.residual_sup < 1e-14);
        assert_eq!(d.y.level(0), run.u.level(0));
    }

    #[test]
    fn unit_diffusion_y_is_noise_free_scheme() {
        let mut cfg = quasi_config(31, 100, NoiseModel::geometric(1.0, 0.5, 31).unwrap());
        cfg.coefficients = CoefficientSet::heat();
        let run = spde::run(&cfg).unwrap();
        let d = decompose(&run).unwrap();
        assert!(d.y_problem.g.iter().flatten().all(|&g| g == 0.0));
        let mut quiet = cfg.clone();
        quiet.noise = NoiseModel::zero();
        let heat = spde::run(&quiet).unwrap();
        assert!(d.y.difference(&heat.u).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn z_starts_at_zero_and_is_linear_in_noise() {
        let model = NoiseModel::geometric(1.0, 0.5, 15).unwrap();
        let doubled = NoiseModel::geometric(2.0, 0.5, 15).unwrap();
        let run = spde::run(&quasi_config(15, 50, model.clone())).unwrap();
        let z1 = stochastic_convolution(&run.path, &model, &run.u).unwrap();
        let z2 = stochastic_convolution(&run.path, &doubled, &run.u).unwrap();
        assert!(z1.level(0).iter().all(|&v| v == 0.0));
        for (a, b) in z1.values().iter().zip(z2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let wrong = NoiseModel::geometric(1.0, 0.5, 7).unwrap();
        assert!(matches!(
            stochastic_convolution(&run.path, &wrong, &run.u),
            Err(Error::TruncationMismatch { .. })
        ));
    }

    #[test]
    fn residual_shrinks_under_refinement() {
        let coarse = spde::run(&quasi_config(31, 125, NoiseModel::geometric(1.0, 0.5, 31).unwrap())).unwrap();
        let fine = spde::run(&quasi_config(63, 500, NoiseModel::geometric(1.0, 0.5, 63).unwrap())).unwrap();
        let (rc, rf) = (decompose(&coarse).unwrap().residual_sup, decompose(&fine).unwrap().residual_sup);
        assert!(rc.is_finite() && rf < rc, "{rc} {rf}");
    }

    #[test]
    fn zero_everything_decomposes_to_zero() {
        let mut cfg = quasi_config(15, 20, NoiseModel::geometric(1.0, 0.5, 15).unwrap());
        cfg.initial = Arc::new(|_| 0.0);
        let d = decompose(&spde::run(&cfg).unwrap()).unwrap();
        assert_eq!(d.residual_sup, 0.0);
        assert_eq!(d.y.sup_norm(), 0.0);
        assert_eq!(d.z.sup_norm(), 0.0);
        let json = serde_json::to_string(&d.summary()).unwrap();
        assert!(json.contains("residual_series"));
    }

    #[test]
    fn compatibility_examples() {
        let grid = SpatialGrid::new(63).unwrap();
        let heat = CoefficientSet::heat();
        let sine = |x: f64| (PI * x).sin();
        for k in 1..=4 {
            let r = compatibility_check(&sine, &heat, &grid, k, 10.0).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let parabola = |x: f64| x * (1.0 - x);
        let r = compatibility_check(&parabola, &heat, &grid, 1, 10.0).unwrap();
        assert!(r.pass);
        let r = compatibility_check(&parabola, &heat, &grid, 2, 10.0).unwrap();
        assert!(!r.pass);
        let t = r.trace("u0_1").unwrap();
        assert!((t.left + 2.0).abs() < 1e-6 && (t.right + 2.0).abs() < 1e-6);

        let coeffs = CoefficientSet::new(
            Coefficient::affine(2.0, 1.0),
            Coefficient::constant(0.0),
            Coefficient::affine(0.0, 1.0),
            1.0,
            3.0,
        )
        .unwrap();
        let r = compatibility_check(&sine, &coeffs, &grid, 2, 10.0).unwrap();
        let t = r.trace("u0_1").unwrap();
        assert!(!r.pass);
        // linear extrapolation error is about |u0⁽¹⁾''(0)| h² = 4π⁴ h²
        assert!((t.left - PI * PI).abs() < 5.0 * PI.powi(4) * grid.h().powi(2), "{}", t.left);
        assert!(compatibility_check(&sine, &heat, &grid, 5, 10.0).is_err());
        assert!(matches!(
            compatibility_check(&|x: f64| x.ln(), &heat, &grid, 2, 10.0),
            Err(Error::InsufficientSmoothness(_))
        ));
    }
}
