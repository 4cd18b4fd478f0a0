//! Truncated cylindrical Wiener noise and the diffusion operator `H(u)`.
//!
//! `W(t) = Σ_k β_k(t) e_k` is kept for `k = 1..=K`. Two families of `H` are
//! supported:
//!
//! * finitely many Nemytskij maps, `H(u) e_k = H_k(·, u(·))`;
//! * linear multiplicative noise with a diagonal covariance factor,
//!   `H(u) e_k = u · q_k · e_k`.
//!
//! # Path refinement
//!
//! Paths are built with the Lévy midpoint construction. Writing
//! `n_steps = b · 2^L` with `b` odd, each mode first receives `b` independent
//! increments on the coarse grid, then every dyadic level inserts midpoints
//! `W(m) = (W(l) + W(r)) / 2 + √(Δ/4) Z`. The normals for mode `k` at level
//! `j` come from their own counter-seeded stream, so two paths with the same
//! seed whose step counts differ by a power of two agree on the coarser grid.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, SpatialGrid, TimeGrid};
use crate::spectral::{bessel_norm, eigenfunction, SineBasis};

/// Seeded Brownian increments, one per mode and step.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    seed: u64,
    times: TimeGrid,
    k_trunc: usize,
    // [step][mode]
    increments: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic key mixing, used for replica seeds and path streams.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.rotate_left(32))
}

fn stream(seed: u64, mode: usize, level: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, mode as u64, level as u64))
}

impl WienerPath {
    pub fn sample(seed: u64, times: TimeGrid, k_trunc: usize) -> Result<Self> {
        if k_trunc == 0 {
            return Err(Error::InvalidParameter("need at least one noise mode".into()));
        }
        let n = times.n_steps();
        let levels = n.trailing_zeros() as usize;
        let base = n >> levels;
        let horizon = times.horizon();

        let mut increments = vec![0.0; n * k_trunc];
        let mut w = Vec::with_capacity(n + 1);
        let mut next = Vec::with_capacity(n + 1);
        for k in 1..=k_trunc {
            let mut rng = stream(seed, k, 0);
            let mut span = horizon / base as f64;
            w.clear();
            w.push(0.0);
            let sd = span.sqrt();
            for _ in 0..base {
                let z: f64 = StandardNormal.sample(&mut rng);
                let last = *w.last().unwrap();
                w.push(last + sd * z);
            }
            for level in 1..=levels {
                let mut rng = stream(seed, k, level);
                let sd = (span / 4.0).sqrt();
                next.clear();
                for pair in w.windows(2) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    next.push(pair[0]);
                    next.push(0.5 * (pair[0] + pair[1]) + sd * z);
                }
                next.push(*w.last().unwrap());
                std::mem::swap(&mut w, &mut next);
                span /= 2.0;
            }
            for (step, pair) in w.windows(2).enumerate() {
                increments[step * k_trunc + (k - 1)] = pair[1] - pair[0];
            }
        }
        Ok(Self {
            seed,
            times,
            k_trunc,
            increments,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn k_trunc(&self) -> usize {
        self.k_trunc
    }

    /// `ΔW_k^n` for every mode at step `n`.
    pub fn increments(&self, step: usize) -> &[f64] {
        &self.increments[step * self.k_trunc..(step + 1) * self.k_trunc]
    }

    pub fn increment(&self, step: usize, k: usize) -> f64 {
        self.increments[step * self.k_trunc + (k - 1)]
    }

    /// `β_k(t_n)` for every level.
    pub fn mode_path(&self, k: usize) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain((0..self.times.n_steps()).map(|n| {
                acc += self.increment(n, k);
                acc
            }))
            .collect()
    }

    /// Sums groups of `factor` consecutive increments.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let n = self.times.n_steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {n} steps by {factor}"
            )));
        }
        let times = TimeGrid::new(self.times.horizon(), n / factor)?;
        let mut increments = vec![0.0; times.n_steps() * self.k_trunc];
        for step in 0..n {
            let dst = (step / factor) * self.k_trunc;
            for (slot, inc) in increments[dst..dst + self.k_trunc]
                .iter_mut()
                .zip(self.increments(step))
            {
                *slot += inc;
            }
        }
        Ok(Self {
            seed: self.seed,
            times,
            k_trunc: self.k_trunc,
            increments,
        })
    }
}

/// A Nemytskij map `(x, ξ) ↦ H_k(x, ξ)`.
pub type NemytskijFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NoiseModel {
    /// `d` independent Brownian motions, `H(u) e_k = H_k(·, u)`.
    FiniteDim { label: String, maps: Vec<NemytskijFn> },
    /// `H(u) e_k = u q_k e_k`.
    LinearQ { q: Vec<f64> },
}

impl fmt::Debug for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::FiniteDim { label, maps } => f
                .debug_struct("FiniteDim")
                .field("label", label)
                .field("d", &maps.len())
                .finish(),
            NoiseModel::LinearQ { q } => f.debug_struct("LinearQ").field("q", q).finish(),
        }
    }
}

impl NoiseModel {
    pub fn finite_dim(label: impl Into<String>, maps: Vec<NemytskijFn>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidParameter("finite-dimensional noise needs d ≥ 1".into()));
        }
        Ok(NoiseModel::FiniteDim {
            label: label.into(),
            maps,
        })
    }

    /// Single map `H_1`.
    pub fn scalar(label: impl Into<String>, map: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        NoiseModel::FiniteDim {
            label: label.into(),
            maps: vec![Arc::new(map)],
        }
    }

    /// `H(u) e_1 = σ e_1`, independent of `u`.
    pub fn additive_first_mode(sigma: f64) -> Self {
        Self::scalar("additive_e1", move |x, _| sigma * eigenfunction(1, x))
    }

    pub fn zero() -> Self {
        Self::scalar("zero", |_, _| 0.0)
    }

    pub fn linear_q(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidParameter("linear noise needs at least one mode".into()));
        }
        if let Some(i) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "noise multiplier",
                index: i,
            });
        }
        Ok(NoiseModel::LinearQ { q })
    }

    /// `q_k = scale · ratio^{k-1}` for `k = 1..=k_trunc`.
    pub fn geometric(scale: f64, ratio: f64, k_trunc: usize) -> Result<Self> {
        Self::linear_q((0..k_trunc).map(|i| scale * ratio.powi(i as i32)).collect())
    }

    pub fn k_trunc(&self) -> usize {
        match self {
            NoiseModel::FiniteDim { maps, .. } => maps.len(),
            NoiseModel::LinearQ { q } => q.len(),
        }
    }

    /// `H_k(x, ξ)` in Nemytskij form.
    pub fn value(&self, k: usize, x: f64, xi: f64) -> f64 {
        match self {
            NoiseModel::FiniteDim { maps, .. } => maps[k - 1](x, xi),
            NoiseModel::LinearQ { q } => xi * q[k - 1] * eigenfunction(k, x),
        }
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k_trunc() {
            return Err(Error::ModeOutOfRange {
                k,
                k_trunc: self.k_trunc(),
            });
        }
        Ok(())
    }

    /// `H(u) e_k` sampled at the interior nodes.
    pub fn apply(&self, grid: &SpatialGrid, u: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_mode(k)?;
        let out: Vec<f64> = grid
            .nodes()
            .zip(u)
            .map(|(x, &xi)| self.value(k, x, xi))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "noise operator output",
                index: i,
            });
        }
        Ok(out)
    }

    /// `H_k(x, 0) = 0` at both endpoints for every `k`.
    pub fn vanishes_on_boundary(&self) -> bool {
        (1..=self.k_trunc())
            .all(|k| self.value(k, 0.0, 0.0).abs() < 1e-12 && self.value(k, 1.0, 0.0).abs() < 1e-12)
    }

    /// `Σ_k ‖Q e_k‖²_{a,∞}` for linear noise, with `‖e_k‖_{a,∞} ≤ √2 (1+λ_k)^{a/2}`.
    pub fn covariance_budget(&self, a: f64) -> Option<f64> {
        match self {
            NoiseModel::LinearQ { q } => Some(
                q.iter()
                    .enumerate()
                    .map(|(i, qk)| {
                        let lam = ((i + 1) as f64 * PI).powi(2);
                        2.0 * qk * qk * (1.0 + lam).powf(a)
                    })
                    .sum(),
            ),
            NoiseModel::FiniteDim { .. } => None,
        }
    }
}

/// A noise model bound to a grid, for the inner time-stepping loop.
pub struct NoiseForcing<'a> {
    model: &'a NoiseModel,
    nodes: Vec<f64>,
    // [mode][node] of q_k e_k(x_i) for linear noise
    table: Vec<f64>,
}

impl<'a> NoiseForcing<'a> {
    pub fn new(model: &'a NoiseModel, grid: &SpatialGrid) -> Self {
        let nodes: Vec<f64> = grid.nodes().collect();
        let table = match model {
            NoiseModel::LinearQ { q } => q
                .iter()
                .enumerate()
                .flat_map(|(i, qk)| nodes.iter().map(move |&x| qk * eigenfunction(i + 1, x)))
                .collect(),
            NoiseModel::FiniteDim { .. } => Vec::new(),
        };
        Self { model, nodes, table }
    }

    /// `out = Σ_k H(u) e_k ΔW_k`.
    pub fn accumulate(&self, u: &[f64], dw: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.model {
            NoiseModel::FiniteDim { maps, .. } => {
                for (map, &w) in maps.iter().zip(dw) {
                    for ((o, &x), &xi) in out.iter_mut().zip(&self.nodes).zip(u) {
                        *o += map(x, xi) * w;
                    }
                }
            }
            NoiseModel::LinearQ { .. } => {
                let n = self.nodes.len();
                for (row, &w) in self.table.chunks_exact(n).zip(dw) {
                    for (o, e) in out.iter_mut().zip(row) {
                        *o += e * w;
                    }
                }
                for (o, &xi) in out.iter_mut().zip(u) {
                    *o *= xi;
                }
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "noise forcing",
                index: i,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Best constant in `Σ_k H_k(x, ξ)² ≤ C (1 + ξ²)` over all probed points.
    pub constant: f64,
    /// `(probe scale, constant on the scaled probe set)`.
    pub ladder: Vec<(f64, f64)>,
    /// `log2` of the constant's growth over the last doubling.
    pub growth_exponent: f64,
    pub pass: bool,
}

const GROWTH_DOUBLINGS: usize = 3;
const GROWTH_EXPONENT_LIMIT: f64 = 0.5;

fn growth_ratio(model: &NoiseModel, grid: &SpatialGrid, probes: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for x in grid.nodes() {
        for &xi in probes {
            let s: f64 = (1..=model.k_trunc())
                .map(|k| model.value(k, x, xi).powi(2))
                .sum();
            best = best.max(s / (1.0 + xi * xi));
        }
    }
    best
}

/// Linear growth check on the probe values and three successive doublings
/// of them. Passes when the constant is finite and stops growing: a
/// superlinear `H` makes it grow like `ξ^{2(p-1)}`.
pub fn check_growth(model: &NoiseModel, grid: &SpatialGrid, probes: &[f64]) -> Result<GrowthReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("growth check needs probe values".into()));
    }
    let ladder: Vec<(f64, f64)> = (0..=GROWTH_DOUBLINGS)
        .map(|j| {
            let scale = (1u32 << j) as f64;
            let scaled: Vec<f64> = probes.iter().map(|p| p * scale).collect();
            (scale, growth_ratio(model, grid, &scaled))
        })
        .collect();
    let constant = ladder.iter().fold(0.0_f64, |m, &(_, c)| m.max(c));
    let (prev, last) = (ladder[GROWTH_DOUBLINGS - 1].1, ladder[GROWTH_DOUBLINGS].1);
    let growth_exponent = if last == 0.0 {
        0.0
    } else if prev == 0.0 {
        f64::INFINITY
    } else {
        (last / prev).log2()
    };
    Ok(GrowthReport {
        constant,
        pass: constant.is_finite() && growth_exponent <= GROWTH_EXPONENT_LIMIT,
        ladder,
        growth_exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarReport {
    pub a: f64,
    /// Largest surrogate-to-bound ratio over the probes, original grid.
    pub ratio: f64,
    /// Same on the grid with half the spacing.
    pub ratio_refined: f64,
    /// `H_k(x, 0) = 0` on the boundary, relevant once `a > 1/2`.
    pub trace_condition: bool,
    pub pass: bool,
}

const HAR_REFINEMENT_TOL: f64 = 0.2;

/// `(Σ_k ‖H(u) e_k‖²_{a,2})^{1/2}`, the Hilbert–Schmidt stand-in for the
/// γ-radonifying norm.
pub fn hilbert_schmidt_norm(
    model: &NoiseModel,
    basis: &SineBasis,
    u: &[f64],
    a: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for k in 1..=model.k_trunc() {
        let hk = model.apply(basis.grid(), u, k)?;
        acc += bessel_norm(&basis.forward(&hk), a)?.powi(2);
    }
    Ok(acc.sqrt())
}

/// Discrete `W^{1,p}` norm `(‖u‖_p^p + ‖∇u‖_p^p)^{1/p}`.
pub fn sobolev_norm(u: &[f64], h: f64, p: f64) -> f64 {
    let grad = grid::gradient(u, h);
    let lp = grid::lp_norm(u, h, p).powf(p);
    let gp = grad.iter().map(|g| g.abs().powf(p)).sum::<f64>() * h;
    (lp + gp).powf(1.0 / p)
}

/// Right side of the hypothesis at `r = 2`, without its constant.
pub fn har_bound(basis: &SineBasis, u: &[f64], a: f64) -> Result<f64> {
    let ua = bessel_norm(&basis.forward(u), a)?;
    Ok(if a <= 1.0 {
        1.0 + ua
    } else {
        1.0 + ua + sobolev_norm(u, basis.grid().h(), 2.0 * a).powf(a)
    })
}

fn max_har_ratio(
    model: &NoiseModel,
    grid: SpatialGrid,
    a: f64,
    probes: &[&dyn Fn(f64) -> f64],
) -> Result<f64> {
    let basis = SineBasis::full(grid);
    let mut best: f64 = 0.0;
    for p in probes {
        let u: Vec<f64> = grid.nodes().map(p).collect();
        let s = hilbert_schmidt_norm(model, &basis, &u, a)?;
        best = best.max(s / har_bound(&basis, &u, a)?);
    }
    Ok(best)
}

/// Surrogate check of the `(H_{a,2})` hypothesis: the largest ratio of
/// `‖H(u)‖_{HS(K, H^{a,2})}` to its admissible bound over the probe
/// profiles, on the grid and on its refinement. Passes when both ratios are
/// finite and agree within 20%.
pub fn check_har_surrogate(
    model: &NoiseModel,
    grid: &SpatialGrid,
    a: f64,
    probes: &[&dyn Fn(f64) -> f64],
) -> Result<HarReport> {
    if !(a >= 0.0) {
        return Err(Error::NegativeOrder(a));
    }
    let ratio = max_har_ratio(model, *grid, a, probes)?;
    let ratio_refined = max_har_ratio(model, grid.refined(), a, probes)?;
    let stable = (ratio_refined - ratio).abs() <= HAR_REFINEMENT_TOL * ratio.max(ratio_refined)
        || ratio.max(ratio_refined) < 1e-300;
    let trace_condition = a <= 0.5 || model.vanishes_on_boundary();
    Ok(HarReport {
        a,
        ratio,
        ratio_refined,
        trace_condition,
        pass: ratio.is_finite() && ratio_refined.is_finite() && stable,
    })
}
