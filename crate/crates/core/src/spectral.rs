//! Eigen-decomposition of the Dirichlet Laplacian on `(0, 1)`.
//!
//! The eigenpairs are `λ_k = (kπ)²` and `e_k(x) = √2 sin(kπx)`. Sampled on a
//! uniform grid with `n` interior nodes, the first `n` of them are exactly
//! orthonormal for the discrete inner product `Σ_i a_i b_i h`, so the sine
//! transform below is an isometry and inverts exactly at `k_max = n`.
//!
//! Fractional smoothness is measured on the Bessel scale
//! `‖c‖_a = (Σ_k (1 + λ_k)^a c_k²)^{1/2}`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Which eigenvalues drive the semigroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenVariant {
    /// `(kπ)²`, the eigenvalues of the continuous operator.
    #[default]
    Continuum,
    /// `4 sin²(kπh/2) / h²`, the eigenvalues of the three-point Laplacian.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletEigenSystem {
    k_max: usize,
    variant: EigenVariant,
    h: f64,
}

impl DirichletEigenSystem {
    pub fn new(grid: &SpatialGrid, k_max: usize, variant: EigenVariant) -> Result<Self> {
        if k_max == 0 || k_max > grid.n_interior() {
            return Err(Error::TruncationTooLarge {
                k_max,
                n_interior: grid.n_interior(),
            });
        }
        Ok(Self {
            k_max,
            variant,
            h: grid.h(),
        })
    }

    /// Continuum eigenpairs, usable without a grid.
    pub fn continuum(k_max: usize) -> Self {
        Self {
            k_max,
            variant: EigenVariant::Continuum,
            h: 0.0,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Eigenvalue of mode `k` (one based).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        match self.variant {
            EigenVariant::Continuum => continuum_eigenvalue(k),
            EigenVariant::Discrete => {
                let s = (k as f64 * PI * self.h / 2.0).sin();
                4.0 * s * s / (self.h * self.h)
            }
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.k_max).map(|k| self.eigenvalue(k)).collect()
    }

    /// `S(t) c`, i.e. `c_k e^{-λ_k t}`.
    pub fn semigroup(&self, c: &SpectralField, t: f64) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        Ok(SpectralField::new(
            c.coeffs
                .iter()
                .enumerate()
                .map(|(i, ck)| ck * (-self.eigenvalue(i + 1) * t).exp())
                .collect(),
        ))
    }
}

pub fn continuum_eigenvalue(k: usize) -> f64 {
    let kp = k as f64 * PI;
    kp * kp
}

/// `e_k(x) = √2 sin(kπx)`.
pub fn eigenfunction(k: usize, x: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * x).sin()
}

/// Coefficients `c_1, …, c_{k_max}` in the sine basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Unit coefficient on mode `k`, zero elsewhere.
    pub fn single_mode(k_max: usize, k: usize) -> Self {
        let mut coeffs = vec![0.0; k_max];
        coeffs[k - 1] = 1.0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn k_max(&self) -> usize {
        self.coeffs.len()
    }

    /// Keeps the first `k` modes.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            coeffs: self.coeffs[..k.min(self.coeffs.len())].to_vec(),
        }
    }
}

/// Precomputed `e_k(x_i)` table for one grid.
///
/// Built once per grid; each forward or inverse transform is then a dense
/// `k_max × n` product with no trigonometric calls.
#[derive(Debug, Clone)]
pub struct SineBasis {
    grid: SpatialGrid,
    k_max: usize,
    // row k-1 holds e_k at every interior node
    table: Vec<f64>,
}

impl SineBasis {
    pub fn new(grid: SpatialGrid, k_max: usize) -> Result<Self> {
        let n = grid.n_interior();
        if k_max == 0 || k_max > n {
            return Err(Error::TruncationTooLarge {
                k_max,
                n_interior: n,
            });
        }
        // sin(kπ(i+1)/(n+1)) only depends on k(i+1) mod 2(n+1)
        let period = 2 * (n + 1);
        let sines: Vec<f64> = (0..period)
            .map(|m| SQRT_2 * (PI * m as f64 / (n + 1) as f64).sin())
            .collect();
        let mut table = Vec::with_capacity(k_max * n);
        for k in 1..=k_max {
            table.extend((1..=n).map(|j| sines[(k * j) % period]));
        }
        Ok(Self { grid, k_max, table })
    }

    pub fn full(grid: SpatialGrid) -> Self {
        Self::new(grid, grid.n_interior()).expect("k_max = n_interior is valid")
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Row of `e_k` values at the interior nodes.
    pub fn mode(&self, k: usize) -> &[f64] {
        let n = self.grid.n_interior();
        &self.table[(k - 1) * n..k * n]
    }

    pub fn forward(&self, values: &[f64]) -> SpectralField {
        let mut out = vec![0.0; self.k_max];
        self.forward_into(values, &mut out);
        SpectralField::new(out)
    }

    pub fn forward_into(&self, values: &[f64], out: &mut [f64]) {
        let h = self.grid.h();
        for (k, slot) in out.iter_mut().enumerate() {
            let row = self.mode(k + 1);
            *slot = h * row.iter().zip(values).map(|(e, v)| e * v).sum::<f64>();
        }
    }

    pub fn inverse(&self, c: &SpectralField) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_interior()];
        self.inverse_into(c.coeffs(), &mut out);
        out
    }

    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &ck) in coeffs.iter().enumerate().take(self.k_max) {
            if ck == 0.0 {
                continue;
            }
            for (v, e) in out.iter_mut().zip(self.mode(k + 1)) {
                *v += ck * e;
            }
        }
    }
}

/// `c_k = Σ_i v_i e_k(x_i) h` for `k = 1..=k_max`.
pub fn sine_transform(grid: &SpatialGrid, values: &[f64], k_max: usize) -> Result<SpectralField> {
    if values.len() != grid.n_interior() {
        return Err(Error::GridMismatch(format!(
            "level has {} values, grid has {} nodes",
            values.len(),
            grid.n_interior()
        )));
    }
    Ok(SineBasis::new(*grid, k_max)?.forward(values))
}

/// `v_i = Σ_k c_k e_k(x_i)`.
pub fn inverse_sine_transform(grid: &SpatialGrid, c: &SpectralField) -> Result<Vec<f64>> {
    Ok(SineBasis::new(*grid, c.k_max())?.inverse(c))
}

/// Heat semigroup with the continuum eigenvalues.
pub fn semigroup_apply(c: &SpectralField, t: f64) -> Result<SpectralField> {
    DirichletEigenSystem::continuum(c.k_max()).semigroup(c, t)
}

/// Discrete `H^{a,2}` norm `(Σ_k (1 + λ_k)^a c_k²)^{1/2}`.
pub fn bessel_norm(c: &SpectralField, a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::NegativeOrder(a));
    }
    Ok(bessel_partial_sums(c.coeffs(), a)
        .last()
        .copied()
        .unwrap_or(0.0)
        .sqrt())
}

/// Running sums of `(1 + λ_k)^a c_k²`; entry `k-1` is the squared norm of
/// the first `k` modes.
pub fn bessel_partial_sums(coeffs: &[f64], a: f64) -> Vec<f64> {
    let mut acc = 0.0;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            acc += (1.0 + continuum_eigenvalue(i + 1)).powf(a) * c * c;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRow {
    pub t: f64,
    /// Operator norm of `S(t)` from `H^{a,2}` to `H^{a+δ,2}` on `k_max` modes.
    pub ratio: f64,
    /// Mode attaining the norm.
    pub argmax_mode: usize,
    /// `ratio · t^{δ/2}`, the empirical constant.
    pub scaled: f64,
}

/// Measures `‖S(t)‖_{a → a+δ}` for each `t`.
///
/// `S(t)` is diagonal in the sine basis and the Bessel weights are too, so
/// the operator norm is the largest single-mode gain
/// `(1 + λ_k)^{δ/2} e^{-λ_k t}`. The order `a` therefore drops out; it is
/// kept in the signature because the bound is stated for every `a`.
pub fn regularization_constant_probe(
    a: f64,
    delta: f64,
    t_list: &[f64],
    k_max: usize,
) -> Result<Vec<RegularizationRow>> {
    if !(a >= 0.0) {
        return Err(Error::NegativeOrder(a));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "regularity gain must be nonnegative, got {delta}"
        )));
    }
    t_list
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(Error::NegativeTime(t));
            }
            let (argmax_mode, ratio) = (1..=k_max)
                .map(|k| {
                    let lam = continuum_eigenvalue(k);
                    (k, (1.0 + lam).powf(delta / 2.0) * (-lam * t).exp())
                })
                .fold((1, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
            Ok(RegularizationRow {
                t,
                ratio,
                argmax_mode,
                scaled: ratio * t.powf(delta / 2.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n).unwrap()
    }

    #[test]
    fn transform_of_first_mode() {
        let g = grid(16);
        let v: Vec<f64> = g.nodes().map(|x| eigenfunction(1, x)).collect();
        let c = sine_transform(&g, &v, 16).unwrap();
        assert!((c.coeffs()[0] - 1.0).abs() < 1e-14);
        assert!(c.coeffs()[1..].iter().all(|x| x.abs() < 1e-14));

        let z = sine_transform(&g, &[0.0; 16], 8).unwrap();
        assert!(z.coeffs().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn transform_rejects_excess_modes() {
        let g = grid(8);
        assert!(matches!(
            sine_transform(&g, &[0.0; 8], 9),
            Err(Error::TruncationTooLarge { k_max: 9, n_interior: 8 })
        ));
    }

    #[test]
    fn random_round_trip() {
        let g = grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = sine_transform(&g, &v, 8).unwrap();
        let back = inverse_sine_transform(&g, &c).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_table_matches_direct_evaluation() {
        let g = grid(13);
        let b = SineBasis::full(g);
        for k in 1..=13 {
            for (i, x) in g.nodes().enumerate() {
                assert!((b.mode(k)[i] - eigenfunction(k, x)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn semigroup_values() {
        let c = SpectralField::new(vec![1.0, -2.0, 0.5]);
        assert_eq!(semigroup_apply(&c, 0.0).unwrap(), c);
        let one = SpectralField::single_mode(3, 1);
        let s = semigroup_apply(&one, 0.1).unwrap();
        assert!((s.coeffs()[0] - (-0.1 * PI * PI).exp()).abs() < 1e-15);
        assert!((s.coeffs()[0] - 0.37268).abs() < 1e-4);
        assert_eq!(&s.coeffs()[1..], &[0.0, 0.0]);
        assert!(matches!(semigroup_apply(&c, -1.0), Err(Error::NegativeTime(_))));

        let mut prev = f64::INFINITY;
        for t in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let n = bessel_norm(&semigroup_apply(&c, t).unwrap(), 0.0).unwrap();
            assert!(n < prev);
            prev = n;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn discrete_variant_eigenvalues() {
        let g = grid(31);
        let sys = DirichletEigenSystem::new(&g, 31, EigenVariant::Discrete).unwrap();
        let h = g.h();
        let l1 = sys.eigenvalue(1);
        // 2(1 - cos kπh)/h² == 4 sin²(kπh/2)/h²
        assert!((l1 - 2.0 * (1.0 - (PI * h).cos()) / (h * h)).abs() < 1e-9);
        assert!(l1 < PI * PI);
        let ev = sys.eigenvalues();
        assert!(ev.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bessel_values() {
        let c = SpectralField::new(vec![3.0, 4.0]);
        assert!((bessel_norm(&c, 0.0).unwrap() - 5.0).abs() < 1e-15);
        let e1 = SpectralField::single_mode(4, 1);
        let n = bessel_norm(&e1, 1.0).unwrap();
        assert!((n - (1.0 + PI * PI).sqrt()).abs() < 1e-14);
        assert!((n - 3.2969).abs() < 1e-4);
        assert!(matches!(bessel_norm(&c, -0.5), Err(Error::NegativeOrder(_))));
    }

    #[test]
    fn rough_field_norm_grows_faster_than_smooth() {
        // direct summation oracle
        let k_max = 64;
        let smooth = SpectralField::single_mode(k_max, 1);
        let rough = SpectralField::new((1..=k_max).map(|k| 1.0 / k as f64).collect());
        let mut prev = 0.0;
        for a in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let direct_rough: f64 = (1..=k_max)
                .map(|k| (1.0 + (k as f64 * PI).powi(2)).powf(a) / (k * k) as f64)
                .sum::<f64>()
                .sqrt();
            let direct_smooth = (1.0 + PI * PI).powf(a / 2.0);
            let r = bessel_norm(&rough, a).unwrap();
            assert!((r - direct_rough).abs() < 1e-10 * direct_rough);
            let ratio = r / bessel_norm(&smooth, a).unwrap();
            assert!((ratio - direct_rough / direct_smooth).abs() < 1e-10 * ratio);
            assert!(ratio > prev);
            prev = ratio;
        }
    }

    #[test]
    fn contraction_without_gain() {
        let rows = regularization_constant_probe(1.0, 0.0, &[1e-4, 0.01, 1.0], 200).unwrap();
        for r in rows {
            assert!(r.ratio <= 1.0);
        }
    }

    #[test]
    fn probe_matches_continuous_maximisation() {
        // Oracle: maximise g(λ) = (1+λ)^{δ/2} e^{-λt} over λ ≥ π² on a dense
        // log grid; the discrete max over λ_k can only be smaller.
        let delta = 1.5;
        let t_list = [1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2];
        let rows = regularization_constant_probe(0.5, delta, &t_list, 400).unwrap();
        for r in &rows {
            let mut best: f64 = 0.0;
            let mut lam = PI * PI;
            while lam < 1e7 {
                best = best.max((1.0 + lam).powf(delta / 2.0) * (-lam * r.t).exp());
                lam *= 1.0005;
            }
            assert!(r.ratio <= best * (1.0 + 1e-9));
            assert!(r.ratio >= 0.8 * best, "t={} ratio={} cont={}", r.t, r.ratio, best);
        }
        for w in rows.windows(2) {
            assert!(w[1].scaled <= 2.0 * w[0].scaled && w[1].scaled >= 0.5 * w[0].scaled);
        }
    }
}
