//! Empirical regularity of simulated fields: parabolic Hölder norms,
//! Hölder exponents in time and space, and Bessel-norm profiles.
//!
//! Exponents are read off the modulus of continuity
//!
//! ```text
//! M(τ) = max_t E|f(t + τ, x) - f(t, x)|
//! ```
//!
//! where `E` is the average over replicas. The slope of `log M` against
//! `log τ` over dyadic lags is computed per node and the median over nodes
//! is reported. The spatial exponent is the same construction with the roles
//! of `t` and `x` swapped (median over time levels).
//!
//! Taking the max over base points rather than the mean matters for
//! functions whose roughness is localized: for `√t` the mean increment over
//! `t` scales like `τ` while the modulus scales like `√τ`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeField;
use crate::spectral::{bessel_partial_sums, SineBasis};

/// Minimum number of dyadic scales a fit needs.
pub const MIN_SCALES: usize = 4;

/// Exhaustive pair enumeration is used up to this many pairs.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PairSampling {
    /// Exhaustive below the pair limit, stratified above it.
    Auto { per_decade: usize, seed: u64 },
    Exhaustive,
    /// Random pairs grouped by parabolic distance decade.
    Stratified { per_decade: usize, seed: u64 },
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling::Auto {
            per_decade: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderNorm {
    pub beta: f64,
    pub sup: f64,
    pub seminorm: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

impl HolderNorm {
    pub fn value(&self) -> f64 {
        self.sup + self.seminorm
    }
}

/// `max{|t - s|^{1/2}, |x - y|}`.
pub fn parabolic_distance(t: f64, x: f64, s: f64, y: f64) -> f64 {
    (t - s).abs().sqrt().max((x - y).abs())
}

/// `sup|f| + sup |f(t,x) - f(s,y)| / d((t,x),(s,y))^β` over grid points.
pub fn parabolic_holder_norm(field: &SpaceTimeField, beta: f64, sampling: PairSampling) -> Result<HolderNorm> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
    }
    let nx = field.grid().n_interior();
    let nt = field.n_levels();
    let points = nx * nt;
    let total_pairs = points * (points - 1) / 2;
    let times: Vec<f64> = (0..nt).map(|n| field.times().time(n)).collect();
    let xs: Vec<f64> = field.grid().nodes().collect();
    let values = field.values();
    let quotient = |p: usize, q: usize| -> f64 {
        let (n, i, m, j) = (p / nx, p % nx, q / nx, q % nx);
        let d = parabolic_distance(times[n], xs[i], times[m], xs[j]);
        (values[p] - values[q]).abs() / d.powf(beta)
    };

    let (exhaustive, per_decade, seed) = match sampling {
        PairSampling::Exhaustive => (true, 0, 0),
        PairSampling::Auto { per_decade, seed } => (total_pairs <= EXHAUSTIVE_PAIR_LIMIT, per_decade, seed),
        PairSampling::Stratified { per_decade, seed } => (false, per_decade, seed),
    };

    let mut best: f64 = 0.0;
    let mut pairs = 0;
    if exhaustive {
        for p in 0..points {
            for q in p + 1..points {
                best = best.max(quotient(p, q));
            }
        }
        pairs = total_pairs;
    } else {
        // Offsets are drawn from boxes whose parabolic radius runs through
        // the decades 1, 1/10, 1/100, ... down to the mesh size.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = field.times().dt();
        let h = field.grid().h();
        let mesh = h.min(dt.sqrt());
        let mut radius: f64 = 1.0;
        while radius >= mesh {
            let di = ((radius / h).floor() as i64).min(nx as i64 - 1);
            let dn = ((radius * radius / dt).floor() as i64).min(nt as i64 - 1);
            for _ in 0..per_decade {
                let n = rng.random_range(0..nt) as i64;
                let i = rng.random_range(0..nx) as i64;
                let m = n + rng.random_range(-dn..=dn);
                let j = i + rng.random_range(-di..=di);
                if m < 0 || j < 0 || m >= nt as i64 || j >= nx as i64 || (m == n && j == i) {
                    continue;
                }
                best = best.max(quotient(n as usize * nx + i as usize, m as usize * nx + j as usize));
                pairs += 1;
            }
            radius /= 10.0;
        }
        // nearest neighbours in both directions
        for n in 0..nt {
            for i in 0..nx {
                let p = n * nx + i;
                if i + 1 < nx {
                    best = best.max(quotient(p, p + 1));
                    pairs += 1;
                }
                if n + 1 < nt {
                    best = best.max(quotient(p, p + nx));
                    pairs += 1;
                }
            }
        }
    }
    Ok(HolderNorm {
        beta,
        sup: field.sup_norm(),
        seminorm: best,
        pairs,
        exhaustive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub mean_abs_increment: f64,
    pub fit_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    /// Median of the per-series slopes.
    pub exponent: f64,
    /// Standard error of the slope fitted to the median modulus.
    pub std_err: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Median modulus over series, per dyadic scale.
    pub scales: Vec<ScaleRow>,
    /// Number of non-degenerate series that entered the median.
    pub series: usize,
}

impl ExponentEstimate {
    pub fn write_scale_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scale,mean_abs_increment,fit_window")?;
        for r in &self.scales {
            writeln!(out, "{:.16e},{:.16e},{}", r.scale, r.mean_abs_increment, r.fit_window)?;
        }
        Ok(())
    }
}

struct LineFit {
    slope: f64,
    std_err: f64,
    r_squared: f64,
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ssr = (syy - slope * sxy).max(0.0);
    let std_err = if x.len() > 2 { (ssr / (m - 2.0) / sxx).sqrt() } else { f64::NAN };
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    LineFit { slope, std_err, r_squared }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_replicas(fields: &[SpaceTimeField]) -> Result<&SpaceTimeField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidParameter("no fields to measure".into()))?;
    for f in &fields[1..] {
        first.check_aligned(f)?;
    }
    Ok(first)
}

/// Dyadic multiples `2^j` of the unit with `lo ≤ 2^j unit ≤ hi`; also
/// returns the coarser-than-window multiples used only for the table.
fn dyadic_steps(unit: f64, lo: f64, hi: f64, max_steps: usize) -> (Vec<usize>, Vec<bool>) {
    let mut steps = Vec::new();
    let mut inside = Vec::new();
    let mut m = 1;
    while m <= max_steps {
        let s = m as f64 * unit;
        steps.push(m);
        inside.push(s >= lo * (1.0 - 1e-9) && s <= hi * (1.0 + 1e-9));
        m *= 2;
    }
    (steps, inside)
}

/// `moduli[s][series]`, fitted per series then pooled by median.
fn fit_moduli(
    unit: f64,
    steps: &[usize],
    inside: &[bool],
    moduli: &[Vec<f64>],
    window: (f64, f64),
) -> Result<ExponentEstimate> {
    let used: Vec<usize> = (0..steps.len()).filter(|&s| inside[s]).collect();
    if used.len() < MIN_SCALES {
        return Err(Error::InsufficientScales {
            available: used.len(),
            required: MIN_SCALES,
        });
    }
    let n_series = moduli[0].len();
    let logs: Vec<f64> = used.iter().map(|&s| (steps[s] as f64 * unit).ln()).collect();
    let mut slopes = Vec::new();
    let mut good = vec![false; n_series];
    for (series, ok) in good.iter_mut().enumerate() {
        if used.iter().any(|&s| !(moduli[s][series] > 0.0)) {
            continue;
        }
        let y: Vec<f64> = used.iter().map(|&s| moduli[s][series].ln()).collect();
        slopes.push(fit_line(&logs, &y).slope);
        *ok = true;
    }
    if slopes.is_empty() {
        return Err(Error::DegenerateField);
    }
    let series = slopes.len();
    let exponent = median(&mut slopes);
    let scales: Vec<ScaleRow> = steps
        .iter()
        .enumerate()
        .map(|(s, &m)| {
            let mut col: Vec<f64> = moduli[s]
                .iter()
                .zip(&good)
                .filter(|(_, &g)| g)
                .map(|(v, _)| *v)
                .collect();
            ScaleRow {
                scale: m as f64 * unit,
                mean_abs_increment: median(&mut col),
                fit_window: inside[s],
            }
        })
        .collect();
    let y: Vec<f64> = used.iter().map(|&s| scales[s].mean_abs_increment.ln()).collect();
    let pooled = fit_line(&logs, &y);
    Ok(ExponentEstimate {
        exponent,
        std_err: pooled.std_err,
        r_squared: pooled.r_squared,
        window,
        scales,
        series,
    })
}

/// Time exponent with the default lag window `[4 dt, T/8]`.
pub fn estimate_time_exponent(fields: &[SpaceTimeField]) -> Result<ExponentEstimate> {
    let first = check_replicas(fields)?;
    let (dt, horizon) = (first.times().dt(), first.times().horizon());
    estimate_time_exponent_in(fields, (4.0 * dt, horizon / 8.0))
}

pub fn estimate_time_exponent_in(fields: &[SpaceTimeField], window: (f64, f64)) -> Result<ExponentEstimate> {
    let first = check_replicas(fields)?;
    let nx = first.grid().n_interior();
    let nt = first.n_levels();
    let dt = first.times().dt();
    let (steps, inside) = dyadic_steps(dt, window.0, window.1, nt.saturating_sub(1));
    let inv = 1.0 / fields.len() as f64;
    let mut acc = vec![0.0; nx];
    let moduli: Vec<Vec<f64>> = steps
        .iter()
        .map(|&m| {
            let mut best = vec![0.0_f64; nx];
            for n in 0..nt - m {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for f in fields {
                    let (a, b) = (f.level(n), f.level(n + m));
                    for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
                        *s += (y - x).abs();
                    }
                }
                for (bst, s) in best.iter_mut().zip(&acc) {
                    *bst = bst.max(s * inv);
                }
            }
            best
        })
        .collect();
    fit_moduli(dt, &steps, &inside, &moduli, window)
}

/// Space exponent with the default separation window `[2h, 1/8]`.
pub fn estimate_space_exponent(fields: &[SpaceTimeField]) -> Result<ExponentEstimate> {
    let first = check_replicas(fields)?;
    estimate_space_exponent_in(fields, (2.0 * first.grid().h(), 0.125))
}

pub fn estimate_space_exponent_in(fields: &[SpaceTimeField], window: (f64, f64)) -> Result<ExponentEstimate> {
    let first = check_replicas(fields)?;
    let nx = first.grid().n_interior();
    let nt = first.n_levels();
    let h = first.grid().h();
    let (steps, inside) = dyadic_steps(h, window.0, window.1, nx.saturating_sub(1));
    let inv = 1.0 / fields.len() as f64;
    let moduli: Vec<Vec<f64>> = steps
        .iter()
        .map(|&m| {
            (0..nt)
                .map(|n| {
                    (0..nx - m)
                        .map(|i| fields.iter().map(|f| (f.get(n, i + m) - f.get(n, i)).abs()).sum::<f64>() * inv)
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    fit_moduli(h, &steps, &inside, &moduli, window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselRow {
    pub a: f64,
    /// RMS norm over levels and replicas keeping the lower half of the modes.
    pub norm_half: f64,
    /// Same with all grid modes.
    pub norm_full: f64,
    pub relative_change: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselProfile {
    pub rows: Vec<BesselRow>,
    /// `series[a][level]`: replica RMS of the full norm at each level.
    pub series: Vec<Vec<f64>>,
    /// Largest `a` such that every `a' ≤ a` in the list is stable.
    pub cutoff: Option<f64>,
    pub stability_tol: f64,
}

/// Bessel norms of each level, compared between `k_max = n/2` and `k_max = n`.
pub fn bessel_regularity_profile(fields: &[SpaceTimeField], a_list: &[f64], stability_tol: f64) -> Result<BesselProfile> {
    let first = check_replicas(fields)?;
    if let Some(&a) = a_list.iter().find(|&&a| !(a >= 0.0)) {
        return Err(Error::NegativeOrder(a));
    }
    let mut a_sorted = a_list.to_vec();
    a_sorted.sort_by(f64::total_cmp);
    let n = first.grid().n_interior();
    let half = (n / 2).max(1);
    let basis = SineBasis::full(*first.grid());
    let nt = first.n_levels();
    let mut coeffs = vec![0.0; n];
    // [a][level] sums of squares for the two truncations
    let mut full_sq = vec![vec![0.0; nt]; a_sorted.len()];
    let mut half_sq = vec![vec![0.0; nt]; a_sorted.len()];
    for f in fields {
        for lvl in 0..nt {
            basis.forward_into(f.level(lvl), &mut coeffs);
            for (ai, &a) in a_sorted.iter().enumerate() {
                let partial = bessel_partial_sums(&coeffs, a);
                full_sq[ai][lvl] += partial[n - 1];
                half_sq[ai][lvl] += partial[half - 1];
            }
        }
    }
    let reps = fields.len() as f64;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (ai, &a) in a_sorted.iter().enumerate() {
        let norm_full = (full_sq[ai].iter().sum::<f64>() / (reps * nt as f64)).sqrt();
        let norm_half = (half_sq[ai].iter().sum::<f64>() / (reps * nt as f64)).sqrt();
        let relative_change = if norm_full > 0.0 { (norm_full - norm_half) / norm_full } else { 0.0 };
        rows.push(BesselRow {
            a,
            norm_half,
            norm_full,
            relative_change,
            stable: relative_change <= stability_tol,
        });
        series.push(full_sq[ai].iter().map(|s| (s / reps).sqrt()).collect());
    }
    let cutoff = rows.iter().take_while(|r| r.stable).last().map(|r| r.a);
    Ok(BesselProfile {
        rows,
        series,
        cutoff,
        stability_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularitySettings {
    pub beta: Option<f64>,
    pub a_list: Vec<f64>,
    pub stability_tol: f64,
    pub sampling: PairSampling,
}

impl Default for RegularitySettings {
    fn default() -> Self {
        Self {
            beta: Some(0.25),
            a_list: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            stability_tol: 0.05,
            sampling: PairSampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub n_interior: usize,
    pub h: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub replicas: usize,
    pub seed: u64,
}

/// An estimate or the reason it is unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measured<T> {
    Value(T),
    Unavailable(String),
}

impl<T> Measured<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Measured::Value(v),
            Err(e) => Measured::Unavailable(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Measured::Value(v) => Some(v),
            Measured::Unavailable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub field: String,
    pub time_exponent: Measured<ExponentEstimate>,
    pub space_exponent: Measured<ExponentEstimate>,
    /// Hölder norm of the first replica.
    pub holder: Option<Measured<HolderNorm>>,
    pub bessel: Measured<BesselProfile>,
    pub meta: FieldMeta,
}

impl RegularityReport {
    pub fn measure(label: &str, fields: &[SpaceTimeField], seed: u64, settings: &RegularitySettings) -> Result<Self> {
        let first = check_replicas(fields)?;
        Ok(Self {
            field: label.into(),
            time_exponent: Measured::from_result(estimate_time_exponent(fields)),
            space_exponent: Measured::from_result(estimate_space_exponent(fields)),
            holder: settings
                .beta
                .map(|b| Measured::from_result(parabolic_holder_norm(first, b, settings.sampling))),
            bessel: Measured::from_result(bessel_regularity_profile(fields, &settings.a_list, settings.stability_tol)),
            meta: FieldMeta {
                n_interior: first.grid().n_interior(),
                h: first.grid().h(),
                dt: first.times().dt(),
                n_steps: first.times().n_steps(),
                replicas: fields.len(),
                seed,
            },
        })
    }
}
