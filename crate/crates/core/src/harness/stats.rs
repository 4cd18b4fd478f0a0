use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One-pass mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        iter.into_iter().for_each(|x| w.push(x));
        w
    }
}

/// Mean and unbiased variance by the textbook two-pass formula.
pub fn two_pass(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

impl Aggregate {
    /// `None` for an empty sample; non-finite values are kept and propagate.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let w: Welford = values.iter().copied().collect();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: w.count(),
            mean: w.mean(),
            std: w.variance().sqrt(),
            min: sorted[0],
            q05: quantile_sorted(&sorted, 0.05),
            median: quantile_sorted(&sorted, 0.5),
            q95: quantile_sorted(&sorted, 0.95),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Aggregates every metric name that appears in any record.
pub fn aggregate_metrics<'a>(records: impl IntoIterator<Item = &'a BTreeMap<String, f64>>) -> BTreeMap<String, Aggregate> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (k, v) in r {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    columns
        .into_iter()
        .filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k, a)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_summary() {
        let a = Aggregate::of(&[3.0, 1.0, 2.0, 4.0, 5.0]).unwrap();
        assert_eq!(a.median, 3.0);
        assert_eq!(a.min, 1.0);
        assert_eq!(a.max, 5.0);
        assert!((a.q05 - 1.2).abs() < 1e-15);
        assert!((a.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(Aggregate::of(&[]).is_none());
    }

    #[test]
    fn single_sample_has_zero_spread() {
        let w: Welford = [4.0].into_iter().collect();
        assert_eq!(w.variance(), 0.0);
        assert_eq!(w.mean(), 4.0);
    }
}
