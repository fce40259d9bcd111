//! Empirical laws, distances and the few hypothesis tests the checks need.

use std::fmt::Write as _;

use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::offspring::Neumaier;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("empty sample")]
    Empty,
}

/// `1/2 sum |a_i - b_i|`.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::DimensionMismatch(a.len(), b.len()));
    }
    let mut acc = Neumaier::default();
    for (x, y) in a.iter().zip(b) {
        acc.add((x - y).abs());
    }
    Ok((0.5 * acc.value()).min(1.0))
}

/// Counts over the states `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![0; k], total: 0 }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn from_samples<I: IntoIterator<Item = usize>>(k: usize, samples: I) -> Self {
        let mut e = Self::new(k);
        for s in samples {
            e.record(s);
        }
        e
    }

    /// Panics if `state` is out of range.
    pub fn record(&mut self, state: usize) {
        self.counts[state] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), StatsError> {
        if self.counts.len() != other.counts.len() {
            return Err(StatsError::DimensionMismatch(self.counts.len(), other.counts.len()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn prob(&self, state: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts[state] as f64 / self.total as f64
        }
    }

    /// Standard error of the frequency of `state`.
    pub fn stderr(&self, state: usize) -> f64 {
        bernoulli_stderr(self.prob(state), self.total)
    }

    pub fn tv_to(&self, law: &[f64]) -> Result<f64, StatsError> {
        tv_distance(&self.probs(), law)
    }

    /// CSV with header `state,count,prob`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,count,prob\n");
        for (i, &c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", i, c, self.prob(i)).unwrap();
        }
        out
    }
}

/// Chi-square goodness of fit against the uniform law.
pub fn chi_square_uniformity(counts: &[u64]) -> Result<f64, StatsError> {
    let k = counts.len();
    chi_square_gof(counts, &vec![1.0 / k as f64; k])
}

/// Pearson chi-square test of `counts` against `probs`; returns the p-value.
/// Cells with zero expected mass must have zero counts and are dropped.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<f64, StatsError> {
    if counts.len() != probs.len() {
        return Err(StatsError::DimensionMismatch(counts.len(), probs.len()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return Ok(0.0);
            }
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return Ok(1.0);
    }
    Ok(chi_square_sf(stat, (cells - 1) as f64))
}

/// Survival function of the chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

pub fn binomial_pmf(n: u64, p: f64, i: u64) -> Result<f64, StatsError> {
    check_prob(p)?;
    if i > n {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(if i == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return Ok(if i == n { 1.0 } else { 0.0 });
    }
    let ln = ln_binomial(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
    Ok(ln.exp())
}

/// `Pr{Binomial(n, p) > threshold}`.
pub fn binomial_sf(n: u64, p: f64, threshold: u64) -> Result<f64, StatsError> {
    check_prob(p)?;
    let mut acc = Neumaier::default();
    for i in threshold.saturating_add(1)..=n {
        acc.add(binomial_pmf(n, p, i)?);
    }
    Ok(acc.value().min(1.0))
}

/// `Pr{Binomial(n, p) < threshold}`.
pub fn binomial_lt(n: u64, p: f64, threshold: u64) -> Result<f64, StatsError> {
    check_prob(p)?;
    let mut acc = Neumaier::default();
    for i in 0..threshold.min(n + 1) {
        acc.add(binomial_pmf(n, p, i)?);
    }
    Ok(acc.value().min(1.0))
}

fn check_prob(p: f64) -> Result<(), StatsError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(StatsError::Domain(p))
    }
}

pub fn bernoulli_stderr(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
