//! Critical offspring laws and the quantities derived from them.
//!
//! An [`OffspringDistribution`] is the law of the number of children of a
//! node in a Galton-Watson tree. Only critical laws (mean exactly one) with
//! positive variance are accepted; the constructor rejects anything else
//! rather than renormalizing it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

/// Default truncation tolerance for series over parametric laws.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-12;
const MEAN_TOLERANCE: f64 = 1e-9;
const MAX_SUPPORT_INDEX: usize = 1 << 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OffspringError {
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("mean is {0}, expected 1 (critical law)")]
    NotCritical(f64),
    #[error("degenerate law: p_1 = 1 (paths are excluded)")]
    Degenerate,
    #[error("invalid probability {value} at index {index}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("support index {0} exceeds 2^32")]
    SupportTooLarge(usize),
    #[error("argument {0} outside [0, 1]")]
    Domain(f64),
}

/// The three families of offspring laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffspringKind {
    /// Finite support given by an explicit probability vector.
    Explicit,
    /// `p_i = 2^-(i+1)`, the unique critical geometric law.
    Geometric,
    /// Poisson with mean one.
    Poisson,
}

/// JSON form of an offspring law, e.g. `{"kind":"explicit","p":[0.5,0.0,0.5]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OffspringSpec {
    Explicit { p: Vec<f64> },
    Geometric,
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    kind: OffspringKind,
    /// Explicit: the full pmf. Parametric: unused.
    probs: Vec<f64>,
    cdf: Vec<f64>,
    size_biased_cdf: Vec<f64>,
    tail_tolerance: f64,
}

impl OffspringDistribution {
    /// Builds a finite-support law from `p[i] = Pr{xi = i}`.
    pub fn explicit(p: Vec<f64>) -> Result<Self, OffspringError> {
        let mut p = p;
        for (index, &value) in p.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(OffspringError::InvalidProbability { index, value });
            }
        }
        while p.len() > 1 && p.last() == Some(&0.0) {
            p.pop();
        }
        if p.len() > MAX_SUPPORT_INDEX {
            return Err(OffspringError::SupportTooLarge(p.len() - 1));
        }
        let total = neumaier_sum(p.iter().copied());
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(OffspringError::NotNormalized(total));
        }
        let mean = neumaier_sum(p.iter().enumerate().map(|(i, &pi)| i as f64 * pi));
        if (mean - 1.0).abs() > MEAN_TOLERANCE {
            return Err(OffspringError::NotCritical(mean));
        }
        if p.get(1).copied().unwrap_or(0.0) == 1.0 {
            return Err(OffspringError::Degenerate);
        }
        let cdf = running_sum(p.iter().copied());
        let size_biased_cdf = running_sum(p.iter().enumerate().map(|(i, &pi)| i as f64 * pi));
        Ok(Self {
            kind: OffspringKind::Explicit,
            probs: p,
            cdf,
            size_biased_cdf,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        })
    }

    /// `p_0 = p_2 = 1/2`: uniformly random full binary (Catalan) trees.
    pub fn catalan() -> Self {
        Self::explicit(vec![0.5, 0.0, 0.5]).expect("catalan law is critical")
    }

    /// Geometric law with `p_i = 2^-(i+1)`; conditioned trees are uniform
    /// ordered (planted plane) trees.
    pub fn geometric() -> Self {
        Self::parametric(OffspringKind::Geometric)
    }

    /// Poisson(1); conditioned trees are Cayley trees.
    pub fn poisson() -> Self {
        Self::parametric(OffspringKind::Poisson)
    }

    fn parametric(kind: OffspringKind) -> Self {
        Self {
            kind,
            probs: Vec::new(),
            cdf: Vec::new(),
            size_biased_cdf: Vec::new(),
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }

    pub fn from_spec(spec: &OffspringSpec) -> Result<Self, OffspringError> {
        match spec {
            OffspringSpec::Explicit { p } => Self::explicit(p.clone()),
            OffspringSpec::Geometric => Ok(Self::geometric()),
            OffspringSpec::Poisson => Ok(Self::poisson()),
        }
    }

    pub fn to_spec(&self) -> OffspringSpec {
        match self.kind {
            OffspringKind::Explicit => OffspringSpec::Explicit { p: self.probs.clone() },
            OffspringKind::Geometric => OffspringSpec::Geometric,
            OffspringKind::Poisson => OffspringSpec::Poisson,
        }
    }

    pub fn with_tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn kind(&self) -> OffspringKind {
        self.kind
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    /// Largest index with positive mass, or `None` for infinite support.
    pub fn max_support(&self) -> Option<usize> {
        match self.kind {
            OffspringKind::Explicit => Some(self.probs.len() - 1),
            _ => None,
        }
    }

    pub fn pmf(&self, i: usize) -> f64 {
        match self.kind {
            OffspringKind::Explicit => self.probs.get(i).copied().unwrap_or(0.0),
            OffspringKind::Geometric => {
                if i >= 1100 {
                    0.0
                } else {
                    0.5f64.powi(i as i32 + 1)
                }
            }
            OffspringKind::Poisson => (-1.0 - ln_factorial(i as u64)).exp(),
        }
    }

    /// `Pr{xi >= i}`, computed without cancellation.
    pub fn tail_mass(&self, i: usize) -> f64 {
        match self.kind {
            OffspringKind::Explicit => {
                if i >= self.probs.len() {
                    0.0
                } else {
                    neumaier_sum(self.probs[i..].iter().copied())
                }
            }
            OffspringKind::Geometric => {
                if i >= 1100 {
                    0.0
                } else {
                    0.5f64.powi(i as i32)
                }
            }
            OffspringKind::Poisson => {
                if i == 0 {
                    return 1.0;
                }
                let mut term = self.pmf(i);
                let mut acc = Neumaier::default();
                let mut j = i;
                while term > 0.0 {
                    acc.add(term);
                    j += 1;
                    term /= j as f64;
                    if term < acc.value() * 1e-18 {
                        break;
                    }
                }
                acc.value()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            OffspringKind::Explicit => {
                neumaier_sum(self.probs.iter().enumerate().map(|(i, &p)| i as f64 * p))
            }
            _ => 1.0,
        }
    }

    /// `sigma^2`; the mean is one so this is `E[xi^2] - 1`.
    pub fn variance(&self) -> f64 {
        match self.kind {
            OffspringKind::Explicit => {
                let m = self.mean();
                neumaier_sum(
                    self.probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| (i as f64 - m).powi(2) * p),
                )
            }
            OffspringKind::Geometric => 2.0,
            OffspringKind::Poisson => 1.0,
        }
    }

    /// gcd of the positive support indices.
    pub fn span(&self) -> usize {
        match self.kind {
            OffspringKind::Explicit => self
                .probs
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, &p)| p > 0.0)
                .fold(0, |g, (i, _)| gcd(g, i)),
            _ => 1,
        }
    }

    fn check_unit(s: f64) -> Result<(), OffspringError> {
        if (0.0..=1.0).contains(&s) {
            Ok(())
        } else {
            Err(OffspringError::Domain(s))
        }
    }

    /// Generating function `g(s) = E[s^xi]` by summing the series. For
    /// parametric laws the sum stops once the remaining mass falls below the
    /// tail tolerance.
    pub fn gf(&self, s: f64) -> Result<f64, OffspringError> {
        Self::check_unit(s)?;
        let mut acc = Neumaier::default();
        match self.kind {
            OffspringKind::Explicit => {
                let mut pow = 1.0;
                for &p in &self.probs {
                    acc.add(p * pow);
                    pow *= s;
                }
            }
            _ => {
                let mut pow = 1.0;
                let mut i = 0;
                loop {
                    acc.add(self.pmf(i) * pow);
                    pow *= s;
                    i += 1;
                    if self.tail_mass(i) < self.tail_tolerance {
                        break;
                    }
                }
            }
        }
        Ok(acc.value())
    }

    /// `g'(s) = sum i p_i s^(i-1)`; the tail after index `I` is bounded by
    /// `1 - sum_{i <= I} i p_i` thanks to criticality.
    pub fn gf_derivative(&self, s: f64) -> Result<f64, OffspringError> {
        Self::check_unit(s)?;
        let mut acc = Neumaier::default();
        match self.kind {
            OffspringKind::Explicit => {
                let mut pow = 1.0;
                for (i, &p) in self.probs.iter().enumerate().skip(1) {
                    acc.add(i as f64 * p * pow);
                    pow *= s;
                }
            }
            _ => {
                let mut biased_mass = Neumaier::default();
                let mut pow = 1.0;
                let mut i = 1;
                loop {
                    let w = i as f64 * self.pmf(i);
                    acc.add(w * pow);
                    biased_mass.add(w);
                    pow *= s;
                    i += 1;
                    if 1.0 - biased_mass.value() < self.tail_tolerance || w == 0.0 && i > 200 {
                        break;
                    }
                }
            }
        }
        Ok(acc.value())
    }

    /// Closed-form `g` for the parametric families.
    pub fn gf_closed_form(&self, s: f64) -> Option<f64> {
        match self.kind {
            OffspringKind::Explicit => None,
            OffspringKind::Geometric => Some(1.0 / (2.0 - s)),
            OffspringKind::Poisson => Some((s - 1.0).exp()),
        }
    }

    /// Closed-form `g'` for the parametric families.
    pub fn gf_derivative_closed_form(&self, s: f64) -> Option<f64> {
        match self.kind {
            OffspringKind::Explicit => None,
            OffspringKind::Geometric => Some(1.0 / (2.0 - s).powi(2)),
            OffspringKind::Poisson => Some((s - 1.0).exp()),
        }
    }

    /// Index range `0..len` carrying all but `mass_cutoff` of the mass.
    pub fn effective_support(&self, mass_cutoff: f64) -> usize {
        match self.kind {
            OffspringKind::Explicit => self.probs.len(),
            _ => {
                let mut i = 1;
                while self.tail_mass(i) >= mass_cutoff {
                    i += 1;
                }
                i
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.kind {
            OffspringKind::Explicit => invert_cdf(&self.cdf, rng.random::<f64>()),
            OffspringKind::Geometric => sample_fair_geometric(rng),
            OffspringKind::Poisson => sample_poisson_one(rng),
        }
    }

    pub fn size_biased(&self) -> SizeBiasedDistribution<'_> {
        SizeBiasedDistribution { base: self }
    }
}

/// The size-biased companion `Pr{zeta = i} = i p_i`: the child count of a
/// spine node in Kesten's tree.
#[derive(Debug, Clone, Copy)]
pub struct SizeBiasedDistribution<'a> {
    base: &'a OffspringDistribution,
}

impl SizeBiasedDistribution<'_> {
    pub fn pmf(&self, i: usize) -> f64 {
        i as f64 * self.base.pmf(i)
    }

    /// `E[zeta] = 1 + sigma^2`.
    pub fn mean(&self) -> f64 {
        1.0 + self.base.variance()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.base.kind {
            OffspringKind::Explicit => invert_cdf(&self.base.size_biased_cdf, rng.random::<f64>()),
            // i 2^-(i+1) is the law of 1 + G + G' for independent fair geometrics.
            OffspringKind::Geometric => 1 + sample_fair_geometric(rng) + sample_fair_geometric(rng),
            // i e^-1 / i! = e^-1 / (i-1)!, a shifted Poisson(1).
            OffspringKind::Poisson => 1 + sample_poisson_one(rng),
        }
    }
}

fn invert_cdf(cdf: &[f64], u: f64) -> usize {
    let idx = cdf.partition_point(|&c| c <= u);
    if idx < cdf.len() {
        return idx;
    }
    // u landed above the rounded total; fall back to the last atom.
    let mut i = cdf.len() - 1;
    while i > 0 && cdf[i] == cdf[i - 1] {
        i -= 1;
    }
    i
}

/// Number of failures before the first success of a fair coin, read off the
/// trailing zeros of random words.
fn sample_fair_geometric<R: Rng + ?Sized>(rng: &mut R) -> usize {
    let mut count = 0;
    loop {
        let bits = rng.next_u64();
        if bits != 0 {
            return count + bits.trailing_zeros() as usize;
        }
        count += 64;
    }
}

fn sample_poisson_one<R: Rng + ?Sized>(rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut p = (-1.0f64).exp();
    let mut cdf = p;
    let mut i = 0;
    while u >= cdf {
        i += 1;
        p /= i as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    i
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn running_sum<I: Iterator<Item = f64>>(it: I) -> Vec<f64> {
    let mut acc = Neumaier::default();
    it.map(|x| {
        acc.add(x);
        acc.value()
    })
    .collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = Neumaier::default();
    for x in it {
        acc.add(x);
    }
    acc.value()
}
