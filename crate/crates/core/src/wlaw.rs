//! The law of `W`, the root value of an unconditional tree.
//!
//! `W` solves `W = f_xi(W_1, ..., W_xi, U)` in law. Starting from the leaf
//! law `q`, the m-th iterate of the map
//! `Phi(mu) = sum_l p_l law(f_l(mu^l, U))` is the exact root law of the tree
//! cut at depth m with leaf-law values at the cut, so the iterates converge
//! to the law of `W` at rate `Pr{height(T) >= m}`. This selects the
//! tree-generated solution even when the identity has several.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::offspring::{Neumaier, OffspringDistribution};
use crate::recfun::{EvalError, RecursiveSpec, SpecError, State};
use crate::stats::{tv_distance, EmpiricalDistribution};
use crate::trees::TreeError;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_DEPTH: usize = 10_000;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("negative or non-finite probability {value} at state {state}")]
    Invalid { state: usize, value: f64 },
    #[error("probabilities sum to {0}")]
    NotNormalized(f64),
    #[error("empty distribution")]
    Empty,
}

/// A probability vector over the states `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (state, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DistributionError::Invalid { state, value });
            }
        }
        let total: f64 = crate::offspring::neumaier_sum(probs.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistributionError::NotNormalized(total));
        }
        Ok(Self { probs })
    }

    /// Scales a non-negative vector to unit mass.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self, DistributionError> {
        let total: f64 = crate::offspring::neumaier_sum(probs.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(DistributionError::NotNormalized(total));
        }
        for p in &mut probs {
            *p = (*p).max(0.0) / total;
        }
        Self::new(probs)
    }

    pub fn point_mass(k: usize, state: State) -> Self {
        let mut probs = vec![0.0; k];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn bernoulli(p: f64) -> Result<Self, DistributionError> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn from_empirical(e: &EmpiricalDistribution) -> Result<Self, DistributionError> {
        Self::new(e.probs())
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, s: State) -> f64 {
        self.probs[s]
    }

    /// Total variation distance; panics on mismatched dimensions.
    pub fn tv(&self, other: &[f64]) -> f64 {
        tv_distance(&self.probs, other).expect("same state space")
    }

    pub fn sampler(&self) -> StateSampler {
        let mut acc = Neumaier::default();
        let cdf = self
            .probs
            .iter()
            .map(|&p| {
                acc.add(p);
                acc.value()
            })
            .collect();
        StateSampler { cdf }
    }

    /// CSV with header `state,prob`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,prob\n");
        for (i, p) in self.probs.iter().enumerate() {
            writeln!(out, "{i},{p}").unwrap();
        }
        out
    }
}

/// Inversion sampler over a [`StateDistribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateSampler {
    cdf: Vec<f64>,
}

impl StateSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn k(&self) -> usize {
        self.cdf.len()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WLawError {
    #[error("recursive function has no exact kernel")]
    NoKernel,
    #[error("no convergence after {} iterations (last step TV {:e})", .0.depth, .0.last_step)]
    NonConvergence(Box<WLawSolution>),
    #[error(transparent)]
    Spec(SpecError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("all {0} Monte Carlo trees hit the node cap")]
    AllCapped(u64),
}

impl From<SpecError> for WLawError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::NoKernel => WLawError::NoKernel,
            other => WLawError::Spec(other),
        }
    }
}

impl From<EvalError> for WLawError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Tree(t) => t.into(),
            EvalError::Spec(s) => s.into(),
        }
    }
}

/// Result of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WLawSolution {
    pub law: StateDistribution,
    /// Number of applications of the map.
    pub depth: usize,
    /// TV distance between the last two iterates.
    pub last_step: f64,
    /// `Pr{height(T) >= depth}`, which bounds the TV distance between the
    /// returned iterate and the true law of `W`.
    pub truncation_bound: f64,
}

/// One application of the map to `mu`. Offspring counts whose remaining
/// mass drops below `mass_cutoff` are skipped and the result renormalized.
pub fn apply_distributional_map(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    mu: &StateDistribution,
    mass_cutoff: f64,
) -> Result<StateDistribution, WLawError> {
    if !spec.has_kernel() {
        return Err(WLawError::NoKernel);
    }
    let k = spec.k();
    let support = d.effective_support(mass_cutoff);
    let mut out = vec![Neumaier::default(); k];
    let mut marginals: Vec<&[f64]> = Vec::new();
    for l in 0..support {
        let p = d.pmf(l);
        if p == 0.0 {
            continue;
        }
        marginals.clear();
        marginals.resize(l, mu.probs());
        let law = spec.rule().product_law(&marginals)?;
        for (o, x) in out.iter_mut().zip(law) {
            o.add(p * x);
        }
    }
    let probs = out.iter().map(Neumaier::value).collect();
    StateDistribution::normalized(probs).map_err(|e| WLawError::Spec(SpecError::Invalid(e.to_string())))
}

/// Successive iterates `q, Phi(q), Phi(Phi(q)), ...`.
#[derive(Debug)]
pub struct WLawIterates<'a> {
    spec: &'a RecursiveSpec,
    d: &'a OffspringDistribution,
    current: Option<StateDistribution>,
    mass_cutoff: f64,
}

impl<'a> WLawIterates<'a> {
    pub fn new(spec: &'a RecursiveSpec, d: &'a OffspringDistribution, tol: f64) -> Self {
        Self { spec, d, current: Some(spec.leaf_law().clone()), mass_cutoff: tol / 10.0 }
    }
}

impl Iterator for WLawIterates<'_> {
    type Item = Result<StateDistribution, WLawError>;

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.current.take()?;
        match apply_distributional_map(self.spec, self.d, &cur, self.mass_cutoff) {
            Ok(next) => self.current = Some(next),
            Err(e) => return Some(Err(e)),
        }
        Some(Ok(cur))
    }
}

/// Iterates the map from the leaf law until consecutive iterates are within
/// `tol` in total variation, or `max_depth` applications.
pub fn w_law_iterate(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    tol: f64,
    max_depth: usize,
) -> Result<WLawSolution, WLawError> {
    if !spec.has_kernel() {
        return Err(WLawError::NoKernel);
    }
    let mass_cutoff = tol / 10.0;
    let mut mu = spec.leaf_law().clone();
    let mut last_step = f64::INFINITY;
    // complement of the depth-m extinction probability, tracked alongside
    let mut extinct_by_depth = 0.0;
    let mut depth = 0;
    while depth < max_depth {
        let next = apply_distributional_map(spec, d, &mu, mass_cutoff)?;
        last_step = next.tv(mu.probs());
        mu = next;
        depth += 1;
        extinct_by_depth = d.gf(extinct_by_depth).expect("in [0,1]");
        if last_step < tol {
            break;
        }
    }
    let solution = WLawSolution {
        law: mu,
        depth,
        last_step,
        truncation_bound: 1.0 - extinct_by_depth,
    };
    if last_step < tol {
        Ok(solution)
    } else {
        Err(WLawError::NonConvergence(Box::new(solution)))
    }
}

/// [`w_law_iterate`] at the default tolerance and depth, except that an
/// iteration stopped by the depth limit returns its last iterate. That
/// iterate is still within `truncation_bound` of the law of `W` in total
/// variation; laws of slowly mixing functions (sizes modulo k) converge
/// only like `1/depth`.
pub fn w_law_last_iterate(spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<WLawSolution, WLawError> {
    match w_law_iterate(spec, d, DEFAULT_TOL, DEFAULT_MAX_DEPTH) {
        Err(WLawError::NonConvergence(sol)) => Ok(*sol),
        other => other,
    }
}

/// Monte Carlo estimate of the law of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloLaw {
    pub empirical: EmpiricalDistribution,
    /// Trees abandoned at the node cap. These are excluded from
    /// `empirical`, which is therefore the law of `W` given `|T| < cap`;
    /// `discarded / (accepted + discarded)` bounds the TV bias.
    pub discarded: u64,
}

impl MonteCarloLaw {
    pub fn discard_fraction(&self) -> f64 {
        self.discarded as f64 / (self.empirical.total() + self.discarded) as f64
    }
}

/// Empirical root law of `samples` independent unconditional trees. Trees
/// that hit `node_cap` are counted, not retried.
pub fn w_law_monte_carlo<R: Rng + ?Sized>(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    samples: u64,
    rng: &mut R,
    node_cap: usize,
) -> Result<MonteCarloLaw, WLawError> {
    let mut empirical = EmpiricalDistribution::new(spec.k());
    let mut discarded = 0;
    for _ in 0..samples {
        match spec.sample_root_value(d, rng, node_cap) {
            Ok(v) => empirical.record(v),
            Err(EvalError::Tree(TreeError::CapExceeded { .. })) => discarded += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if empirical.total() == 0 && discarded > 0 {
        return Err(WLawError::AllCapped(discarded));
    }
    Ok(MonteCarloLaw { empirical, discarded })
}
