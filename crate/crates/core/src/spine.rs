//! The spine's Markov chain of Kesten's tree and perfect sampling of its
//! stationary law.
//!
//! Level `t` of the spine carries a bundle of randomness: the child count
//! `zeta` (size-biased), the index of the child that continues the spine,
//! the node's own uniform, and the root values of the other children's
//! unconditional subtrees. Given the bundle, the node's value is a map of the
//! value of its spine child, so each level defines a [`StateMap`] on `S`.
//! Composing these maps down from the root until the composition is constant
//! is coupling from the past along the spine: the constant is an exact draw
//! of the root value of Kesten's tree.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::offspring::{Neumaier, OffspringDistribution};
use crate::recfun::{EvalError, RecursiveSpec, SpecError, State};
use crate::stats::bernoulli_stderr;
use crate::trees::TreeError;
use crate::wlaw::{w_law_last_iterate, StateDistribution, StateSampler, WLawError};

pub const DEFAULT_MAX_LEVELS: usize = 100_000;

/// Size-biased mass ignored when summing over `zeta` for parametric laws.
pub const ZETA_MASS_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpineError {
    #[error("no coalescence within {max_levels} levels (composed map still has {image_size} values)")]
    NonCoalescent { max_levels: usize, image_size: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    WLaw(#[from] WLawError),
    #[error("stationary distribution is not unique (rank deficiency {0})")]
    NotUnique(usize),
    #[error("not a stochastic matrix: {0}")]
    NotStochastic(String),
    #[error("stationary solve residual {0:e} too large")]
    Residual(f64),
}

impl From<EvalError> for SpineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Tree(t) => t.into(),
            EvalError::Spec(s) => s.into(),
        }
    }
}

/// Where the root values of the unmarked subtrees come from.
#[derive(Debug, Clone)]
pub enum WSource {
    /// Grow a fresh unconditional tree and evaluate it; trees reaching the
    /// cap abort the step with [`TreeError::CapExceeded`].
    Trees { node_cap: usize },
    /// Draw directly from a known law of `W`.
    Law(StateSampler),
}

impl WSource {
    pub fn from_law(law: &StateDistribution) -> Self {
        WSource::Law(law.sampler())
    }

    /// Law source from the fixed-point iteration (see [`w_law_last_iterate`]).
    pub fn exact(spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<Self, WLawError> {
        Ok(Self::from_law(&w_law_last_iterate(spec, d)?.law))
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        spec: &RecursiveSpec,
        d: &OffspringDistribution,
        rng: &mut R,
    ) -> Result<State, SpineError> {
        match self {
            WSource::Trees { node_cap } => Ok(spec.sample_root_value(d, rng, *node_cap)?),
            WSource::Law(s) => Ok(s.sample(rng)),
        }
    }
}

/// Randomness of one spine level. `marked_index` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineStepElements {
    pub zeta: usize,
    pub marked_index: usize,
    pub u: f64,
    /// Root values of the `zeta - 1` other children, left to right.
    pub unmarked_values: Vec<State>,
}

pub fn sample_spine_step<R: Rng + ?Sized>(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    rng: &mut R,
) -> Result<SpineStepElements, SpineError> {
    let zeta = d.size_biased().sample(rng);
    let marked_index = rng.random_range(0..zeta);
    let u: f64 = rng.random();
    let unmarked_values = (1..zeta)
        .map(|_| source.draw(spec, d, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpineStepElements { zeta, marked_index, u, unmarked_values })
}

/// A function `S -> S` stored as its table of images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateMap {
    table: Vec<State>,
}

impl StateMap {
    pub fn identity(k: usize) -> Self {
        Self { table: (0..k).collect() }
    }

    pub fn from_table(table: Vec<State>) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &[State] {
        &self.table
    }

    pub fn image(&self, x: State) -> State {
        self.table[x]
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &StateMap) -> StateMap {
        StateMap { table: inner.table.iter().map(|&x| self.table[x]).collect() }
    }

    pub fn constant_value(&self) -> Option<State> {
        let first = *self.table.first()?;
        self.table.iter().all(|&x| x == first).then_some(first)
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.table.len()];
        for &x in &self.table {
            if seen[x] {
                return false;
            }
            seen[x] = true;
        }
        true
    }

    pub fn image_size(&self) -> usize {
        let mut seen = vec![false; self.table.len()];
        self.table.iter().filter(|&&x| !std::mem::replace(&mut seen[x], true)).count()
    }
}

/// The value of the spine node as a function of its spine child's value.
pub fn step_map(spec: &RecursiveSpec, e: &SpineStepElements) -> Result<StateMap, SpecError> {
    let mut children = Vec::with_capacity(e.zeta);
    children.extend_from_slice(&e.unmarked_values[..e.marked_index]);
    children.push(0);
    children.extend_from_slice(&e.unmarked_values[e.marked_index..]);
    let table = (0..spec.k())
        .map(|x| {
            children[e.marked_index] = x;
            spec.apply(&children, e.u)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StateMap { table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CftpOutcome {
    pub value: State,
    /// Spine levels generated before the composed map became constant.
    pub levels_used: usize,
}

/// Perfect sample of the stationary law of the spine chain.
///
/// Walks down the spine generating each level's randomness exactly once
/// and composes `G_m = G_{m-1} ∘ step_map(level m)` starting from the
/// identity; returns the constant of the first constant `G_m`.
pub fn cftp_sample<R: Rng + ?Sized>(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    rng: &mut R,
    max_levels: usize,
) -> Result<CftpOutcome, SpineError> {
    let mut composed = StateMap::identity(spec.k());
    if let Some(value) = composed.constant_value() {
        return Ok(CftpOutcome { value, levels_used: 0 });
    }
    for level in 1..=max_levels {
        let e = sample_spine_step(spec, d, source, rng)?;
        composed = composed.compose(&step_map(spec, &e)?);
        if let Some(value) = composed.constant_value() {
            return Ok(CftpOutcome { value, levels_used: level });
        }
    }
    Err(SpineError::NonCoalescent { max_levels, image_size: composed.image_size() })
}

/// Empirical `Pr{no coalescence after t levels}` for `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub reps: u64,
    /// `alive[t]` = replicates whose composed map is non-constant after `t` levels.
    pub alive: Vec<u64>,
}

impl SurvivalCurve {
    pub fn t_max(&self) -> usize {
        self.alive.len() - 1
    }

    pub fn survival(&self, t: usize) -> f64 {
        self.alive[t] as f64 / self.reps as f64
    }

    pub fn stderr(&self, t: usize) -> f64 {
        bernoulli_stderr(self.survival(t), self.reps)
    }

    /// CSV with header `t,survival,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,survival,stderr\n");
        for t in 0..self.alive.len() {
            writeln!(out, "{},{},{}", t, self.survival(t), self.stderr(t)).unwrap();
        }
        out
    }
}

/// Runs `reps` independent composed-map chains for up to `t_max` levels
/// each and records how many are still non-constant after every level.
pub fn coalescence_probe<R: Rng + ?Sized>(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    t_max: usize,
    reps: u64,
    rng: &mut R,
) -> Result<SurvivalCurve, SpineError> {
    let mut alive = vec![0u64; t_max + 1];
    for _ in 0..reps {
        let mut composed = StateMap::identity(spec.k());
        let mut t = 0;
        while composed.constant_value().is_none() {
            alive[t] += 1;
            if t == t_max {
                break;
            }
            let e = sample_spine_step(spec, d, source, rng)?;
            composed = composed.compose(&step_map(spec, &e)?);
            t += 1;
        }
    }
    Ok(SurvivalCurve { reps, alive })
}

/// Dense row-stochastic matrix on `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    k: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SpineError> {
        let k = rows.len();
        let mut data = Vec::with_capacity(k * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(SpineError::NotStochastic(format!("row {i} has {} entries", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(SpineError::NotStochastic(format!("row {i} has invalid entries")));
            }
            let s: f64 = crate::offspring::neumaier_sum(row.iter().copied());
            if (s - 1.0).abs() > 1e-9 {
                return Err(SpineError::NotStochastic(format!("row {i} sums to {s}")));
            }
            data.extend(row);
        }
        Ok(Self { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.k).map(|j| (0..self.k).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `pi P` for a row vector `pi`.
    pub fn left_multiply(&self, pi: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| crate::offspring::neumaier_sum((0..self.k).map(|i| pi[i] * self.get(i, j))))
            .collect()
    }

    /// CSV with header `from,to,prob`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from,to,prob\n");
        for i in 0..self.k {
            for j in 0..self.k {
                writeln!(out, "{},{},{}", i, j, self.get(i, j)).unwrap();
            }
        }
        out
    }
}

/// Exact transition matrix with the law of `W` from the fixed-point
/// iteration.
pub fn transition_matrix_exact(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
) -> Result<StochasticMatrix, SpineError> {
    let sol = w_law_last_iterate(spec, d)?;
    transition_matrix_exact_with_law(spec, d, &sol.law)
}

/// `P(x, .) = sum_zeta Pr{zeta} (1/zeta) sum_M law(f_zeta(children))`,
/// where child `M` is fixed at `x` and the others are i.i.d. `w_law`.
pub fn transition_matrix_exact_with_law(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    w_law: &StateDistribution,
) -> Result<StochasticMatrix, SpineError> {
    if !spec.has_kernel() {
        return Err(WLawError::NoKernel.into());
    }
    let k = spec.k();
    let biased = d.size_biased();
    let points: Vec<Vec<f64>> = (0..k).map(|x| StateDistribution::point_mass(k, x).probs().to_vec()).collect();
    let mut rows = vec![vec![Neumaier::default(); k]; k];
    let mut covered = Neumaier::default();
    let mut zeta = 1usize;
    let limit = d.max_support().unwrap_or(usize::MAX);
    while zeta <= limit && 1.0 - covered.value() >= ZETA_MASS_CUTOFF {
        let pz = biased.pmf(zeta);
        covered.add(pz);
        if pz > 0.0 {
            for (x, row) in rows.iter_mut().enumerate() {
                for m in 0..zeta {
                    let mut marginals: Vec<&[f64]> = vec![w_law.probs(); zeta];
                    marginals[m] = &points[x];
                    let law = spec.rule().product_law(&marginals)?;
                    let w = pz / zeta as f64;
                    for (acc, p) in row.iter_mut().zip(law) {
                        acc.add(w * p);
                    }
                }
            }
        }
        zeta += 1;
    }
    let rows = rows
        .into_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(Neumaier::value).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|p| p / s).collect()
        })
        .collect();
    StochasticMatrix::from_rows(rows)
}

/// Monte Carlo transition matrix. Each sampled level is applied to every
/// start state, so the rows share their randomness like the two coordinates
/// of the coupled chain.
pub fn transition_matrix_mc<R: Rng + ?Sized>(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    samples: u64,
    rng: &mut R,
) -> Result<StochasticMatrix, SpineError> {
    let k = spec.k();
    let mut counts = vec![vec![0u64; k]; k];
    for _ in 0..samples {
        let e = sample_spine_step(spec, d, source, rng)?;
        let map = step_map(spec, &e)?;
        for (x, row) in counts.iter_mut().enumerate() {
            row[map.image(x)] += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|r| r.into_iter().map(|c| c as f64 / samples as f64).collect())
        .collect();
    StochasticMatrix::from_rows(rows)
}

/// Solves `pi P = pi`, `sum pi = 1`.
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<StateDistribution, SpineError> {
    let k = p.k();
    if k == 1 {
        return Ok(StateDistribution::point_mass(1, 0));
    }
    let a = DMatrix::from_fn(k, k, |i, j| p.get(j, i) - if i == j { 1.0 } else { 0.0 });
    let sv = a.clone().svd(false, false).singular_values;
    let scale = sv.max().max(1.0);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * scale).count();
    if rank < k - 1 {
        return Err(SpineError::NotUnique(k - 1 - rank));
    }
    let mut system = a;
    for j in 0..k {
        system[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let pi = system
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(SpineError::NotUnique(1))?;
    let pi: Vec<f64> = pi.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect();
    let law = StateDistribution::normalized(pi).map_err(|e| SpineError::NotStochastic(e.to_string()))?;
    let residual: f64 = p
        .left_multiply(law.probs())
        .iter()
        .zip(law.probs())
        .map(|(a, b)| (a - b).abs())
        .sum();
    if residual >= 1e-10 {
        return Err(SpineError::Residual(residual));
    }
    Ok(law)
}
