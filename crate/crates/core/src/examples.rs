//! The catalog of recursive functions, each paired with its default
//! offspring law, plus closed-form oracles for the limit laws that have
//! one.
//!
//! Counting-type functions take values in a finite set through a
//! [`Reduction`]: either modulo `k` (states `0..k`) or saturation at `k`
//! (states `0..=k`, the top state meaning "at least k").

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::offspring::{OffspringDistribution, OffspringError, OffspringSpec};
use crate::recfun::{pick_index, NodeRule, RecursiveSpec, SpecError, State};
use crate::stats::{binomial_pmf, binomial_sf};
use crate::wlaw::StateDistribution;

pub const BISECTION_TOL: f64 = 1e-12;
pub const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExampleError {
    #[error("invalid example configuration: {0}")]
    Config(String),
    #[error("unknown example {0:?}")]
    UnknownExample(String),
    #[error("root finding did not converge: {0}")]
    NonConvergence(String),
    #[error("argument outside its domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Offspring(#[from] OffspringError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn config<T>(msg: impl Into<String>) -> Result<T, ExampleError> {
    Err(ExampleError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleName {
    Counting,
    LeafCounter,
    PathLength,
    Transversal,
    RandomChild,
    Minimax,
    BooleanFunctions,
    BinarySubtree,
    Majority,
    Median,
}

impl ExampleName {
    pub const ALL: [ExampleName; 10] = [
        ExampleName::Counting,
        ExampleName::LeafCounter,
        ExampleName::PathLength,
        ExampleName::Transversal,
        ExampleName::RandomChild,
        ExampleName::Minimax,
        ExampleName::BooleanFunctions,
        ExampleName::BinarySubtree,
        ExampleName::Majority,
        ExampleName::Median,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleName::Counting => "counting",
            ExampleName::LeafCounter => "leaf_counter",
            ExampleName::PathLength => "path_length",
            ExampleName::Transversal => "transversal",
            ExampleName::RandomChild => "random_child",
            ExampleName::Minimax => "minimax",
            ExampleName::BooleanFunctions => "boolean_functions",
            ExampleName::BinarySubtree => "binary_subtree",
            ExampleName::Majority => "majority",
            ExampleName::Median => "median",
        }
    }

    /// Parameter summary shown by `list-examples`.
    pub fn parameters(self) -> &'static str {
        match self {
            ExampleName::Counting | ExampleName::LeafCounter | ExampleName::PathLength => {
                "k: modulus or cap (default 5, path_length 8); reduction: \"mod\" | \"min\"; offspring (default catalan)"
            }
            ExampleName::BinarySubtree => {
                "k: modulus or cap (default 16); reduction: \"mod\" | \"min\"; offspring (default p0=0.6,p2=0.2,p3=0.2)"
            }
            ExampleName::Transversal => "p: marking probability (default 0.5); offspring (default catalan)",
            ExampleName::RandomChild => "k: number of leaf values, uniform (default 3); offspring (default catalan)",
            ExampleName::Minimax => {
                "p: max-node probability (default 0.5); q: leaf Bernoulli parameter (default 0.5); offspring (default catalan)"
            }
            ExampleName::BooleanFunctions => {
                "k: number of variables 1..=3 (default 1); p: AND-node probability (default 0.5); offspring fixed to catalan"
            }
            ExampleName::Majority => {
                "k: nodes have 0 or 2k+1 children (default 1); p: leaf Bernoulli parameter (default 0.5); offspring forced"
            }
            ExampleName::Median => "k: number of states (default 3); offspring with 0-or-odd support (default p0=2/3,p3=1/3)",
        }
    }

    pub fn oracles(self) -> &'static str {
        match self {
            ExampleName::Counting => "root value of T_n is n mod k (non-coalescent)",
            ExampleName::LeafCounter => "catalan: root value is (n+1)/2 mod k (non-coalescent)",
            ExampleName::PathLength => "L_n - 1 has limit pmf (i+1) p0^2 (1-p0)^i; survival <= (1-p0)^t",
            ExampleName::Transversal => "rho* = p / (1 - (1-p) g'(r)); survival <= (1-p)^t",
            ExampleName::RandomChild => "W_inf uniform on S; survival <= (1-p0)^t",
            ExampleName::Minimax => "p*, conditional limit; survival bound",
            ExampleName::BooleanFunctions => "every truth table has positive limit mass",
            ExampleName::BinarySubtree => "size odd when p1 = 0",
            ExampleName::Majority => "p*, p(0,1), p(1,0), conditional limit",
            ExampleName::Median => "coalescence probe only",
        }
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExampleName {
    type Err = ExampleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ExampleError::UnknownExample(s.to_string()))
    }
}

/// Optional parameters shared by all examples; each example reads the
/// fields it understands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring: Option<OffspringSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleConfig {
    pub name: ExampleName,
    #[serde(default)]
    pub params: ExampleParams,
}

impl ExampleConfig {
    pub fn new(name: ExampleName) -> Self {
        Self { name, params: ExampleParams::default() }
    }

    pub fn k(mut self, k: usize) -> Self {
        self.params.k = Some(k);
        self
    }

    pub fn p(mut self, p: f64) -> Self {
        self.params.p = Some(p);
        self
    }

    pub fn q(mut self, q: f64) -> Self {
        self.params.q = Some(q);
        self
    }

    pub fn reduction(mut self, r: &str) -> Self {
        self.params.reduction = Some(r.to_string());
        self
    }

    pub fn offspring(mut self, spec: OffspringSpec) -> Self {
        self.params.offspring = Some(spec);
        self
    }
}

/// How an unbounded integer value is folded into a finite state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// `v mod k`, states `0..k`.
    Modulo(usize),
    /// `min(v, k)`, states `0..=k`.
    Saturate(usize),
}

impl Reduction {
    pub fn num_states(self) -> usize {
        match self {
            Reduction::Modulo(k) => k,
            Reduction::Saturate(k) => k + 1,
        }
    }

    pub fn reduce(self, v: usize) -> State {
        match self {
            Reduction::Modulo(k) => v % k,
            Reduction::Saturate(k) => v.min(k),
        }
    }

    /// Law of `reduce(a + b)` for independent reduced values.
    fn convolve(self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states()];
        for (x, &pa) in a.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (y, &pb) in b.iter().enumerate() {
                out[self.reduce(x + y)] += pa * pb;
            }
        }
        out
    }

    /// Law of `reduce(x + c)`.
    fn shift(self, a: &[f64], c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states()];
        for (x, &p) in a.iter().enumerate() {
            out[self.reduce(x + c)] += p;
        }
        out
    }

    fn point(self, v: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states()];
        out[self.reduce(v)] = 1.0;
        out
    }

    fn parse(params: &ExampleParams, default_k: usize) -> Result<Self, ExampleError> {
        let k = params.k.unwrap_or(default_k);
        match params.reduction.as_deref().unwrap_or("mod") {
            "mod" if k >= 1 => Ok(Reduction::Modulo(k)),
            "min" => Ok(Reduction::Saturate(k)),
            "mod" => config("modulus k must be at least 1"),
            other => config(format!("unknown reduction {other:?} (expected \"mod\" or \"min\")")),
        }
    }
}

fn point_law(k: usize, s: State) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[s] = 1.0;
    v
}

fn average(laws: impl Iterator<Item = Vec<f64>>, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    let mut n = 0usize;
    for law in laws {
        for (o, p) in out.iter_mut().zip(law) {
            *o += p;
        }
        n += 1;
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// `Pr{X >= m}` for a sum of independent Bernoullis, by dynamic programming.
fn poisson_binomial_at_least(probs: impl Iterator<Item = f64>, m: usize) -> f64 {
    let mut dist = vec![1.0];
    for p in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (j, &d) in dist.iter().enumerate() {
            next[j] += d * (1.0 - p);
            next[j + 1] += d * p;
        }
        dist = next;
    }
    dist.iter().skip(m).sum()
}

/// Node count: `f_l = 1 + sum w_i`.
#[derive(Debug, Clone)]
pub struct Counting {
    pub reduction: Reduction,
}

impl NodeRule for Counting {
    fn num_states(&self) -> usize {
        self.reduction.num_states()
    }
    fn apply(&self, children: &[State], _u: f64) -> State {
        self.reduction.reduce(1 + children.iter().sum::<usize>())
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        Some(point_law(self.num_states(), self.apply(children, 0.0)))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        let sum = marginals
            .iter()
            .fold(self.reduction.point(0), |acc, m| self.reduction.convolve(&acc, m));
        Ok(self.reduction.shift(&sum, 1))
    }
}

/// Leaf count: leaves are 1, internal nodes sum their children.
#[derive(Debug, Clone)]
pub struct LeafCounter {
    pub reduction: Reduction,
}

impl NodeRule for LeafCounter {
    fn num_states(&self) -> usize {
        self.reduction.num_states()
    }
    fn apply(&self, children: &[State], _u: f64) -> State {
        if children.is_empty() {
            self.reduction.reduce(1)
        } else {
            self.reduction.reduce(children.iter().sum())
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        Some(point_law(self.num_states(), self.apply(children, 0.0)))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if marginals.is_empty() {
            return Ok(self.reduction.point(1));
        }
        Ok(marginals
            .iter()
            .fold(self.reduction.point(0), |acc, m| self.reduction.convolve(&acc, m)))
    }
}

/// Edge length of a random root-to-leaf path: `f_l = 1 + w_{1 + floor(u l)}`.
#[derive(Debug, Clone)]
pub struct PathLength {
    pub reduction: Reduction,
}

impl NodeRule for PathLength {
    fn num_states(&self) -> usize {
        self.reduction.num_states()
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            0
        } else {
            self.reduction.reduce(1 + children[pick_index(u, children.len())])
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        let k = self.num_states();
        if children.is_empty() {
            return Some(point_law(k, 0));
        }
        Some(average(children.iter().map(|&w| self.reduction.point(1 + w)), k))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        let k = self.num_states();
        if marginals.is_empty() {
            return Ok(point_law(k, 0));
        }
        Ok(average(marginals.iter().map(|m| self.reduction.shift(m, 1)), k))
    }
}

/// Marked transversal: 1 if the node is marked (`u < p`), else the product
/// of the children's values, 0 at unmarked leaves.
#[derive(Debug, Clone)]
pub struct Transversal {
    pub p: f64,
}

impl NodeRule for Transversal {
    fn num_states(&self) -> usize {
        2
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if u < self.p {
            1
        } else if children.is_empty() {
            0
        } else {
            children.iter().all(|&w| w == 1) as State
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        let unmarked = !children.is_empty() && children.iter().all(|&w| w == 1);
        let one = self.p + (1.0 - self.p) * unmarked as u8 as f64;
        Some(vec![1.0 - one, one])
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        let all_one = if marginals.is_empty() {
            0.0
        } else {
            marginals.iter().map(|m| m[1]).product()
        };
        let one = self.p + (1.0 - self.p) * all_one;
        Ok(vec![1.0 - one, one])
    }
}

/// The value of a uniformly chosen child; leaves are uniform on `0..k`.
#[derive(Debug, Clone)]
pub struct RandomChild {
    pub k: usize,
}

impl NodeRule for RandomChild {
    fn num_states(&self) -> usize {
        self.k
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            pick_index(u, self.k)
        } else {
            children[pick_index(u, children.len())]
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if children.is_empty() {
            return Some(vec![1.0 / self.k as f64; self.k]);
        }
        Some(average(children.iter().map(|&w| point_law(self.k, w)), self.k))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if marginals.is_empty() {
            return Ok(vec![1.0 / self.k as f64; self.k]);
        }
        Ok(average(marginals.iter().map(|m| m.to_vec()), self.k))
    }
}

/// Max-node with probability `p_max`, otherwise min-node; leaves are
/// Bernoulli(`q_leaf`).
#[derive(Debug, Clone)]
pub struct Minimax {
    pub p_max: f64,
    pub q_leaf: f64,
}

impl NodeRule for Minimax {
    fn num_states(&self) -> usize {
        2
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            (u < self.q_leaf) as State
        } else if u < self.p_max {
            *children.iter().max().expect("non-empty")
        } else {
            *children.iter().min().expect("non-empty")
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if children.is_empty() {
            return Some(vec![1.0 - self.q_leaf, self.q_leaf]);
        }
        let max = *children.iter().max().expect("non-empty") as f64;
        let min = *children.iter().min().expect("non-empty") as f64;
        let one = self.p_max * max + (1.0 - self.p_max) * min;
        Some(vec![1.0 - one, one])
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if marginals.is_empty() {
            return Ok(vec![1.0 - self.q_leaf, self.q_leaf]);
        }
        let all_zero: f64 = marginals.iter().map(|m| m[0]).product();
        let all_one: f64 = marginals.iter().map(|m| m[1]).product();
        let one = self.p_max * (1.0 - all_zero) + (1.0 - self.p_max) * all_one;
        Ok(vec![1.0 - one, one])
    }
}

/// AND/OR trees over literals; a state is the truth table of a Boolean
/// function of `vars` variables, bit `a` holding its value at assignment
/// `a`.
#[derive(Debug, Clone)]
pub struct BooleanFunctions {
    pub vars: usize,
    pub p_and: f64,
    with_kernel: bool,
}

impl BooleanFunctions {
    pub fn new(vars: usize, p_and: f64) -> Self {
        Self { vars, p_and, with_kernel: vars <= 2 }
    }

    fn full(&self) -> State {
        (1usize << (1usize << self.vars)) - 1
    }

    /// Truth table of `x_j`.
    pub fn variable(&self, j: usize) -> State {
        (0..1usize << self.vars)
            .filter(|a| a >> j & 1 == 1)
            .fold(0, |t, a| t | 1 << a)
    }

    /// Literal `i` in `0..2 vars`: `x_i` for `i < vars`, else the negation
    /// of `x_{i - vars}`.
    pub fn literal(&self, i: usize) -> State {
        if i < self.vars {
            self.variable(i)
        } else {
            self.full() & !self.variable(i - self.vars)
        }
    }

    fn fold_law(&self, marginals: &[&[f64]], and: bool) -> Vec<f64> {
        let k = self.num_states();
        let mut acc = point_law(k, if and { self.full() } else { 0 });
        for m in marginals {
            let mut next = vec![0.0; k];
            for (a, &pa) in acc.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (b, &pb) in m.iter().enumerate() {
                    if pb != 0.0 {
                        next[if and { a & b } else { a | b }] += pa * pb;
                    }
                }
            }
            acc = next;
        }
        acc
    }

    fn leaf_law(&self) -> Vec<f64> {
        let mut law = vec![0.0; self.num_states()];
        for i in 0..2 * self.vars {
            law[self.literal(i)] += 1.0 / (2 * self.vars) as f64;
        }
        law
    }
}

impl NodeRule for BooleanFunctions {
    fn num_states(&self) -> usize {
        1 << (1 << self.vars)
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            self.literal(pick_index(u, 2 * self.vars))
        } else if u < self.p_and {
            children.iter().fold(self.full(), |t, &c| t & c)
        } else {
            children.iter().fold(0, |t, &c| t | c)
        }
    }
    fn has_kernel(&self) -> bool {
        self.with_kernel
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if !self.with_kernel {
            return None;
        }
        if children.is_empty() {
            return Some(self.leaf_law());
        }
        let mut law = vec![0.0; self.num_states()];
        law[children.iter().fold(self.full(), |t, &c| t & c)] += self.p_and;
        law[children.iter().fold(0, |t, &c| t | c)] += 1.0 - self.p_and;
        Some(law)
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if !self.with_kernel {
            return Err(SpecError::NoKernel);
        }
        if marginals.is_empty() {
            return Ok(self.leaf_law());
        }
        let and = self.fold_law(marginals, true);
        let or = self.fold_law(marginals, false);
        Ok(and.iter().zip(&or).map(|(a, o)| self.p_and * a + (1.0 - self.p_and) * o).collect())
    }
}

/// Pair `(i, j)`, `i < j`, 0-based, selected by `u` from the lexicographic
/// partition of `[0, 1)` into `C(l, 2)` equal intervals.
pub fn binary_subtree_pair_selection(l: usize, u: f64) -> (usize, usize) {
    assert!(l >= 2, "pair selection needs at least two children");
    let mut idx = pick_index(u, l * (l - 1) / 2);
    for i in 0..l - 1 {
        let row = l - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("index within C(l, 2)")
}

/// Size of the random binary subtree: nodes with at most two children keep
/// them all, others keep a uniform pair.
#[derive(Debug, Clone)]
pub struct BinarySubtree {
    pub reduction: Reduction,
    with_kernel: bool,
}

impl BinarySubtree {
    pub fn new(reduction: Reduction, with_kernel: bool) -> Self {
        Self { reduction, with_kernel }
    }
}

impl NodeRule for BinarySubtree {
    fn num_states(&self) -> usize {
        self.reduction.num_states()
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        let kept = if children.len() <= 2 {
            children.iter().sum::<usize>()
        } else {
            let (i, j) = binary_subtree_pair_selection(children.len(), u);
            children[i] + children[j]
        };
        self.reduction.reduce(1 + kept)
    }
    fn has_kernel(&self) -> bool {
        self.with_kernel
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if !self.with_kernel {
            return None;
        }
        let k = self.num_states();
        let l = children.len();
        if l <= 2 {
            return Some(point_law(k, self.apply(children, 0.0)));
        }
        let pairs = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j)));
        Some(average(pairs.map(|(i, j)| self.reduction.point(1 + children[i] + children[j])), k))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if !self.with_kernel {
            return Err(SpecError::NoKernel);
        }
        let r = self.reduction;
        let l = marginals.len();
        if l <= 2 {
            let sum = marginals.iter().fold(r.point(0), |acc, m| r.convolve(&acc, m));
            return Ok(r.shift(&sum, 1));
        }
        let pairs = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j)));
        Ok(average(
            pairs.map(|(i, j)| r.shift(&r.convolve(marginals[i], marginals[j]), 1)),
            self.num_states(),
        ))
    }
}

/// Majority vote `1{2 sum w_i >= l}`; leaves are Bernoulli(`p`).
#[derive(Debug, Clone)]
pub struct Majority {
    pub p: f64,
}

impl NodeRule for Majority {
    fn num_states(&self) -> usize {
        2
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            (u < self.p) as State
        } else {
            (2 * children.iter().sum::<usize>() >= children.len()) as State
        }
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if children.is_empty() {
            return Some(vec![1.0 - self.p, self.p]);
        }
        Some(point_law(2, self.apply(children, 0.0)))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if marginals.is_empty() {
            return Ok(vec![1.0 - self.p, self.p]);
        }
        let l = marginals.len();
        let one = poisson_binomial_at_least(marginals.iter().map(|m| m[1]), l.div_ceil(2));
        Ok(vec![1.0 - one, one])
    }
}

/// Lower median of the children; leaves uniform on `0..k`.
#[derive(Debug, Clone)]
pub struct Median {
    pub k: usize,
}

impl NodeRule for Median {
    fn num_states(&self) -> usize {
        self.k
    }
    fn apply(&self, children: &[State], u: f64) -> State {
        if children.is_empty() {
            return pick_index(u, self.k);
        }
        let mut sorted = children.to_vec();
        sorted.sort_unstable();
        sorted[(sorted.len() - 1) / 2]
    }
    fn has_kernel(&self) -> bool {
        true
    }
    fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
        if children.is_empty() {
            return Some(vec![1.0 / self.k as f64; self.k]);
        }
        Some(point_law(self.k, self.apply(children, 0.0)))
    }
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        if marginals.is_empty() {
            return Ok(vec![1.0 / self.k as f64; self.k]);
        }
        // median <= s iff at least (l-1)/2 + 1 children are <= s
        let need = (marginals.len() - 1) / 2 + 1;
        let cdfs: Vec<Vec<f64>> = marginals
            .iter()
            .map(|m| {
                m.iter()
                    .scan(0.0, |acc, &p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.k];
        let mut prev = 0.0;
        for (s, o) in out.iter_mut().enumerate() {
            let at_most = poisson_binomial_at_least(cdfs.iter().map(|c| c[s].min(1.0)), need);
            *o = (at_most - prev).max(0.0);
            prev = at_most;
        }
        Ok(out)
    }
}

fn unit(name: &str, v: f64) -> Result<f64, ExampleError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        config(format!("{name} = {v} must lie in [0, 1]"))
    }
}

fn positive_k(k: usize) -> Result<usize, ExampleError> {
    if k >= 1 {
        Ok(k)
    } else {
        config("k must be at least 1")
    }
}

fn offspring_or(params: &ExampleParams, default: OffspringDistribution) -> Result<OffspringDistribution, ExampleError> {
    match &params.offspring {
        Some(spec) => Ok(OffspringDistribution::from_spec(spec)?),
        None => Ok(default),
    }
}

/// The forced law `p_0 = 2k/(2k+1)`, `p_{2k+1} = 1/(2k+1)`.
pub fn majority_offspring(k: usize) -> OffspringDistribution {
    let arity = 2 * k + 1;
    let mut p = vec![0.0; arity + 1];
    p[arity] = 1.0 / arity as f64;
    p[0] = 1.0 - p[arity];
    OffspringDistribution::explicit(p).expect("critical by construction")
}

fn same_law(a: &OffspringDistribution, b: &OffspringDistribution) -> bool {
    a.kind() == b.kind()
        && match (a.max_support(), b.max_support()) {
            (Some(x), Some(y)) => x == y && (0..=x).all(|i| (a.pmf(i) - b.pmf(i)).abs() < 1e-12),
            (None, None) => true,
            _ => false,
        }
}

/// Builds the recursive function and offspring law for `cfg`.
pub fn build_example(cfg: &ExampleConfig) -> Result<(RecursiveSpec, OffspringDistribution), ExampleError> {
    let params = &cfg.params;
    let catalan = OffspringDistribution::catalan;
    let (rule, d): (Arc<dyn NodeRule>, OffspringDistribution) = match cfg.name {
        ExampleName::Counting => (
            Arc::new(Counting { reduction: Reduction::parse(params, 5)? }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::LeafCounter => (
            Arc::new(LeafCounter { reduction: Reduction::parse(params, 5)? }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::PathLength => (
            Arc::new(PathLength { reduction: Reduction::parse(params, 8)? }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::Transversal => (
            Arc::new(Transversal { p: unit("p", params.p.unwrap_or(0.5))? }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::RandomChild => (
            Arc::new(RandomChild { k: positive_k(params.k.unwrap_or(3))? }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::Minimax => (
            Arc::new(Minimax {
                p_max: unit("p", params.p.unwrap_or(0.5))?,
                q_leaf: unit("q", params.q.unwrap_or(0.5))?,
            }),
            offspring_or(params, catalan())?,
        ),
        ExampleName::BooleanFunctions => {
            let vars = params.k.unwrap_or(1);
            if !(1..=3).contains(&vars) {
                return config(format!("boolean_functions needs 1 <= k <= 3 variables, got {vars}"));
            }
            let d = offspring_or(params, catalan())?;
            if !same_law(&d, &catalan()) {
                return config("boolean_functions requires binary offspring p0 = p2 = 1/2");
            }
            (Arc::new(BooleanFunctions::new(vars, unit("p", params.p.unwrap_or(0.5))?)), d)
        }
        ExampleName::BinarySubtree => {
            let default = OffspringDistribution::explicit(vec![0.6, 0.0, 0.2, 0.2])?;
            let d = offspring_or(params, default)?;
            let with_kernel = d.max_support().is_some_and(|m| m <= 6);
            (Arc::new(BinarySubtree::new(Reduction::parse(params, 16)?, with_kernel)), d)
        }
        ExampleName::Majority => {
            let k = positive_k(params.k.unwrap_or(1))?;
            let forced = majority_offspring(k);
            if let Some(spec) = &params.offspring {
                if !same_law(&OffspringDistribution::from_spec(spec)?, &forced) {
                    return config(format!(
                        "majority with k = {k} requires offspring p0 = {0}/{1}, p{1} = 1/{1}",
                        2 * k,
                        2 * k + 1
                    ));
                }
            }
            (Arc::new(Majority { p: unit("p", params.p.unwrap_or(0.5))? }), forced)
        }
        ExampleName::Median => {
            let default = OffspringDistribution::explicit(vec![2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0])?;
            let d = offspring_or(params, default)?;
            let odd_support = match d.max_support() {
                Some(m) => (1..=m).all(|i| d.pmf(i) == 0.0 || i % 2 == 1),
                None => false,
            };
            if !odd_support {
                return config("median requires offspring supported on 0 and odd integers");
            }
            (Arc::new(Median { k: positive_k(params.k.unwrap_or(3))? }), d)
        }
    };
    let leaf_law = match rule.kernel(&[]) {
        Some(q) => StateDistribution::new(q),
        None => match cfg.name {
            ExampleName::BooleanFunctions => {
                let b = BooleanFunctions::new(params.k.unwrap_or(1), 0.5);
                StateDistribution::new(b.leaf_law())
            }
            _ => unreachable!("only boolean_functions lacks a leaf kernel"),
        },
    }
    .map_err(|e| ExampleError::Config(e.to_string()))?;
    Ok((RecursiveSpec::new(rule, leaf_law)?, d))
}

/// Law of `W + W'` for independent geometric(`p0`) variables on
/// `{0, 1, ...}`. The edge length of a random path in `T_n` converges to
/// `1 + W + W'`, since the step off the spine is itself an edge.
pub fn path_length_limit_pmf(p0: f64, i: usize) -> Result<f64, ExampleError> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(ExampleError::Domain(format!("p0 = {p0} must lie in (0, 1)")));
    }
    Ok((i as f64 + 1.0) * p0 * p0 * (1.0 - p0).powi(i as i32))
}

/// Bisection for a root of `f` on `[lo, hi]` with `f(lo) >= 0 >= f(hi)` or
/// the reverse. Stops when the bracket stops shrinking.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64, ExampleError> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(ExampleError::NonConvergence(format!(
            "no sign change on [{lo}, {hi}]: {f_lo}, {f_hi}"
        )));
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let root = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    let residual = f(root).abs();
    if residual < BISECTION_TOL {
        Ok(root)
    } else {
        Err(ExampleError::NonConvergence(format!("residual {residual:e} at {root}")))
    }
}

fn g(d: &OffspringDistribution, s: f64) -> f64 {
    d.gf(s.clamp(0.0, 1.0)).expect("clamped")
}

fn g_prime(d: &OffspringDistribution, s: f64) -> f64 {
    d.gf_derivative(s.clamp(0.0, 1.0)).expect("clamped")
}

/// Limit probability `rho*` that the root of `T_n` has a marked transversal,
/// together with the probability `r` for an unconditional tree, the
/// solution of `r = p + (1-p)(g(r) - g(0))`.
pub fn transversal_rho_star(d: &OffspringDistribution, p: f64) -> Result<(f64, f64), ExampleError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ExampleError::Domain(format!("p = {p} must lie in [0, 1]")));
    }
    let g0 = d.pmf(0);
    let r = bisect(|r| p + (1.0 - p) * (g(d, r) - g0) - r, 0.0, 1.0)?;
    let rho = p / (1.0 - (1.0 - p) * g_prime(d, r));
    Ok((rho, r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxLimits {
    /// `Pr{W = 1}` for an unconditional tree.
    pub p_star: f64,
    /// `lim Pr{root of T_n = 1}`.
    pub conditional_limit: f64,
    /// Set when the limit's denominator is within 1e-9 of zero.
    pub ill_conditioned: bool,
}

/// Limits for the minimax function with max-node probability `p_max` and
/// leaf parameter `q_leaf`.
pub fn minimax_limits(d: &OffspringDistribution, p_max: f64, q_leaf: f64) -> Result<MinimaxLimits, ExampleError> {
    for (name, v) in [("p", p_max), ("q", q_leaf)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(ExampleError::Domain(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    let p0 = d.pmf(0);
    let p_star = bisect(
        |x| q_leaf * p0 + p_max * (1.0 - g(d, 1.0 - x)) + (1.0 - p_max) * (g(d, x) - p0) - x,
        0.0,
        1.0,
    )?;
    let up = g_prime(d, 1.0 - p_star);
    let down = g_prime(d, p_star);
    let denominator = 1.0 - p_max * up - (1.0 - p_max) * down;
    Ok(MinimaxLimits {
        p_star,
        conditional_limit: p_max * (1.0 - up) / denominator,
        ill_conditioned: denominator.abs() < 1e-9,
    })
}

/// Bound on `Pr{no coalescence in t levels}` for the minimax spine chain.
pub fn minimax_survival_bound(d: &OffspringDistribution, p_max: f64, p_star: f64, t: usize) -> f64 {
    (1.0 - (1.0 - d.pmf(1)) * (p_max * p_star + (1.0 - p_max) * (1.0 - p_star))).powi(t as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorityLimits {
    pub p_star: f64,
    pub p01: f64,
    pub p10: f64,
    pub limit: f64,
}

/// Limits for the majority function on trees whose nodes have 0 or `2k+1`
/// children, with Bernoulli(`p`) leaves.
pub fn majority_limits(k: usize, p: f64) -> Result<MajorityLimits, ExampleError> {
    if k == 0 {
        return Err(ExampleError::Domain("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(ExampleError::Domain(format!("p = {p} must lie in [0, 1]")));
    }
    let arity = (2 * k + 1) as u64;
    let leaf = 2.0 * k as f64 / arity as f64;
    let p_star = bisect(
        |x| binomial_sf(arity, x, k as u64).expect("x in [0,1]") / arity as f64 + leaf * p - x,
        0.0,
        1.0,
    )?;
    let others = 2 * k as u64;
    let p01 = binomial_sf(others, p_star, k as u64).expect("p* in [0,1]");
    let p10 = 1.0 - p01 - binomial_pmf(others, p_star, k as u64).expect("p* in [0,1]");
    let tie = binomial_pmf(others, p_star, k as u64).expect("p* in [0,1]");
    Ok(MajorityLimits { p_star, p01, p10, limit: p01 / (1.0 - tie) })
}
