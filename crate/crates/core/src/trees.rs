//! Ordered trees in Łukasiewicz (preorder offspring count) form and the
//! samplers for unconditional trees, size-conditioned trees `T_n`, and
//! Kesten's spine.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::offspring::OffspringDistribution;

/// Default node cap for unconditional sampling.
pub const DEFAULT_NODE_CAP: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("tree reached the node cap of {cap} nodes")]
    CapExceeded { cap: usize },
    #[error("size {n} incompatible with offspring span {span} (need n mod span = 1)")]
    SpanMismatch { n: usize, span: usize },
    #[error("invalid tree size {0}")]
    InvalidSize(usize),
    #[error("not a valid preorder offspring sequence: {0}")]
    Malformed(String),
}

/// A finite rooted ordered tree stored as the preorder sequence of child
/// counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderedTree {
    offspring: Vec<u32>,
}

impl OrderedTree {
    pub fn leaf() -> Self {
        Self { offspring: vec![0] }
    }

    pub fn from_offspring(offspring: Vec<u32>) -> Result<Self, TreeError> {
        if is_lukasiewicz(&offspring) {
            Ok(Self { offspring })
        } else {
            Err(TreeError::Malformed(format!("{offspring:?}")))
        }
    }

    pub fn offspring(&self) -> &[u32] {
        &self.offspring
    }

    pub fn size(&self) -> usize {
        self.offspring.len()
    }

    pub fn leaves(&self) -> usize {
        self.offspring.iter().filter(|&&c| c == 0).count()
    }

    /// Edge height, computed in one pass with a stack of pending child counts.
    pub fn height(&self) -> usize {
        let mut pending: Vec<u32> = Vec::new();
        let mut height = 0;
        for &c in &self.offspring {
            height = height.max(pending.len());
            if c > 0 {
                pending.push(c);
            } else {
                while let Some(top) = pending.last_mut() {
                    *top -= 1;
                    if *top == 0 {
                        pending.pop();
                    } else {
                        break;
                    }
                }
            }
        }
        height
    }
}

impl fmt::Display for OrderedTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.offspring.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for OrderedTree {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let offspring = s
            .split_whitespace()
            .map(|tok| tok.parse::<u32>().map_err(|e| TreeError::Malformed(format!("{tok}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_offspring(offspring)
    }
}

/// Prefix sums of `c - 1` stay non-negative on every proper prefix and end
/// at exactly -1.
pub fn is_lukasiewicz(offspring: &[u32]) -> bool {
    if offspring.is_empty() {
        return false;
    }
    let mut walk: i64 = 0;
    let last = offspring.len() - 1;
    for (i, &c) in offspring.iter().enumerate() {
        walk += c as i64 - 1;
        if i < last && walk < 0 {
            return false;
        }
    }
    walk == -1
}

/// Rotates a sequence whose increments `c - 1` sum to -1 into the unique
/// cyclic shift that is a Łukasiewicz path: start right after the first
/// position where the prefix sum attains its minimum.
pub fn cycle_lemma_rotate(seq: &mut [u32]) {
    let mut walk: i64 = 0;
    let mut min = i64::MAX;
    let mut argmin = 0;
    for (i, &c) in seq.iter().enumerate() {
        walk += c as i64 - 1;
        if walk < min {
            min = walk;
            argmin = i + 1;
        }
    }
    debug_assert_eq!(walk, -1);
    seq.rotate_left(argmin % seq.len());
}

/// Depth-first generation of an unconditional Galton-Watson tree. The only
/// state is the number of pending subtrees, so depth is unbounded.
pub fn sample_unconditional<R: Rng + ?Sized>(
    d: &OffspringDistribution,
    rng: &mut R,
    node_cap: usize,
) -> Result<OrderedTree, TreeError> {
    let mut offspring = Vec::new();
    let mut pending: usize = 1;
    while pending > 0 {
        if offspring.len() >= node_cap {
            return Err(TreeError::CapExceeded { cap: node_cap });
        }
        let c = d.sample(rng);
        offspring.push(c as u32);
        pending = pending - 1 + c;
    }
    Ok(OrderedTree { offspring })
}

fn check_size(d: &OffspringDistribution, n: usize) -> Result<(), TreeError> {
    if n < 1 {
        return Err(TreeError::InvalidSize(n));
    }
    let span = d.span();
    if n % span != 1 % span {
        return Err(TreeError::SpanMismatch { n, span });
    }
    Ok(())
}

/// Exact sample of `T_n`.
///
/// The multiset of child counts of `n` i.i.d. draws conditioned on summing
/// to `n - 1` is drawn first (sequential binomials, rejected as soon as the
/// running sum overshoots), then arranged in uniformly random order, then
/// rotated into a valid path by the cycle lemma.
pub fn sample_conditioned<R: Rng + ?Sized>(
    d: &OffspringDistribution,
    n: usize,
    rng: &mut R,
) -> Result<OrderedTree, TreeError> {
    check_size(d, n)?;
    if n == 1 {
        return Ok(OrderedTree::leaf());
    }
    let counts = loop {
        if let Some(c) = conditioned_counts(d, n, rng) {
            break c;
        }
    };
    let mut seq = Vec::with_capacity(n);
    for (i, &c) in counts.iter().enumerate() {
        seq.extend(std::iter::repeat_n(i as u32, c as usize));
    }
    seq.shuffle(rng);
    cycle_lemma_rotate(&mut seq);
    debug_assert!(is_lukasiewicz(&seq));
    Ok(OrderedTree { offspring: seq })
}

/// One attempt at the count vector `(N_0, N_1, ...)` of a multinomial
/// sample of size `n`, returned only if `sum i N_i = n - 1`.
fn conditioned_counts<R: Rng + ?Sized>(
    d: &OffspringDistribution,
    n: usize,
    rng: &mut R,
) -> Option<Vec<u64>> {
    let target = (n - 1) as u64;
    let mut remaining = n as u64;
    let mut sum = 0u64;
    let mut counts = Vec::new();
    let mut i = 0usize;
    while remaining > 0 {
        let p = d.pmf(i);
        let tail = d.tail_mass(i);
        let c = if p <= 0.0 {
            0
        } else if tail <= p || d.max_support() == Some(i) {
            remaining
        } else {
            Binomial::new(remaining, (p / tail).min(1.0))
                .expect("valid binomial")
                .sample(rng)
        };
        counts.push(c);
        remaining -= c;
        sum += c * i as u64;
        if sum > target {
            return None;
        }
        i += 1;
        if remaining > 0 && (i as u64 > target || tail == 0.0) {
            return None;
        }
    }
    (sum == target).then_some(counts)
}

/// Reference sampler for `T_n`: draw `n` i.i.d. child counts until they sum
/// to `n - 1`, then rotate. Exact but `O(n^{3/2})` per tree.
pub fn sample_conditioned_naive<R: Rng + ?Sized>(
    d: &OffspringDistribution,
    n: usize,
    rng: &mut R,
) -> Result<OrderedTree, TreeError> {
    check_size(d, n)?;
    let mut seq = vec![0u32; n];
    loop {
        let mut sum = 0usize;
        for slot in seq.iter_mut() {
            let c = d.sample(rng);
            *slot = c as u32;
            sum += c;
        }
        if sum == n - 1 {
            break;
        }
    }
    cycle_lemma_rotate(&mut seq);
    Ok(OrderedTree { offspring: seq })
}

/// Decides whether an unconditional tree reaches depth `m`, by running the
/// generation sizes `Z_0 = 1, Z_1, ...` until extinction or generation `m`.
/// Cost is `O(m)` in expectation, independent of the tree size.
pub fn reaches_height<R: Rng + ?Sized>(d: &OffspringDistribution, m: usize, rng: &mut R) -> bool {
    let mut z: u64 = 1;
    for _ in 0..m {
        z = generation_step(d, z, rng);
        if z == 0 {
            return false;
        }
    }
    true
}

/// Total offspring of `z` independent nodes.
fn generation_step<R: Rng + ?Sized>(d: &OffspringDistribution, z: u64, rng: &mut R) -> u64 {
    match d.max_support() {
        Some(max) if z > 8 => {
            let mut remaining = z;
            let mut total = 0;
            for i in 0..=max {
                if remaining == 0 {
                    break;
                }
                let p = d.pmf(i);
                let tail = d.tail_mass(i);
                let c = if i == max || tail <= p {
                    remaining
                } else if p <= 0.0 {
                    0
                } else {
                    Binomial::new(remaining, (p / tail).min(1.0))
                        .expect("valid binomial")
                        .sample(rng)
                };
                remaining -= c;
                total += c * i as u64;
            }
            total
        }
        _ => (0..z).map(|_| d.sample(rng) as u64).sum(),
    }
}

/// Exact `Pr{height(T) >= m} = 1 - g^{(m)}(0)`, where `g^{(m)}` is the
/// m-fold iterate of the generating function.
pub fn height_tail(d: &OffspringDistribution, m: usize) -> f64 {
    // track the complement to keep precision as it shrinks like 2/(sigma^2 m)
    let mut s = 0.0;
    for _ in 0..m {
        s = d.gf(s).expect("iterates stay in [0,1]");
    }
    1.0 - s
}

/// One level of Kesten's tree: the spine node's child count, which child
/// continues the spine (0-based), and the other children's subtrees in
/// left-to-right order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpineLevel {
    pub zeta: usize,
    pub marked_index: usize,
    pub subtrees: Vec<OrderedTree>,
}

/// Lazily generates the levels `v_0, v_1, ...` of Kesten's tree.
#[derive(Debug)]
pub struct SpineGenerator<'a, R: ?Sized> {
    d: &'a OffspringDistribution,
    node_cap: Option<usize>,
    rng: &'a mut R,
}

impl<'a, R: Rng + ?Sized> SpineGenerator<'a, R> {
    pub fn new(d: &'a OffspringDistribution, rng: &'a mut R, node_cap: usize) -> Self {
        Self { d, node_cap: Some(node_cap), rng }
    }

    /// The spine alone: levels carry `zeta` and the marked index but no
    /// subtrees.
    pub fn skeleton(d: &'a OffspringDistribution, rng: &'a mut R) -> Self {
        Self { d, node_cap: None, rng }
    }
}

impl<R: Rng + ?Sized> Iterator for SpineGenerator<'_, R> {
    type Item = Result<SpineLevel, TreeError>;

    fn next(&mut self) -> Option<Self::Item> {
        let zeta = self.d.size_biased().sample(self.rng);
        let marked_index = self.rng.random_range(0..zeta);
        let mut subtrees = Vec::new();
        if let Some(cap) = self.node_cap {
            subtrees.reserve(zeta - 1);
            for _ in 1..zeta {
                match sample_unconditional(self.d, self.rng, cap) {
                    Ok(t) => subtrees.push(t),
                    Err(e) => return Some(Err(e)),
                }
            }
        }
        Some(Ok(SpineLevel { zeta, marked_index, subtrees }))
    }
}
