//! Recursive functions on ordered trees.
//!
//! Every node `v` with children `v_1..v_l` gets the value
//! `V(v) = f_l(V(v_1), ..., V(v_l), U(v))` where the `U(v)` are independent
//! uniforms. States are the integers `0..k`. Leaves are the case `l = 0`, so
//! their values are `f_0(U)` and carry the leaf law `q`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::offspring::OffspringDistribution;
use crate::trees::{OrderedTree, TreeError};
use crate::wlaw::StateDistribution;

pub type State = usize;

/// Product laws with more terms than this are not enumerated.
pub const MAX_ENUMERATION: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("node function returned state {state} outside 0..{k}")]
    StateOutOfRange { state: State, k: usize },
    #[error("recursive function has no exact kernel")]
    NoKernel,
    #[error("product law needs {0} terms, over the enumeration limit")]
    EnumerationTooLarge(usize),
    #[error("expected {expected} leaf values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("leaf law does not match the node function at l = 0: {0}")]
    LeafLawMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

/// The family `f_0, f_1, ...` over a finite state space.
///
/// `apply` must be a pure function of its arguments. `kernel`, when
/// available, is the law of `apply(children, U)` for uniform `U`.
pub trait NodeRule: Send + Sync + fmt::Debug {
    fn num_states(&self) -> usize;

    fn apply(&self, children: &[State], u: f64) -> State;

    fn has_kernel(&self) -> bool {
        false
    }

    fn kernel(&self, _children: &[State]) -> Option<Vec<f64>> {
        None
    }

    /// Law of the node value when child `i` is independent with law
    /// `marginals[i]`. The default enumerates the product support through
    /// `kernel`; rules with structure override it with a direct computation.
    fn product_law(&self, marginals: &[&[f64]]) -> Result<Vec<f64>, SpecError> {
        enumerate_product_law(self, marginals)
    }
}

/// Reference implementation of [`NodeRule::product_law`]: sums
/// `prod_i marginals[i][c_i] * kernel(c)` over every `c` with positive
/// weight.
pub fn enumerate_product_law<F: NodeRule + ?Sized>(
    rule: &F,
    marginals: &[&[f64]],
) -> Result<Vec<f64>, SpecError> {
    if !rule.has_kernel() {
        return Err(SpecError::NoKernel);
    }
    let k = rule.num_states();
    let supports: Vec<Vec<(State, f64)>> = marginals
        .iter()
        .map(|m| m.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect())
        .collect();
    let terms = supports
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len().max(1)));
    match terms {
        Some(t) if t <= MAX_ENUMERATION => {}
        Some(t) => return Err(SpecError::EnumerationTooLarge(t)),
        None => return Err(SpecError::EnumerationTooLarge(usize::MAX)),
    }
    let mut out = vec![0.0; k];
    if supports.iter().any(|s| s.is_empty()) {
        return Ok(out);
    }
    let l = supports.len();
    let mut idx = vec![0usize; l];
    let mut children = vec![0; l];
    loop {
        let mut w = 1.0;
        for (j, s) in supports.iter().enumerate() {
            let (state, p) = s[idx[j]];
            children[j] = state;
            w *= p;
        }
        let law = rule.kernel(&children).ok_or(SpecError::NoKernel)?;
        for (o, p) in out.iter_mut().zip(law) {
            *o += w * p;
        }
        // odometer increment
        let mut j = 0;
        loop {
            if j == l {
                return Ok(out);
            }
            idx[j] += 1;
            if idx[j] < supports[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Maps a uniform to an index in `0..m`; the clamp guards `u` rounding to 1.
pub fn pick_index(u: f64, m: usize) -> usize {
    ((u * m as f64) as usize).min(m - 1)
}

/// A recursive function together with its leaf law.
#[derive(Debug, Clone)]
pub struct RecursiveSpec {
    rule: Arc<dyn NodeRule>,
    leaf_law: StateDistribution,
}

impl RecursiveSpec {
    /// When the rule has a kernel, `leaf_law` must equal `kernel(&[])`.
    pub fn new(rule: Arc<dyn NodeRule>, leaf_law: StateDistribution) -> Result<Self, SpecError> {
        let k = rule.num_states();
        if k == 0 {
            return Err(SpecError::Invalid("empty state space".into()));
        }
        if leaf_law.k() != k {
            return Err(SpecError::LeafLawMismatch(format!(
                "leaf law has {} states, rule has {k}",
                leaf_law.k()
            )));
        }
        if let Some(q) = rule.kernel(&[]) {
            let tv = leaf_law.tv(&q);
            if tv > 1e-12 {
                return Err(SpecError::LeafLawMismatch(format!("TV {tv}")));
            }
        }
        Ok(Self { rule, leaf_law })
    }

    pub fn k(&self) -> usize {
        self.rule.num_states()
    }

    pub fn rule(&self) -> &dyn NodeRule {
        self.rule.as_ref()
    }

    pub fn leaf_law(&self) -> &StateDistribution {
        &self.leaf_law
    }

    pub fn has_kernel(&self) -> bool {
        self.rule.has_kernel()
    }

    /// `apply` with range checking.
    pub fn apply(&self, children: &[State], u: f64) -> Result<State, SpecError> {
        let s = self.rule.apply(children, u);
        let k = self.k();
        if s < k {
            Ok(s)
        } else {
            Err(SpecError::StateOutOfRange { state: s, k })
        }
    }

    /// Root value of `t`: a reverse-preorder sweep with a value stack, one
    /// uniform per node. After a node's subtree is processed its children's
    /// values sit on top of the stack with the first child topmost.
    pub fn eval_root<R: Rng + ?Sized>(&self, t: &OrderedTree, rng: &mut R) -> Result<State, SpecError> {
        let mut stack: Vec<State> = Vec::with_capacity(64);
        let mut children: Vec<State> = Vec::new();
        for &c in t.offspring().iter().rev() {
            let u: f64 = rng.random();
            let c = c as usize;
            children.clear();
            children.extend(stack.drain(stack.len() - c..).rev());
            stack.push(self.apply(&children, u)?);
        }
        Ok(stack.pop().expect("non-empty tree"))
    }

    /// Like [`eval_root`](Self::eval_root) but the leaves, in preorder,
    /// take `leaf_values`; only internal nodes draw uniforms.
    pub fn eval_root_with_fixed_leaf_values<R: Rng + ?Sized>(
        &self,
        t: &OrderedTree,
        leaf_values: &[State],
        rng: &mut R,
    ) -> Result<State, SpecError> {
        let expected = t.leaves();
        if leaf_values.len() != expected {
            return Err(SpecError::LengthMismatch { expected, got: leaf_values.len() });
        }
        let k = self.k();
        let mut next_leaf = leaf_values.iter().rev();
        let mut stack: Vec<State> = Vec::new();
        let mut children: Vec<State> = Vec::new();
        for &c in t.offspring().iter().rev() {
            let c = c as usize;
            if c == 0 {
                let v = *next_leaf.next().expect("leaf count checked");
                if v >= k {
                    return Err(SpecError::StateOutOfRange { state: v, k });
                }
                stack.push(v);
                continue;
            }
            let u: f64 = rng.random();
            children.clear();
            children.extend(stack.drain(stack.len() - c..).rev());
            stack.push(self.apply(&children, u)?);
        }
        Ok(stack.pop().expect("non-empty tree"))
    }

    /// Root value of a fresh unconditional tree, generated and evaluated in
    /// one depth-first pass without storing the tree.
    pub fn sample_root_value<R: Rng + ?Sized>(
        &self,
        d: &OffspringDistribution,
        rng: &mut R,
        node_cap: usize,
    ) -> Result<State, EvalError> {
        struct Frame {
            arity: usize,
            start: usize,
            u: f64,
        }
        let mut frames: Vec<Frame> = Vec::new();
        let mut values: Vec<State> = Vec::new();
        let mut nodes = 0usize;
        loop {
            if nodes >= node_cap {
                return Err(TreeError::CapExceeded { cap: node_cap }.into());
            }
            nodes += 1;
            let c = d.sample(rng);
            let u: f64 = rng.random();
            if c > 0 {
                frames.push(Frame { arity: c, start: values.len(), u });
                continue;
            }
            let mut v = self.apply(&[], u)?;
            loop {
                match frames.last() {
                    None => return Ok(v),
                    Some(f) if values.len() + 1 - f.start < f.arity => {
                        values.push(v);
                        break;
                    }
                    Some(_) => {
                        let f = frames.pop().expect("checked");
                        values.push(v);
                        v = self.apply(&values[f.start..], f.u)?;
                        values.truncate(f.start);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Counts nodes modulo k; leaves are 1.
    #[derive(Debug)]
    struct Count(usize);

    impl NodeRule for Count {
        fn num_states(&self) -> usize {
            self.0
        }
        fn apply(&self, children: &[State], _u: f64) -> State {
            (1 + children.iter().sum::<usize>()) % self.0
        }
        fn has_kernel(&self) -> bool {
            true
        }
        fn kernel(&self, children: &[State]) -> Option<Vec<f64>> {
            let mut v = vec![0.0; self.0];
            v[self.apply(children, 0.0)] = 1.0;
            Some(v)
        }
    }

    /// Returns a state out of range for internal nodes.
    #[derive(Debug)]
    struct Broken;

    impl NodeRule for Broken {
        fn num_states(&self) -> usize {
            2
        }
        fn apply(&self, children: &[State], _u: f64) -> State {
            if children.is_empty() {
                0
            } else {
                7
            }
        }
    }

    fn count_spec(k: usize) -> RecursiveSpec {
        let mut q = vec![0.0; k];
        q[1 % k] = 1.0;
        RecursiveSpec::new(Arc::new(Count(k)), StateDistribution::new(q).unwrap()).unwrap()
    }

    #[test]
    fn pick_index_clamps() {
        assert_eq!(pick_index(0.0, 3), 0);
        assert_eq!(pick_index(0.999_999, 3), 2);
        assert_eq!(pick_index(1.0, 3), 2);
    }

    #[test]
    fn eval_counts_nodes() {
        let spec = count_spec(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: OrderedTree = "2 0 0".parse().unwrap();
        assert_eq!(spec.eval_root(&t, &mut rng).unwrap(), 3);
        let t: OrderedTree = "3 1 0 0 2 0 0".parse().unwrap();
        assert_eq!(spec.eval_root(&t, &mut rng).unwrap(), 7);
    }

    #[test]
    fn out_of_range_is_reported() {
        let spec = RecursiveSpec::new(
            Arc::new(Broken),
            StateDistribution::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: OrderedTree = "2 0 0".parse().unwrap();
        assert_eq!(
            spec.eval_root(&t, &mut rng),
            Err(SpecError::StateOutOfRange { state: 7, k: 2 })
        );
        assert_eq!(spec.eval_root(&OrderedTree::leaf(), &mut rng), Ok(0));
        assert_eq!(Broken.product_law(&[]), Err(SpecError::NoKernel));
    }

    #[test]
    fn leaf_law_must_match_kernel() {
        let bad = RecursiveSpec::new(Arc::new(Count(3)), StateDistribution::new(vec![1.0, 0.0, 0.0]).unwrap());
        assert!(matches!(bad, Err(SpecError::LeafLawMismatch(_))));
        let wrong_k = RecursiveSpec::new(Arc::new(Count(3)), StateDistribution::new(vec![0.0, 1.0]).unwrap());
        assert!(matches!(wrong_k, Err(SpecError::LeafLawMismatch(_))));
    }

    #[test]
    fn fixed_leaves_length_checked() {
        let spec = count_spec(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: OrderedTree = "2 0 0".parse().unwrap();
        assert_eq!(
            spec.eval_root_with_fixed_leaf_values(&t, &[1], &mut rng),
            Err(SpecError::LengthMismatch { expected: 2, got: 1 })
        );
        assert_eq!(spec.eval_root_with_fixed_leaf_values(&t, &[4, 2], &mut rng), Ok(7));
    }

    #[test]
    fn enumeration_of_counting_product() {
        let rule = Count(4);
        let a = [0.5, 0.5, 0.0, 0.0];
        let b = [0.0, 0.25, 0.75, 0.0];
        let law = enumerate_product_law(&rule, &[&a, &b]).unwrap();
        // 1 + a + b mod 4
        assert_eq!(law, vec![0.375, 0.0, 0.125, 0.5]);
        assert_eq!(enumerate_product_law(&rule, &[]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn fused_sampler_counts_small_trees() {
        let spec = count_spec(1 << 20);
        let d = OffspringDistribution::catalan();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ones = 0;
        let mut threes = 0;
        let reps = 100_000;
        for _ in 0..reps {
            match spec.sample_root_value(&d, &mut rng, 1_000) {
                Ok(1) => ones += 1,
                Ok(3) => threes += 1,
                Ok(n) => assert!(n % 2 == 1),
                Err(EvalError::Tree(TreeError::CapExceeded { .. })) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!((ones as f64 / reps as f64 - 0.5).abs() < 0.005);
        assert!((threes as f64 / reps as f64 - 0.125).abs() < 0.004);
    }
}
