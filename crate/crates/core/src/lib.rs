//! Recursive functions on conditioned Galton-Watson trees.
//!
//! Offspring laws and tree samplers (including trees conditioned on their
//! size), recursive node functions evaluated bottom-up, the fixed-point law
//! of the root value of an unconditional tree, the spine Markov chain with
//! coupling-from-the-past sampling of its stationary law, and a catalog of
//! worked examples with closed-form limits.

pub mod cli;
pub mod examples;
pub mod experiments;
pub mod offspring;
pub mod recfun;
pub mod spine;
pub mod stats;
pub mod trees;
pub mod wlaw;

pub use examples::{build_example, ExampleConfig, ExampleError, ExampleName, ExampleParams};
pub use offspring::{OffspringDistribution, OffspringError, OffspringSpec};
pub use recfun::{EvalError, NodeRule, RecursiveSpec, SpecError, State};
pub use spine::{cftp_sample, SpineError, StateMap, StochasticMatrix, WSource};
pub use stats::{EmpiricalDistribution, StatsError};
pub use trees::{OrderedTree, TreeError};
pub use wlaw::{w_law_iterate, StateDistribution, WLawError, WLawSolution};
