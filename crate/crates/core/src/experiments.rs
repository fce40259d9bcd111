//! Replicated, seeded experiments.
//!
//! Replicate `i` of a run with master seed `s` draws all of its randomness
//! from a ChaCha8 stream seeded with [`replicate_seed`]`(s, i)`, so results
//! do not depend on the number of worker threads or on scheduling. The
//! seed derivation is the splitmix64 finalizer applied to `s` and then to
//! the combination with `i`; it is part of the output contract and must
//! not change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPoolBuildError;

use crate::examples::majority_limits;
use crate::offspring::OffspringDistribution;
use crate::recfun::{EvalError, RecursiveSpec, State};
use crate::spine::{
    cftp_sample, coalescence_probe, sample_spine_step, step_map, CftpOutcome, SpineError,
    StochasticMatrix, SurvivalCurve, WSource,
};
use crate::stats::{EmpiricalDistribution, StatsError};
use crate::trees::{sample_conditioned, TreeError};
use crate::wlaw::{MonteCarloLaw, WLawError};
use crate::ExampleError;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replicate_seed(master, index))
}

/// Runs `f(i, rng_i)` for `i in 0..reps` and returns the results in index
/// order. `threads = None` uses rayon's global pool; `Some(1)` runs inline.
pub fn run_replicates<T, F>(
    master_seed: u64,
    reps: u64,
    threads: Option<usize>,
    f: F,
) -> Result<Vec<T>, ThreadPoolBuildError>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    let job = |i: u64| f(i, &mut replicate_rng(master_seed, i));
    match threads {
        Some(1) => Ok((0..reps).map(job).collect()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(|| (0..reps).into_par_iter().map(job).collect()))
        }
        None => Ok((0..reps).into_par_iter().map(job).collect()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Spine(#[from] SpineError),
    #[error(transparent)]
    WLaw(#[from] WLawError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error("thread pool: {0}")]
    Threads(#[from] ThreadPoolBuildError),
    #[error("invalid experiment: {0}")]
    Config(String),
}

/// Shared settings for replicated runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub reps: u64,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl RunSettings {
    pub fn new(reps: u64, seed: u64) -> Self {
        Self { reps, seed, threads: None }
    }

    pub fn threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    fn run<T: Send, F: Fn(u64, &mut ChaCha8Rng) -> T + Sync>(&self, f: F) -> Result<Vec<T>, ExperimentError> {
        if self.reps == 0 {
            return Err(ExperimentError::Config("reps must be at least 1".into()));
        }
        Ok(run_replicates(self.seed, self.reps, self.threads, f)?)
    }
}

/// Root values of `reps` independent copies of `T_n`, by replicate index.
pub fn conditioned_root_values(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    n: usize,
    run: RunSettings,
) -> Result<Vec<State>, ExperimentError> {
    run.run(|_, rng| -> Result<State, ExperimentError> {
        let t = sample_conditioned(d, n, rng)?;
        Ok(spec.eval_root(&t, rng).map_err(EvalError::from)?)
    })?
    .into_iter()
    .collect()
}

pub fn conditioned_root_law(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    n: usize,
    run: RunSettings,
) -> Result<EmpiricalDistribution, ExperimentError> {
    let values = conditioned_root_values(spec, d, n, run)?;
    Ok(EmpiricalDistribution::from_samples(spec.k(), values))
}

/// Independent CFTP runs, one outcome per replicate in index order.
pub fn cftp_runs(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    max_levels: usize,
    run: RunSettings,
) -> Result<Vec<Result<CftpOutcome, SpineError>>, ExperimentError> {
    run.run(|_, rng| cftp_sample(spec, d, source, rng, max_levels))
}

/// Summary of a batch of CFTP runs. Runs that hit the level limit or the
/// node cap are counted rather than dropped silently.
#[derive(Debug, Clone, PartialEq)]
pub struct CftpSummary {
    pub law: EmpiricalDistribution,
    pub non_coalescent: u64,
    pub capped: u64,
    pub mean_levels: f64,
    pub max_levels_used: usize,
}

pub fn summarize_cftp(k: usize, outcomes: &[Result<CftpOutcome, SpineError>]) -> Result<CftpSummary, SpineError> {
    let mut law = EmpiricalDistribution::new(k);
    let (mut non_coalescent, mut capped, mut total_levels, mut max_levels_used) = (0, 0, 0u64, 0);
    for o in outcomes {
        match o {
            Ok(c) => {
                law.record(c.value);
                total_levels += c.levels_used as u64;
                max_levels_used = max_levels_used.max(c.levels_used);
            }
            Err(SpineError::NonCoalescent { .. }) => non_coalescent += 1,
            Err(SpineError::Tree(TreeError::CapExceeded { .. })) => capped += 1,
            Err(e) => return Err(e.clone()),
        }
    }
    let mean_levels = if law.total() > 0 { total_levels as f64 / law.total() as f64 } else { f64::NAN };
    Ok(CftpSummary { law, non_coalescent, capped, mean_levels, max_levels_used })
}

/// Survival curve from `reps` independent single-chain probes.
pub fn coalescence_survival(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    t_max: usize,
    run: RunSettings,
) -> Result<SurvivalCurve, ExperimentError> {
    let curves = run.run(|_, rng| coalescence_probe(spec, d, source, t_max, 1, rng))?;
    let mut alive = vec![0u64; t_max + 1];
    for c in curves {
        for (a, x) in alive.iter_mut().zip(c?.alive) {
            *a += x;
        }
    }
    Ok(SurvivalCurve { reps: run.reps, alive })
}

/// Monte Carlo law of `W`, one tree per replicate.
pub fn w_law_monte_carlo_replicated(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    node_cap: usize,
    run: RunSettings,
) -> Result<MonteCarloLaw, ExperimentError> {
    let values = run.run(|_, rng| spec.sample_root_value(d, rng, node_cap))?;
    let mut empirical = EmpiricalDistribution::new(spec.k());
    let mut discarded = 0;
    for v in values {
        match v {
            Ok(s) => empirical.record(s),
            Err(EvalError::Tree(TreeError::CapExceeded { .. })) => discarded += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if empirical.total() == 0 {
        return Err(WLawError::AllCapped(discarded).into());
    }
    Ok(MonteCarloLaw { empirical, discarded })
}

/// Monte Carlo spine transition matrix with common random numbers: each
/// replicate draws one level's randomness and applies it to every start
/// state.
pub fn transition_matrix_replicated(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    source: &WSource,
    run: RunSettings,
) -> Result<StochasticMatrix, ExperimentError> {
    let k = spec.k();
    let maps = run.run(|_, rng| -> Result<Vec<State>, SpineError> {
        let e = sample_spine_step(spec, d, source, rng)?;
        Ok(step_map(spec, &e)?.table().to_vec())
    })?;
    let mut counts = vec![vec![0u64; k]; k];
    for m in maps {
        for (x, y) in m?.into_iter().enumerate() {
            counts[x][y] += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|r| r.into_iter().map(|c| c as f64 / run.reps as f64).collect())
        .collect();
    Ok(StochasticMatrix::from_rows(rows)?)
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub tv: f64,
    pub reps: u64,
    /// `0.5 * sum_i sqrt(p_i (1 - p_i) / reps)`, which bounds the standard
    /// deviation of the TV estimate.
    pub stderr: f64,
}

/// TV distance between the empirical root law of `T_n` and `reference`
/// for each `n`. Each `n` uses its own seed stream derived from the master
/// seed and `n`.
pub fn convergence_grid(
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    ns: &[usize],
    reference: &[f64],
    run: RunSettings,
) -> Result<Vec<ConvergenceRow>, ExperimentError> {
    ns.iter()
        .map(|&n| {
            let sub = RunSettings { seed: replicate_seed(run.seed, n as u64), ..run };
            let emp = conditioned_root_law(spec, d, n, sub)?;
            let stderr = 0.5
                * emp
                    .probs()
                    .iter()
                    .map(|p| (p * (1.0 - p) / run.reps as f64).sqrt())
                    .sum::<f64>();
            Ok(ConvergenceRow { n, tv: emp.tv_to(reference)?, reps: run.reps, stderr })
        })
        .collect()
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n,tv,reps,stderr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.n, r.tv, r.reps, r.stderr));
    }
    out
}

/// One point of the majority curve family: the leaf parameter, the
/// unconditional root probability, and the conditional limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure1Row {
    pub p: f64,
    pub leaf: f64,
    pub unconditional_pstar: f64,
    pub conditional_limit: f64,
}

/// Majority curves on the grid `p = i / (points - 1)`.
pub fn figure1_rows(k: usize, points: usize) -> Result<Vec<Figure1Row>, ExperimentError> {
    if points < 2 {
        return Err(ExperimentError::Config("figure grid needs at least 2 points".into()));
    }
    (0..points)
        .map(|i| {
            let p = i as f64 / (points - 1) as f64;
            let m = majority_limits(k, p)?;
            Ok(Figure1Row { p, leaf: p, unconditional_pstar: m.p_star, conditional_limit: m.limit })
        })
        .collect()
}

pub const FIGURE1_HEADER: &str = "p,leaf,unconditional_pstar,conditional_limit";

pub fn figure1_csv(rows: &[Figure1Row]) -> String {
    let mut out = format!("{FIGURE1_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.p, r.leaf, r.unconditional_pstar, r.conditional_limit));
    }
    out
}
