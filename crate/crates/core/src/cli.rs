//! Command-line front end. Every subcommand writes CSV to `--output` (or
//! stdout) and diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 no coalescence within the level limit, 4 node cap exceeded.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::examples::{build_example, ExampleConfig, ExampleError, ExampleName, ExampleParams};
use crate::experiments::{
    cftp_runs, coalescence_survival, conditioned_root_values, convergence_csv, convergence_grid, figure1_csv,
    figure1_rows, replicate_rng, summarize_cftp, transition_matrix_replicated, w_law_monte_carlo_replicated,
    ExperimentError, RunSettings,
};
use crate::offspring::{OffspringDistribution, OffspringSpec};
use crate::recfun::{EvalError, RecursiveSpec};
use crate::spine::{stationary_distribution, transition_matrix_exact, SpineError, WSource, DEFAULT_MAX_LEVELS};
use crate::trees::{sample_conditioned, sample_unconditional, OrderedTree, TreeError};
use crate::wlaw::{w_law_iterate, StateDistribution, WLawError};

/// Environment variable holding the default master seed.
pub const SEED_ENV: &str = "GWREC_SEED";

const DEFAULT_REPS: u64 = 1000;
const DEFAULT_N: usize = 101;
const DEFAULT_CLI_NODE_CAP: usize = 1_000_000;
const DEFAULT_T_MAX: usize = 30;
const DEFAULT_POINTS: usize = 101;

#[derive(Debug, Parser)]
#[command(name = "gwrec", version, about = "Recursive functions on conditioned Galton-Watson trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample trees: T_n for each --n, or unconditional trees when --n is absent.
    #[command(after_help = "CSV: n,rep,size,height,offspring (offspring = preorder child counts, space separated; n empty when unconditional)")]
    SampleTree(Opts),
    /// Root value of T_n for each --n, or of the tree given by --tree.
    #[command(after_help = "CSV: n,rep,value")]
    EvalRoot(Opts),
    /// Law of the root value W of an unconditional tree.
    #[command(after_help = "CSV: state,prob")]
    Wlaw(Opts),
    /// Perfect samples of the limit law by coupling from the past down the spine.
    #[command(after_help = "CSV: rep,value,levels_used")]
    Cftp(Opts),
    /// One-step transition matrix of the spine chain (or its stationary law with --stationary).
    #[command(after_help = "CSV: from,to,prob   (with --stationary: state,prob)")]
    Matrix(Opts),
    /// Empirical probability that the composed spine map is not yet constant after t levels.
    #[command(after_help = "CSV: t,survival,stderr")]
    Probe(Opts),
    /// TV distance between the root law of T_n and the limit law, over the --n grid.
    #[command(after_help = "CSV: n,tv,reps,stderr")]
    Experiment(Opts),
    /// Majority curves: leaf parameter, unconditional root probability, conditional limit.
    #[command(after_help = "CSV: p,leaf,unconditional_pstar,conditional_limit")]
    Figure1Data(Opts),
    /// Names, parameters and oracles of the built-in examples.
    ListExamples,
    /// Run the experiment selected by --mode (flags override --config).
    #[command(after_help = "CSV: per mode, as for the corresponding subcommand\n  conditioned: n,rep,value (with --tv: n,tv,reps,stderr)\n  cftp: rep,value,levels_used\n  wlaw: state,prob\n  matrix: from,to,prob\n  probe: t,survival,stderr\n  convergence: n,tv,reps,stderr\n  figure1: p,leaf,unconditional_pstar,conditional_limit")]
    Run(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Conditioned,
    Cftp,
    Wlaw,
    Matrix,
    Probe,
    Convergence,
    Figure1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Unmarked root values drawn from the computed law of W.
    Law,
    /// Unmarked root values from freshly grown trees.
    Trees,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Example name (see list-examples).
    #[arg(long)]
    pub example: Option<String>,
    /// Example parameters as a JSON object, e.g. '{"k":5,"reduction":"min"}'.
    #[arg(long)]
    pub params: Option<String>,
    /// Example parameter k (modulus, number of states, variables, or majority arity (2k+1)).
    #[arg(long, visible_alias = "k-majority")]
    pub k: Option<usize>,
    /// Example probability p (transversal, minimax max-node, boolean AND-node, majority leaf).
    #[arg(long)]
    pub p: Option<f64>,
    /// Minimax leaf probability q.
    #[arg(long)]
    pub q: Option<f64>,
    /// "mod" or "min" for counting-type examples.
    #[arg(long)]
    pub reduction: Option<String>,
    /// Offspring law as JSON, e.g. '{"kind":"explicit","p":[0.5,0,0.5]}'.
    #[arg(long)]
    pub offspring: Option<String>,
    /// Master seed [default: $GWREC_SEED, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicates per tree size or per estimate (default 1000).
    #[arg(long)]
    pub reps: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Tree sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Output file (default stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Spine levels CFTP may use before giving up (default 100000).
    #[arg(long)]
    pub max_levels: Option<usize>,
    /// Largest unconditional tree grown before it is discarded (default 1000000).
    #[arg(long)]
    pub node_cap: Option<usize>,
    /// Levels tracked by probe.
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Where CFTP and matrix estimates draw unmarked subtree values (default law).
    #[arg(long, value_enum)]
    pub source: Option<Source>,
    /// W-law by fixed-point iteration or by growing trees (default exact).
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Convergence tolerance of the W-law iteration.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Grid points for figure1 data.
    #[arg(long)]
    pub points: Option<usize>,
    /// Tree to evaluate, as preorder child counts (eval-root).
    #[arg(long)]
    pub tree: Option<String>,
    /// Emit the stationary law instead of the matrix.
    #[arg(long)]
    pub stationary: bool,
    /// Conditioned mode: emit the TV table instead of raw values.
    #[arg(long)]
    pub tv: bool,
    /// Experiment run by the `run` subcommand.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    example: Option<ExampleConfig>,
    n: Option<OneOrMany>,
    reps: Option<u64>,
    seed: Option<u64>,
    mode: Option<Mode>,
    output: Option<PathBuf>,
    threads: Option<usize>,
    max_levels: Option<usize>,
    node_cap: Option<usize>,
    t_max: Option<usize>,
    source: Option<Source>,
    method: Option<Method>,
    tol: Option<f64>,
    points: Option<usize>,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub example: ExampleConfig,
    pub ns: Option<Vec<usize>>,
    pub reps: u64,
    pub seed: u64,
    pub mode: Option<Mode>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub max_levels: usize,
    pub node_cap: usize,
    pub t_max: usize,
    pub source: Source,
    pub method: Method,
    pub tol: f64,
    pub points: usize,
}

impl ExperimentConfig {
    fn run_settings(&self) -> RunSettings {
        RunSettings::new(self.reps, self.seed).threads(self.threads)
    }

    fn sizes(&self) -> Vec<usize> {
        self.ns.clone().unwrap_or_else(|| vec![DEFAULT_N])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    NonCoalescent(String),
    #[error("{0}")]
    CapExceeded(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::NonCoalescent(_) => 3,
            CliError::CapExceeded(_) => 4,
        }
    }
}

impl From<ExampleError> for CliError {
    fn from(e: ExampleError) -> Self {
        match e {
            ExampleError::NonConvergence(_) => CliError::Other(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::CapExceeded { .. } => CliError::CapExceeded(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SpineError> for CliError {
    fn from(e: SpineError) -> Self {
        match e {
            SpineError::NonCoalescent { .. } => CliError::NonCoalescent(e.to_string()),
            SpineError::Tree(t) => t.into(),
            SpineError::WLaw(w) => w.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<WLawError> for CliError {
    fn from(e: WLawError) -> Self {
        match e {
            WLawError::NoKernel => CliError::Config(format!("{e}; use --method mc or --source trees")),
            WLawError::Tree(t) => t.into(),
            WLawError::AllCapped(_) => CliError::CapExceeded(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Tree(t) => t.into(),
            EvalError::Spec(s) => CliError::Other(s.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Tree(t) => t.into(),
            ExperimentError::Eval(t) => t.into(),
            ExperimentError::Spine(s) => s.into(),
            ExperimentError::WLaw(w) => w.into(),
            ExperimentError::Example(x) => x.into(),
            ExperimentError::Config(c) => CliError::Config(c),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

fn json<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_str(s).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("{SEED_ENV}={v:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Merges flags over the config file (if any) over built-in defaults.
pub fn resolve(opts: &Opts) -> Result<ExperimentConfig, CliError> {
    let file: ExperimentConfigFile = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            json("config file", &text)?
        }
        None => ExperimentConfigFile::default(),
    };
    let mut example = match (&opts.example, file.example) {
        (Some(name), file_example) => {
            let name: ExampleName = name.parse()?;
            match file_example {
                Some(fe) if fe.name == name => fe,
                _ => ExampleConfig::new(name),
            }
        }
        (None, Some(fe)) => fe,
        (None, None) if opts.mode.or(file.mode) == Some(Mode::Figure1) => ExampleConfig::new(ExampleName::Majority),
        (None, None) => ExampleConfig::new(ExampleName::Counting),
    };
    if let Some(p) = &opts.params {
        example.params = json::<ExampleParams>("--params", p)?;
    }
    let params = &mut example.params;
    params.k = opts.k.or(params.k);
    params.p = opts.p.or(params.p);
    params.q = opts.q.or(params.q);
    if let Some(r) = &opts.reduction {
        params.reduction = Some(r.clone());
    }
    if let Some(o) = &opts.offspring {
        params.offspring = Some(json::<OffspringSpec>("--offspring", o)?);
    }
    let ns = opts.n.clone().or(file.n.map(|n| match n {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    }));
    let seed = match opts.seed.or(file.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let cfg = ExperimentConfig {
        example,
        ns,
        reps: opts.reps.or(file.reps).unwrap_or(DEFAULT_REPS),
        seed,
        mode: opts.mode.or(file.mode),
        output: opts.output.clone().or(file.output),
        threads: opts.threads.or(file.threads),
        max_levels: opts.max_levels.or(file.max_levels).unwrap_or(DEFAULT_MAX_LEVELS),
        node_cap: opts.node_cap.or(file.node_cap).unwrap_or(DEFAULT_CLI_NODE_CAP),
        t_max: opts.t_max.or(file.t_max).unwrap_or(DEFAULT_T_MAX),
        source: opts.source.or(file.source).unwrap_or(Source::Law),
        method: opts.method.or(file.method).unwrap_or(Method::Exact),
        tol: opts.tol.or(file.tol).unwrap_or(crate::wlaw::DEFAULT_TOL),
        points: opts.points.or(file.points).unwrap_or(DEFAULT_POINTS),
    };
    if cfg.reps == 0 {
        return Err(CliError::Config("reps must be at least 1".into()));
    }
    if cfg.threads == Some(0) {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(CliError::Config("tol must be positive".into()));
    }
    Ok(cfg)
}

/// Law of W: the converged iterate, or the last iterate together with its
/// truncation bound when the iteration hits its depth limit.
fn w_law(spec: &RecursiveSpec, d: &OffspringDistribution, tol: f64) -> Result<StateDistribution, CliError> {
    let sol = match w_law_iterate(spec, d, tol, crate::wlaw::DEFAULT_MAX_DEPTH) {
        Err(WLawError::NonConvergence(sol)) => {
            eprintln!("w-law: step TV {:e} still above tol {tol:e}", sol.last_step);
            *sol
        }
        other => other?,
    };
    eprintln!(
        "w-law: {} iterations; TV to the law of W <= {:e}",
        sol.depth, sol.truncation_bound
    );
    Ok(sol.law)
}

fn source(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<WSource, CliError> {
    match cfg.source {
        Source::Law => Ok(WSource::from_law(&w_law(spec, d, cfg.tol)?)),
        Source::Trees => Ok(WSource::Trees { node_cap: cfg.node_cap }),
    }
}

fn sample_tree_csv(cfg: &ExperimentConfig, d: &OffspringDistribution) -> Result<String, CliError> {
    let mut out = String::from("n,rep,size,height,offspring\n");
    let run = cfg.run_settings();
    let sizes: Vec<Option<usize>> = match &cfg.ns {
        Some(ns) => ns.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    for (j, n) in sizes.into_iter().enumerate() {
        let sub = RunSettings { seed: crate::experiments::replicate_seed(run.seed, j as u64), ..run };
        let trees = crate::experiments::run_replicates(sub.seed, sub.reps, sub.threads, |_, rng| match n {
            Some(n) => sample_conditioned(d, n, rng),
            None => sample_unconditional(d, rng, cfg.node_cap),
        })
        .map_err(|e| CliError::Other(e.to_string()))?;
        for (rep, t) in trees.into_iter().enumerate() {
            let t = t?;
            let n_field = n.map(|n| n.to_string()).unwrap_or_default();
            writeln!(out, "{n_field},{rep},{},{},{t}", t.size(), t.height()).unwrap();
        }
    }
    Ok(out)
}

fn conditioned_csv(
    cfg: &ExperimentConfig,
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    tree: Option<&str>,
) -> Result<String, CliError> {
    let mut out = String::from("n,rep,value\n");
    if let Some(tree) = tree {
        let t: OrderedTree = tree.parse()?;
        let v = spec.eval_root(&t, &mut replicate_rng(cfg.seed, 0)).map_err(EvalError::from)?;
        writeln!(out, "{},0,{v}", t.size()).unwrap();
        return Ok(out);
    }
    for n in cfg.sizes() {
        let sub = RunSettings { seed: crate::experiments::replicate_seed(cfg.seed, n as u64), ..cfg.run_settings() };
        for (rep, v) in conditioned_root_values(spec, d, n, sub)?.into_iter().enumerate() {
            writeln!(out, "{n},{rep},{v}").unwrap();
        }
    }
    Ok(out)
}

fn wlaw_csv(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<String, CliError> {
    match cfg.method {
        Method::Exact => Ok(w_law(spec, d, cfg.tol)?.to_csv()),
        Method::Mc => {
            let mc = w_law_monte_carlo_replicated(spec, d, cfg.node_cap, cfg.run_settings())?;
            eprintln!(
                "w-law (monte carlo): {} trees kept, {} discarded at the node cap ({:.3e} of draws)",
                mc.empirical.total(),
                mc.discarded,
                mc.discard_fraction()
            );
            let law = StateDistribution::from_empirical(&mc.empirical).map_err(|e| CliError::Other(e.to_string()))?;
            Ok(law.to_csv())
        }
    }
}

fn cftp_csv(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<String, CliError> {
    let src = source(cfg, spec, d)?;
    let outcomes = cftp_runs(spec, d, &src, cfg.max_levels, cfg.run_settings())?;
    let summary = summarize_cftp(spec.k(), &outcomes)?;
    eprintln!(
        "cftp: {} coalesced, {} non-coalescent, {} capped; mean levels {:.3}, max {}",
        summary.law.total(),
        summary.non_coalescent,
        summary.capped,
        summary.mean_levels,
        summary.max_levels_used
    );
    if summary.non_coalescent > 0 {
        return Err(CliError::NonCoalescent(format!(
            "{} of {} runs did not coalesce within {} levels",
            summary.non_coalescent, cfg.reps, cfg.max_levels
        )));
    }
    if summary.capped > 0 {
        return Err(CliError::CapExceeded(format!(
            "{} of {} runs grew a subtree past the node cap {}",
            summary.capped, cfg.reps, cfg.node_cap
        )));
    }
    let mut out = String::from("rep,value,levels_used\n");
    for (rep, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        writeln!(out, "{rep},{},{}", o.value, o.levels_used).unwrap();
    }
    Ok(out)
}

fn matrix_csv(
    cfg: &ExperimentConfig,
    spec: &RecursiveSpec,
    d: &OffspringDistribution,
    stationary: bool,
) -> Result<String, CliError> {
    let m = match cfg.method {
        Method::Exact => transition_matrix_exact(spec, d)?,
        Method::Mc => {
            let src = source(cfg, spec, d)?;
            transition_matrix_replicated(spec, d, &src, cfg.run_settings())?
        }
    };
    if stationary {
        Ok(stationary_distribution(&m)?.to_csv())
    } else {
        Ok(m.to_csv())
    }
}

fn probe_csv(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<String, CliError> {
    let src = source(cfg, spec, d)?;
    Ok(coalescence_survival(spec, d, &src, cfg.t_max, cfg.run_settings())?.to_csv())
}

/// Limit law used as the reference in convergence tables: the stationary
/// law of the exact spine matrix, or a CFTP estimate without a kernel.
fn limit_law(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<Vec<f64>, CliError> {
    if spec.has_kernel() {
        let m = transition_matrix_exact(spec, d)?;
        return Ok(stationary_distribution(&m)?.probs().to_vec());
    }
    let src = WSource::Trees { node_cap: cfg.node_cap };
    let settings = RunSettings { seed: cfg.seed ^ 0x5eed, ..cfg.run_settings() };
    let outcomes = cftp_runs(spec, d, &src, cfg.max_levels, settings)?;
    let summary = summarize_cftp(spec.k(), &outcomes)?;
    if summary.non_coalescent + summary.capped > 0 {
        return Err(CliError::NonCoalescent("reference CFTP runs failed".into()));
    }
    Ok(summary.law.probs())
}

fn convergence(cfg: &ExperimentConfig, spec: &RecursiveSpec, d: &OffspringDistribution) -> Result<String, CliError> {
    let reference = limit_law(cfg, spec, d)?;
    let rows = convergence_grid(spec, d, &cfg.sizes(), &reference, cfg.run_settings())?;
    Ok(convergence_csv(&rows))
}

fn figure1(cfg: &ExperimentConfig) -> Result<String, CliError> {
    if cfg.example.name != ExampleName::Majority {
        return Err(CliError::Config("figure1 data is defined for the majority example".into()));
    }
    let k = cfg.example.params.k.unwrap_or(1);
    Ok(figure1_csv(&figure1_rows(k, cfg.points)?))
}

fn list_examples() -> String {
    let mut out = String::new();
    for name in ExampleName::ALL {
        writeln!(out, "{name}\n  parameters: {}\n  oracles:    {}", name.parameters(), name.oracles()).unwrap();
    }
    out
}

fn dispatch(mode: Mode, cfg: &ExperimentConfig, opts: &Opts) -> Result<String, CliError> {
    if mode == Mode::Figure1 {
        return figure1(cfg);
    }
    let (spec, d) = build_example(&cfg.example)?;
    match mode {
        Mode::Conditioned if opts.tv => convergence(cfg, &spec, &d),
        Mode::Conditioned => conditioned_csv(cfg, &spec, &d, opts.tree.as_deref()),
        Mode::Cftp => cftp_csv(cfg, &spec, &d),
        Mode::Wlaw => wlaw_csv(cfg, &spec, &d),
        Mode::Matrix => matrix_csv(cfg, &spec, &d, opts.stationary),
        Mode::Probe => probe_csv(cfg, &spec, &d),
        Mode::Convergence => convergence(cfg, &spec, &d),
        Mode::Figure1 => unreachable!("handled above"),
    }
}

/// Runs a parsed command and returns its CSV together with the output
/// path, if any.
pub fn execute(command: &Command) -> Result<(String, Option<PathBuf>), CliError> {
    let (mode, opts) = match command {
        Command::ListExamples => return Ok((list_examples(), None)),
        Command::SampleTree(o) => {
            let cfg = resolve(o)?;
            let (_, d) = build_example(&cfg.example)?;
            return Ok((sample_tree_csv(&cfg, &d)?, cfg.output));
        }
        Command::EvalRoot(o) => (Mode::Conditioned, o),
        Command::Wlaw(o) => (Mode::Wlaw, o),
        Command::Cftp(o) => (Mode::Cftp, o),
        Command::Matrix(o) => (Mode::Matrix, o),
        Command::Probe(o) => (Mode::Probe, o),
        Command::Experiment(o) => (Mode::Convergence, o),
        Command::Figure1Data(o) => {
            let mut o = o.clone();
            o.example.get_or_insert_with(|| "majority".into());
            let cfg = resolve(&o)?;
            return Ok((figure1(&cfg)?, cfg.output));
        }
        Command::Run(o) => {
            let cfg = resolve(o)?;
            let mode = cfg
                .mode
                .ok_or_else(|| CliError::Config("run needs --mode (or \"mode\" in --config)".into()))?;
            return Ok((dispatch(mode, &cfg, o)?, cfg.output));
        }
    };
    let cfg = resolve(opts)?;
    Ok((dispatch(mode, &cfg, opts)?, cfg.output))
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let result = execute(&cli.command).and_then(|(csv, path)| {
        match path {
            Some(p) => fs::write(&p, csv)?,
            None => io::stdout().lock().write_all(csv.as_bytes())?,
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
