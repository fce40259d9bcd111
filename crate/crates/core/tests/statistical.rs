//! Distributional checks of the samplers and estimators against exact
//! oracles computed independently here.

use std::collections::HashMap;

use gwrec::examples::{
    binary_subtree_pair_selection, majority_limits, minimax_limits, minimax_survival_bound, transversal_rho_star,
};
use gwrec::experiments::{
    cftp_runs, coalescence_survival, conditioned_root_values, summarize_cftp, transition_matrix_replicated,
    w_law_monte_carlo_replicated, RunSettings,
};
use gwrec::offspring::OffspringDistribution;
use gwrec::spine::{
    cftp_sample, sample_spine_step, stationary_distribution, step_map, transition_matrix_exact, SpineError,
    StochasticMatrix, WSource,
};
use gwrec::stats::{binomial_sf, chi_square_gof, chi_square_uniformity, tv_distance, EmpiricalDistribution};
use gwrec::trees::{
    height_tail, sample_conditioned, sample_conditioned_naive, sample_unconditional, SpineGenerator, TreeError,
};
use gwrec::wlaw::{apply_distributional_map, w_law_iterate, w_law_last_iterate, WLawIterates};
use gwrec::{build_example, ExampleConfig, ExampleName, OffspringSpec, OrderedTree, RecursiveSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn example(cfg: ExampleConfig) -> (RecursiveSpec, OffspringDistribution) {
    build_example(&cfg).unwrap()
}

fn se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

// ---------------------------------------------------------------- offspring

#[test]
fn offspring_samples_match_pmf() {
    let mut r = rng(1);
    let n = 1_000_000u64;
    for d in [
        OffspringDistribution::catalan(),
        OffspringDistribution::geometric(),
        OffspringDistribution::poisson(),
        OffspringDistribution::explicit(vec![0.5, 0.2, 0.2, 0.0, 0.1]).unwrap(),
    ] {
        let cells = 40;
        let mut counts = vec![0u64; cells];
        let mut zeta = vec![0u64; cells];
        let sb = d.size_biased();
        for _ in 0..n {
            counts[d.sample(&mut r).min(cells - 1)] += 1;
            zeta[sb.sample(&mut r).min(cells - 1)] += 1;
        }
        let pmf: Vec<f64> = (0..cells).map(|i| d.pmf(i)).collect();
        let zpmf: Vec<f64> = (0..cells).map(|i| i as f64 * d.pmf(i)).collect();
        let emp = EmpiricalDistribution::from_counts(counts);
        let zemp = EmpiricalDistribution::from_counts(zeta);
        assert!(emp.tv_to(&pmf).unwrap() <= 0.005, "{:?}", d.kind());
        assert!(zemp.tv_to(&zpmf).unwrap() <= 0.005, "{:?}", d.kind());
    }
}

#[test]
fn geometric_size_biased_mean_is_three() {
    let d = OffspringDistribution::geometric();
    let mut r = rng(2);
    let n = 1_000_000;
    let mean = (0..n).map(|_| d.size_biased().sample(&mut r) as f64).sum::<f64>() / n as f64;
    assert!((mean - 3.0).abs() <= 0.02, "{mean}");
    assert!((d.size_biased().mean() - 3.0).abs() < 1e-12);
}

// -------------------------------------------------------------------- trees

#[test]
fn catalan_small_sizes() {
    // trees reaching 4 nodes have size >= 5, so the cap only lumps them
    let cat = OffspringDistribution::catalan();
    let mut r = rng(3);
    let n = 1_000_000;
    let (mut one, mut three) = (0u64, 0u64);
    for _ in 0..n {
        match sample_unconditional(&cat, &mut r, 4) {
            Ok(t) if t.size() == 1 => one += 1,
            Ok(t) if t.size() == 3 => three += 1,
            Ok(t) => panic!("unexpected size {}", t.size()),
            Err(TreeError::CapExceeded { cap: 4 }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!((one as f64 / n as f64 - 0.5).abs() <= 0.003);
    assert!((three as f64 / n as f64 - 0.125).abs() <= 0.003);
}

/// The five ordered trees with four nodes, as preorder child counts.
fn four_node_trees() -> Vec<Vec<u32>> {
    vec![vec![3, 0, 0, 0], vec![2, 1, 0, 0], vec![2, 0, 1, 0], vec![1, 2, 0, 0], vec![1, 1, 1, 0]]
}

#[test]
fn conditioned_geometric_four_nodes_uniform() {
    let geo = OffspringDistribution::geometric();
    let mut r = rng(4);
    let n = 100_000;
    let shapes = four_node_trees();
    let mut counts = vec![0u64; shapes.len()];
    for _ in 0..n {
        let t = sample_conditioned(&geo, 4, &mut r).unwrap();
        let i = shapes.iter().position(|s| s.as_slice() == t.offspring()).expect("a 4-node tree");
        counts[i] += 1;
    }
    for &c in &counts {
        let f = c as f64 / n as f64;
        assert!((0.19..=0.21).contains(&f), "{counts:?}");
    }
    assert!(chi_square_uniformity(&counts).unwrap() > 0.001);
}

#[test]
fn conditioned_sampler_matches_reference_sampler() {
    // Poisson(1), n = 6: compare full shape laws of the two exact samplers
    let d = OffspringDistribution::poisson();
    let (mut a, mut b) = (rng(5), rng(6));
    let n = 60_000;
    let mut fast: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut slow: HashMap<Vec<u32>, u64> = HashMap::new();
    for _ in 0..n {
        *fast.entry(sample_conditioned(&d, 6, &mut a).unwrap().offspring().to_vec()).or_default() += 1;
        *slow.entry(sample_conditioned_naive(&d, 6, &mut b).unwrap().offspring().to_vec()).or_default() += 1;
    }
    // exact law: proportional to prod p_{c_i}, i.e. to 1 / prod c_i!
    let weight = |t: &Vec<u32>| t.iter().map(|&c| 1.0 / (1..=c).map(f64::from).product::<f64>()).product::<f64>();
    let mut shapes: Vec<_> = fast.keys().chain(slow.keys()).cloned().collect();
    shapes.sort();
    shapes.dedup();
    let total: f64 = shapes.iter().map(weight).sum();
    let exact: Vec<f64> = shapes.iter().map(|s| weight(s) / total).collect();
    assert_eq!(shapes.len(), 42, "all Catalan(5) shapes appear");
    for counts in [&fast, &slow] {
        let c: Vec<u64> = shapes.iter().map(|s| counts.get(s).copied().unwrap_or(0)).collect();
        assert!(chi_square_gof(&c, &exact).unwrap() > 0.001);
    }
}

#[test]
fn geometric_height_tail_matches_exact_law() {
    // linear-fractional offspring: Pr{height >= m} = 1/(m+1) exactly
    let geo = OffspringDistribution::geometric();
    let mut r = rng(7);
    let (m, n) = (100, 1_000_000u64);
    let hits = (0..n).filter(|_| gwrec::trees::reaches_height(&geo, m, &mut r)).count() as u64;
    let exact = height_tail(&geo, m);
    assert!((exact - 1.0 / 101.0).abs() < 1e-10);
    let f = hits as f64 / n as f64;
    assert!((f - exact).abs() <= 4.0 * se(exact, n), "{f} vs {exact}");
    assert!((m as f64 * f - 1.0).abs() < 0.1);
}

#[test]
fn spine_levels_geometric() {
    let geo = OffspringDistribution::geometric();
    let mut r = rng(8);
    let n = 100_000;
    let mut zsum = 0usize;
    // marked index given zeta = 3
    let mut marked = [0u64; 3];
    for level in SpineGenerator::skeleton(&geo, &mut r).take(n) {
        let level = level.unwrap();
        zsum += level.zeta;
        assert!(level.subtrees.is_empty());
        if level.zeta == 3 {
            marked[level.marked_index] += 1;
        }
    }
    assert!((zsum as f64 / n as f64 - 3.0).abs() <= 0.02);
    assert!(chi_square_uniformity(&marked).unwrap() > 0.001);
    let mut r = rng(9);
    for level in SpineGenerator::new(&geo, &mut r, 100_000).take(200) {
        let level = level.unwrap();
        assert_eq!(level.subtrees.len(), level.zeta - 1);
    }
}

// ------------------------------------------------------------------- recfun

#[test]
fn counting_root_equals_tree_size() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Counting).k(1 << 20));
    let mut r = rng(10);
    for _ in 0..200 {
        let n = 2 * r.random_range(0..300) + 1;
        let t = sample_conditioned(&d, n, &mut r).unwrap();
        assert_eq!(spec.eval_root(&t, &mut r).unwrap(), n);
    }
}

#[test]
fn fused_sampler_matches_tree_then_eval() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Minimax).p(0.3).q(0.6));
    let (mut a, mut b) = (rng(11), rng(12));
    let n = 200_000;
    let mut fused = EmpiricalDistribution::new(2);
    let mut staged = EmpiricalDistribution::new(2);
    let cap = 10_000;
    let count = |emp: &mut EmpiricalDistribution, res: Result<usize, TreeError>| match res {
        Ok(v) => emp.record(v),
        Err(TreeError::CapExceeded { .. }) => {}
        Err(e) => panic!("{e}"),
    };
    for _ in 0..n {
        let v = spec.sample_root_value(&d, &mut a, cap).map_err(|e| match e {
            gwrec::EvalError::Tree(t) => t,
            other => panic!("{other}"),
        });
        count(&mut fused, v);
        let t = sample_unconditional(&d, &mut b, cap);
        count(&mut staged, t.map(|t| spec.eval_root(&t, &mut b).unwrap()));
    }
    let (p, q) = (fused.prob(1), staged.prob(1));
    let s = (se(p, fused.total()).powi(2) + se(q, staged.total()).powi(2)).sqrt();
    assert!((p - q).abs() <= 4.0 * s, "{p} vs {q}");
}

// --------------------------------------------------------------------- wlaw

#[test]
fn path_length_w_law_is_folded_geometric() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::PathLength).k(8));
    let sol = w_law_iterate(&spec, &d, 1e-12, 10_000).unwrap();
    for i in 0..8 {
        let folded: f64 = (0..60).map(|j| 0.5f64.powi((i + 8 * j + 1) as i32)).sum();
        assert!((sol.law.prob(i) - folded).abs() < 1e-10, "{i}");
    }
}

#[test]
fn transversal_w_law_edges_and_monotone_iterates() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Transversal).p(1.0));
    assert!((w_law_iterate(&spec, &d, 1e-9, 10_000).unwrap().law.prob(1) - 1.0).abs() < 1e-12);

    let (spec, d) = example(ExampleConfig::new(ExampleName::Transversal).p(0.0));
    let mc = w_law_monte_carlo_replicated(&spec, &d, 100_000, RunSettings::new(20_000, 13)).unwrap();
    assert_eq!(mc.empirical.counts()[1], 0);

    // unconditional Pr{W = 1} is the root r of r = p + (1-p)(g(r) - g(0))
    for p in [0.2, 0.5, 0.8] {
        let (spec, d) = example(ExampleConfig::new(ExampleName::Transversal).p(p));
        let probs: Vec<f64> = WLawIterates::new(&spec, &d, 1e-9)
            .take(200)
            .map(|mu| mu.unwrap().prob(1))
            .collect();
        assert!(probs.windows(2).all(|w| w[1] >= w[0] - 1e-15), "monotone for p = {p}");
        let (_, r) = transversal_rho_star(&d, p).unwrap();
        let sol = w_law_iterate(&spec, &d, 1e-13, 10_000).unwrap();
        assert!((sol.law.prob(1) - r).abs() < 1e-10);
    }
}

#[test]
fn minimax_w_law_matches_scalar_equation() {
    let cat = OffspringDistribution::catalan();
    for (p, q) in [(0.5, 0.5), (0.3, 0.6), (0.8, 0.1)] {
        let (spec, d) = example(ExampleConfig::new(ExampleName::Minimax).p(p).q(q));
        let sol = w_law_iterate(&spec, &d, 1e-13, 10_000).unwrap();
        let m = minimax_limits(&cat, p, q).unwrap();
        assert!((sol.law.prob(1) - m.p_star).abs() < 1e-10, "{p} {q}");
    }
}

#[test]
fn w_law_fixed_point_residual() {
    for cfg in [
        ExampleConfig::new(ExampleName::Majority).p(0.3),
        ExampleConfig::new(ExampleName::Median),
        ExampleConfig::new(ExampleName::BooleanFunctions).k(2),
        ExampleConfig::new(ExampleName::RandomChild).offspring(OffspringSpec::Geometric),
    ] {
        let (spec, d) = example(cfg);
        let tol = 1e-9;
        let sol = w_law_iterate(&spec, &d, tol, 10_000).unwrap();
        let again = apply_distributional_map(&spec, &d, &sol.law, tol / 10.0).unwrap();
        assert!(again.tv(sol.law.probs()) < 2.0 * tol);
        assert!((sol.law.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn unconditional_path_length_is_geometric() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::PathLength).k(10_000).reduction("min"));
    let mc = w_law_monte_carlo_replicated(&spec, &d, 1_000_000, RunSettings::new(100_000, 14)).unwrap();
    let e = &mc.empirical;
    // W counts edges and is geometric on {0, 1, ...}: mean (1 - p0)/p0 = 1;
    // the path has W + 1 nodes, mean 1/p0 = 2
    let mean = (0..e.k()).map(|i| i as f64 * e.prob(i)).sum::<f64>();
    assert!((mean + 1.0 - 2.0).abs() <= 0.05, "{mean}");
    for i in 0..6 {
        let exact = 0.5f64.powi(i as i32 + 1);
        assert!((e.prob(i) - exact).abs() <= 4.0 * se(exact, e.total()), "{i}: {}", e.prob(i));
    }
}

#[test]
fn majority_w_law_monte_carlo_agrees_with_iteration() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Majority).p(0.3));
    let exact = w_law_iterate(&spec, &d, 1e-9, 10_000).unwrap();
    let mc = w_law_monte_carlo_replicated(&spec, &d, 100_000, RunSettings::new(1_000_000, 15)).unwrap();
    let tv = mc.empirical.tv_to(exact.law.probs()).unwrap();
    assert!(tv <= 0.005, "tv {tv}, discarded {}", mc.discarded);
}

// -------------------------------------------------------------------- spine

#[test]
fn spine_steps_by_construction() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Counting));
    let src = WSource::exact(&spec, &d).unwrap();
    let mut r = rng(16);
    for _ in 0..100 {
        let e = sample_spine_step(&spec, &d, &src, &mut r).unwrap();
        assert_eq!((e.zeta, e.unmarked_values.len()), (2, 1));
        let map = step_map(&spec, &e).unwrap();
        assert!(map.is_bijection());
        let w = e.unmarked_values[0];
        assert!((0..5).all(|x| map.image(x) == (1 + x + w) % 5));
    }

    let (spec, d) = example(ExampleConfig::new(ExampleName::Majority).p(0.3));
    let src = WSource::exact(&spec, &d).unwrap();
    let p_star = majority_limits(1, 0.3).unwrap().p_star;
    let n = 100_000;
    let mut ones = 0u64;
    let mut marked = [0u64; 3];
    for _ in 0..n {
        let e = sample_spine_step(&spec, &d, &src, &mut r).unwrap();
        assert_eq!((e.zeta, e.unmarked_values.len()), (3, 2));
        ones += e.unmarked_values.iter().sum::<usize>() as u64;
        marked[e.marked_index] += 1;
    }
    assert!((ones as f64 / (2 * n) as f64 - p_star).abs() <= 4.0 * se(p_star, 2 * n));
    assert!(chi_square_uniformity(&marked).unwrap() > 0.001);

    let (spec, d) = example(ExampleConfig::new(ExampleName::Transversal).p(0.4));
    let src = WSource::exact(&spec, &d).unwrap();
    for _ in 0..200 {
        let mut e = sample_spine_step(&spec, &d, &src, &mut r).unwrap();
        e.u = 0.39;
        assert_eq!(step_map(&spec, &e).unwrap().constant_value(), Some(1));
    }

    let (spec, d) = example(ExampleConfig::new(ExampleName::RandomChild));
    let src = WSource::exact(&spec, &d).unwrap();
    for _ in 0..200 {
        let e = sample_spine_step(&spec, &d, &src, &mut r).unwrap();
        let selected = gwrec::recfun::pick_index(e.u, e.zeta);
        let map = step_map(&spec, &e).unwrap();
        assert_eq!(map.constant_value().is_some(), selected != e.marked_index);
    }
}

#[test]
fn counting_never_coalesces() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Counting).k(4));
    let src = WSource::exact(&spec, &d).unwrap();
    let mut r = rng(17);
    let curve = gwrec::spine::coalescence_probe(&spec, &d, &src, 10_000, 3, &mut r).unwrap();
    assert_eq!(curve.survival(10_000), 1.0);
    assert!(matches!(
        cftp_sample(&spec, &d, &src, &mut r, 2_000),
        Err(SpineError::NonCoalescent { max_levels: 2_000, image_size: 4 })
    ));
    let m = transition_matrix_exact(&spec, &d).unwrap();
    for s in m.column_sums() {
        assert!((s - 1.0).abs() < 1e-9);
    }
    // every row is a shift of row 0
    for x in 0..4 {
        for y in 0..4 {
            assert!((m.get(x, y) - m.get(0, (y + 4 - x) % 4)).abs() < 1e-12);
        }
    }
}

#[test]
fn random_child_cftp_is_uniform_and_matrix_matches_mc() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::RandomChild).k(3));
    let src = WSource::exact(&spec, &d).unwrap();
    let outcomes = cftp_runs(&spec, &d, &src, 100_000, RunSettings::new(100_000, 18)).unwrap();
    let summary = summarize_cftp(3, &outcomes).unwrap();
    assert!(summary.law.tv_to(&[1.0 / 3.0; 3]).unwrap() <= 0.01);
    let exact = transition_matrix_exact(&spec, &d).unwrap();
    let mc = transition_matrix_replicated(&spec, &d, &src, RunSettings::new(100_000, 19)).unwrap();
    for x in 0..3 {
        assert!(tv_distance(exact.row(x), mc.row(x)).unwrap() <= 0.01);
        assert!((mc.row(x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn path_length_levels_used_tail() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::PathLength).k(8));
    let src = WSource::exact(&spec, &d).unwrap();
    let reps = 50_000;
    let outcomes = cftp_runs(&spec, &d, &src, 1_000, RunSettings::new(reps, 20)).unwrap();
    for t in 0..20 {
        let beyond = outcomes.iter().filter(|o| o.as_ref().unwrap().levels_used > t).count();
        let bound = 0.5f64.powi(t as i32);
        let f = beyond as f64 / reps as f64;
        assert!(f <= bound + 3.0 * se(bound, reps) + 1e-12, "t = {t}: {f} > {bound}");
    }
}

#[test]
fn majority_exact_matrix_entries() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Majority).p(0.3));
    let lim = majority_limits(1, 0.3).unwrap();
    let m = transition_matrix_exact(&spec, &d).unwrap();
    assert!((m.get(0, 1) - lim.p_star.powi(2)).abs() < 1e-9);
    assert!((m.get(1, 0) - (1.0 - lim.p_star).powi(2)).abs() < 1e-9);
    assert!((m.get(0, 1) - lim.p01).abs() < 1e-9 && (m.get(1, 0) - lim.p10).abs() < 1e-9);
    let pi = stationary_distribution(&m).unwrap();
    assert!((pi.prob(1) - lim.limit).abs() < 1e-9);

    // symmetric leaf law: the Monte Carlo matrix is symmetric within noise
    let (spec, d) = example(ExampleConfig::new(ExampleName::Majority).p(0.5));
    let src = WSource::exact(&spec, &d).unwrap();
    let reps = 100_000;
    let mc = transition_matrix_replicated(&spec, &d, &src, RunSettings::new(reps, 21)).unwrap();
    let (a, b) = (mc.get(0, 1), mc.get(1, 0));
    assert!((a - b).abs() <= 3.0 * (se(a, reps).powi(2) + se(b, reps).powi(2)).sqrt());
}

fn kernel_examples() -> Vec<ExampleConfig> {
    vec![
        ExampleConfig::new(ExampleName::Counting),
        ExampleConfig::new(ExampleName::Counting).k(4).reduction("min"),
        ExampleConfig::new(ExampleName::LeafCounter),
        ExampleConfig::new(ExampleName::PathLength),
        ExampleConfig::new(ExampleName::Transversal).p(0.5),
        ExampleConfig::new(ExampleName::RandomChild),
        ExampleConfig::new(ExampleName::Minimax).p(0.3).q(0.6),
        ExampleConfig::new(ExampleName::BooleanFunctions),
        ExampleConfig::new(ExampleName::BinarySubtree).k(8),
        ExampleConfig::new(ExampleName::Majority).p(0.3),
        ExampleConfig::new(ExampleName::Median),
    ]
}

#[test]
fn exact_and_monte_carlo_matrices_agree() {
    for (i, cfg) in kernel_examples().into_iter().enumerate() {
        let (spec, d) = example(cfg.clone());
        let src = WSource::exact(&spec, &d).unwrap();
        let reps = 40_000;
        let exact = transition_matrix_exact(&spec, &d).unwrap();
        let mc = transition_matrix_replicated(&spec, &d, &src, RunSettings::new(reps, 100 + i as u64)).unwrap();
        for x in 0..spec.k() {
            for y in 0..spec.k() {
                let p = exact.get(x, y);
                let tol = 5.0 * se(p, reps) + 1e-9;
                assert!((mc.get(x, y) - p).abs() <= tol, "{cfg:?} ({x},{y}): {} vs {p}", mc.get(x, y));
            }
        }
    }
}

#[test]
fn cftp_matches_stationary_law_for_coalescent_examples() {
    let coalescent = [
        ExampleConfig::new(ExampleName::Counting).k(4).reduction("min"),
        ExampleConfig::new(ExampleName::PathLength),
        ExampleConfig::new(ExampleName::Transversal).p(0.5),
        ExampleConfig::new(ExampleName::RandomChild),
        ExampleConfig::new(ExampleName::Minimax).p(0.3).q(0.6),
        ExampleConfig::new(ExampleName::BooleanFunctions),
        ExampleConfig::new(ExampleName::BinarySubtree).k(8),
        ExampleConfig::new(ExampleName::Majority).p(0.3),
        ExampleConfig::new(ExampleName::Median),
    ];
    for (i, cfg) in coalescent.into_iter().enumerate() {
        let (spec, d) = example(cfg.clone());
        let src = WSource::exact(&spec, &d).unwrap();
        let pi = stationary_distribution(&transition_matrix_exact(&spec, &d).unwrap()).unwrap();
        let outcomes = cftp_runs(&spec, &d, &src, 100_000, RunSettings::new(100_000, 200 + i as u64)).unwrap();
        let summary = summarize_cftp(spec.k(), &outcomes).unwrap();
        assert_eq!(summary.non_coalescent + summary.capped, 0, "{cfg:?}");
        let tv = summary.law.tv_to(pi.probs()).unwrap();
        assert!(tv <= 0.01, "{cfg:?}: tv {tv}");
    }
}

#[test]
fn cftp_with_tree_source_matches_law_source() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Minimax).p(0.3).q(0.6));
    let law = WSource::exact(&spec, &d).unwrap();
    let trees = WSource::Trees { node_cap: 100_000 };
    let reps = 20_000;
    let a = summarize_cftp(2, &cftp_runs(&spec, &d, &law, 10_000, RunSettings::new(reps, 22)).unwrap()).unwrap();
    let b = summarize_cftp(2, &cftp_runs(&spec, &d, &trees, 10_000, RunSettings::new(reps, 23)).unwrap()).unwrap();
    let (p, q) = (a.law.prob(1), b.law.prob(1));
    let s = (se(p, a.law.total()).powi(2) + se(q, b.law.total()).powi(2)).sqrt();
    assert!((p - q).abs() <= 4.0 * s + b.capped as f64 / reps as f64, "{p} vs {q}");
}

#[test]
fn cftp_value_does_not_depend_on_level_budget() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Median));
    let src = WSource::exact(&spec, &d).unwrap();
    for seed in 0..200 {
        let small = cftp_sample(&spec, &d, &src, &mut rng(seed), 100_000).unwrap();
        let large = cftp_sample(&spec, &d, &src, &mut rng(seed), 1_000_000).unwrap();
        assert_eq!(small, large);
        // a budget below the coalescence level fails; at it, succeeds
        if small.levels_used > 1 {
            assert!(cftp_sample(&spec, &d, &src, &mut rng(seed), small.levels_used - 1).is_err());
        }
        assert_eq!(cftp_sample(&spec, &d, &src, &mut rng(seed), small.levels_used).unwrap(), small);
    }
}

#[test]
fn coalescence_probes_respect_bounds() {
    let cat = OffspringDistribution::catalan();
    let reps = 10_000;
    let check = |cfg: ExampleConfig, bound: &dyn Fn(usize) -> f64, seed: u64| {
        let (spec, d) = example(cfg);
        let src = WSource::exact(&spec, &d).unwrap();
        let curve = coalescence_survival(&spec, &d, &src, 30, RunSettings::new(reps, seed)).unwrap();
        for t in 0..=30 {
            let b = bound(t);
            assert!(curve.survival(t) <= b + 3.0 * se(b, reps) + 1e-12, "t = {t}");
        }
    };
    check(ExampleConfig::new(ExampleName::Transversal).p(0.5), &|t| 0.5f64.powi(t as i32), 24);
    let m = minimax_limits(&cat, 0.3, 0.6).unwrap();
    check(
        ExampleConfig::new(ExampleName::Minimax).p(0.3).q(0.6),
        &|t| minimax_survival_bound(&cat, 0.3, m.p_star, t),
        25,
    );
    // median: geometric decay, fitted from the first levels
    let (spec, d) = example(ExampleConfig::new(ExampleName::Median));
    let src = WSource::exact(&spec, &d).unwrap();
    let curve = coalescence_survival(&spec, &d, &src, 30, RunSettings::new(reps, 26)).unwrap();
    let rate = curve.survival(5).powf(1.0 / 5.0);
    assert!(rate < 0.95);
    for t in 5..=30 {
        let b = rate.powi(t as i32) * 1.5;
        assert!(curve.survival(t) <= b + 3.0 * se(b.min(1.0), reps));
    }
}

#[test]
fn stationary_distribution_examples() {
    let (a, b) = (0.2, 0.05);
    let m = StochasticMatrix::from_rows(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
    assert!((stationary_distribution(&m).unwrap().prob(1) - a / (a + b)).abs() < 1e-12);
}

// ----------------------------------------------------------------- examples

#[test]
fn counting_and_leaf_counter_on_conditioned_trees() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::Counting).k(5));
    let vals = conditioned_root_values(&spec, &d, 101, RunSettings::new(200, 27)).unwrap();
    assert!(vals.iter().all(|&v| v == 101 % 5));
    let (spec, d) = example(ExampleConfig::new(ExampleName::LeafCounter).k(1 << 20));
    for n in [1, 3, 51, 777] {
        let vals = conditioned_root_values(&spec, &d, n, RunSettings::new(50, 28)).unwrap();
        assert!(vals.iter().all(|&v| v == (n + 1) / 2));
    }
}

#[test]
fn binary_subtree_size_is_odd_without_single_children() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::BinarySubtree).k(1 << 20));
    assert_eq!(d.pmf(1), 0.0);
    let mut r = rng(29);
    for _ in 0..500 {
        let t = gwrec::trees::sample_unconditional(&d, &mut r, 1 << 18);
        if let Ok(t) = t {
            let v = spec.eval_root(&t, &mut r).unwrap();
            assert_eq!(v % 2, 1);
            assert!(v <= t.size());
        }
    }
    for n in [10, 101] {
        let vals = conditioned_root_values(&spec, &d, n, RunSettings::new(100, 30)).unwrap();
        assert!(vals.iter().all(|v| v % 2 == 1 && *v <= n));
    }
}

#[test]
fn pair_selection_frequencies() {
    let mut r = rng(31);
    let n = 100_000;
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    for _ in 0..n {
        *counts.entry(binary_subtree_pair_selection(4, r.random())).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() <= 0.01);
    }
}

#[test]
fn boolean_functions_all_truth_tables_occur() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::BooleanFunctions).k(1));
    let src = WSource::exact(&spec, &d).unwrap();
    let outcomes = cftp_runs(&spec, &d, &src, 100_000, RunSettings::new(100_000, 32)).unwrap();
    let summary = summarize_cftp(4, &outcomes).unwrap();
    assert!(summary.law.counts().iter().all(|&c| c > 0), "{:?}", summary.law.counts());
}

#[test]
fn boolean_three_variables_needs_tree_source() {
    let (spec, d) = example(ExampleConfig::new(ExampleName::BooleanFunctions).k(3));
    assert!(!spec.has_kernel());
    assert!(w_law_last_iterate(&spec, &d).is_err());
    let src = WSource::Trees { node_cap: 100_000 };
    let outcomes = cftp_runs(&spec, &d, &src, 10_000, RunSettings::new(300, 33)).unwrap();
    let summary = summarize_cftp(256, &outcomes).unwrap();
    assert!(summary.law.total() > 250);
}

#[test]
fn binomial_tails_match_simulation() {
    let mut r = rng(34);
    let n = 1_000_000u64;
    for (trials, p, t) in [(2u64, 0.3, 1u64), (4, 0.45, 2), (6, 0.7, 3)] {
        let hits = (0..n)
            .filter(|_| (0..trials).filter(|_| r.random::<f64>() < p).count() as u64 > t)
            .count();
        let exact = binomial_sf(trials, p, t).unwrap();
        assert!((hits as f64 / n as f64 - exact).abs() <= 3.0 * se(exact, n));
    }
}

#[test]
fn empirical_law_converges() {
    let probs = [0.1, 0.2, 0.3, 0.15, 0.25];
    let law = gwrec::StateDistribution::new(probs.to_vec()).unwrap();
    let sampler = law.sampler();
    let mut r = rng(35);
    let emp = EmpiricalDistribution::from_samples(5, (0..1_000_000).map(|_| sampler.sample(&mut r)));
    assert!(emp.tv_to(&probs).unwrap() <= 0.01);
}

#[test]
fn ordered_tree_example_values() {
    let mut r = rng(36);
    let (spec, _) = example(ExampleConfig::new(ExampleName::LeafCounter).k(100));
    let t: OrderedTree = "2 2 0 0 0".parse().unwrap();
    assert_eq!(spec.eval_root(&t, &mut r).unwrap(), 3);
    let (spec, _) = example(ExampleConfig::new(ExampleName::Transversal).p(0.0));
    assert_eq!(spec.eval_root_with_fixed_leaf_values(&t, &[1, 1, 0], &mut r).unwrap(), 0);
}
