mod common;

use common::*;
use orxe::search::{
    combine, coordinate_search, minimize_1d, regularizers, search_t1, search_t2, threshold_grid, GateKind,
};
use orxe::{evaluate, objective, search_collection, search_lambda, synth_trace, Config, ExpertDecl, SampleRecord, SearchParams, TraceSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(delta: f64) -> SearchParams {
    SearchParams::default().with_delta(delta)
}

/// Every single-coordinate grid change of the given gate kind is no better.
fn assert_coordinatewise_optimal(trace: &TraceSet, config: &Config, which: GateKind, p: &SearchParams) {
    let f = objective(trace, config, p).unwrap().f;
    let n = trace.n_experts();
    let nodes: Vec<usize> = match which {
        GateKind::Post => (0..n - 1).collect(),
        GateKind::Pre => (1..n).collect(),
    };
    for node in nodes {
        for t in threshold_grid(p.delta).unwrap() {
            let mut c = config.clone();
            match which {
                GateKind::Post => c.t2[node] = t,
                GateKind::Pre => c.t1[node - 1] = t,
            }
            let g = objective(trace, &c, p).unwrap().f;
            assert!(g >= f, "{which:?} node {node} -> {t} gives {g} < {f}");
        }
    }
}

#[test]
fn reference_objective() {
    let t = t3();
    let b = objective(&t, &c0(), &SearchParams::default()).unwrap();
    assert_eq!(b.cost_term, 0.75);
    for (r, want) in b.reg.iter().zip([0.1, 0.4, 0.7]) {
        assert!((r - want).abs() < 1e-12);
    }
    assert!((b.perf_term_regularized - 0.3).abs() < 1e-12);
    assert!((b.f - 0.725).abs() < 1e-12);
    assert!((naive_objective(&t, &c0(), 2.0, 0.2) - 0.725).abs() < 1e-12);
}

#[test]
fn zero_preference_is_pure_cost() {
    let t = t3();
    let mut c = c0();
    c.lambda = 0.0;
    let b = objective(&t, &c, &SearchParams::default()).unwrap();
    assert_eq!(b.f, b.cost_term);
    let first = Config::new(0.0, vec![0.0, 0.0], vec![0.0, 0.0]);
    assert_eq!(objective(&t, &first, &SearchParams::default()).unwrap().f, 1.0 / 16.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn objective_matches_oracle(seed in any::<u64>(), alpha in 0.0f64..4.0, beta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_exp = rand::Rng::random_range(&mut rng, 2..=5);
        let trace = random_trace(&mut rng, n_exp, 60);
        let config = random_config(&mut rng, n_exp).with_last_node(orxe::LastNodeGate::Gated);
        let p = SearchParams { alpha, beta, ..SearchParams::default() };
        let b = objective(&trace, &config, &p).unwrap();
        prop_assert!((b.f - naive_objective(&trace, &config, alpha, beta)).abs() < 1e-12);
        prop_assert_eq!(b.f, combine(config.lambda, b.cost_term, b.perf_term_regularized));
        prop_assert_eq!(b.cost_term, evaluate(&trace, &config).unwrap().mean_cost_norm);
    }

    #[test]
    fn regularizer_never_grows_with_preference(seed in any::<u64>(), l1 in 0.0f64..=1.0, l2 in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = random_trace(&mut rng, 4, 30);
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = regularizers(&trace, lo, 2.0, 0.2);
        let b = regularizers(&trace, hi, 2.0, 0.2);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y <= x);
            prop_assert!(*y >= 0.0);
        }
    }

    #[test]
    fn search_descends_and_stops_at_coordinate_optimum(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_exp = rand::Rng::random_range(&mut rng, 2..=4);
        let trace = random_trace(&mut rng, n_exp, 40);
        let p = params(0.1);
        let start = Config::initial(lambda, n_exp);
        let post = coordinate_search(&trace, start, GateKind::Post, &p).unwrap();
        prop_assert!(post.converged);
        prop_assert!(post.history.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(post.config.t1.clone(), vec![0.0; n_exp - 1]);
        assert_coordinatewise_optimal(&trace, &post.config, GateKind::Post, &p);

        let pre = coordinate_search(&trace, post.config.clone(), GateKind::Pre, &p).unwrap();
        prop_assert!(pre.history.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(&pre.config.t2, &post.config.t2);
        prop_assert!(pre.f <= post.f);
        assert_coordinatewise_optimal(&trace, &pre.config, GateKind::Pre, &p);
    }
}

#[test]
fn minimize_1d_agrees_with_loop() {
    let t = t3();
    let p = params(0.05);
    let mut base = c0();
    base.lambda = 0.2;
    let (best_t, best_f) = minimize_1d(&t, &base, 0, GateKind::Post, &p).unwrap();
    let mut naive: Option<(f64, f64)> = None;
    for t2 in unit_grid(20) {
        let mut c = base.clone();
        c.t2[0] = t2;
        let f = naive_objective(&t, &c, 2.0, 0.2);
        if naive.map_or(true, |(_, nf)| f < nf) {
            naive = Some((t2, f));
        }
    }
    let (nt, nf) = naive.unwrap();
    assert_eq!(best_t, nt);
    assert!((best_f - nf).abs() < 1e-12);
}

#[test]
fn synthetic_trace_postconditions() {
    let trace = synth_trace(3, 500, 42, 0.5).unwrap();
    let p = params(0.05);
    let c = search_t2(&trace, 0.5, &p).unwrap();
    assert_coordinatewise_optimal(&trace, &c, GateKind::Post, &p);

    let cheap = search_lambda(&trace, 0.1, &p).unwrap();
    let rich = search_lambda(&trace, 0.9, &p).unwrap();
    assert!(evaluate(&trace, &rich).unwrap().mean_cost_raw >= evaluate(&trace, &cheap).unwrap().mean_cost_raw);
}

#[test]
fn two_experts_reach_global_grid_optimum() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = random_trace(&mut rng, 2, 80);
        let p = params(0.05);
        for lambda in [0.2, 0.5, 0.8] {
            let c = search_t2(&trace, lambda, &p).unwrap();
            let f = objective(&trace, &c, &p).unwrap().f;
            let best = unit_grid(20)
                .into_iter()
                .map(|t| naive_objective(&trace, &Config::new(lambda, vec![0.0], vec![t]), 2.0, 0.2))
                .fold(f64::INFINITY, f64::min);
            assert!((f - best).abs() < 1e-12, "seed {seed} lambda {lambda}: {f} vs {best}");

            let with_t1 = search_t1(&trace, &c, &p).unwrap();
            let f1 = objective(&trace, &with_t1, &p).unwrap().f;
            let best1 = unit_grid(20)
                .into_iter()
                .map(|t| naive_objective(&trace, &Config::new(lambda, vec![t], c.t2.clone()), 2.0, 0.2))
                .fold(f64::INFINITY, f64::min);
            assert!((f1 - best1).abs() < 1e-12);
        }
    }
}

#[test]
fn pre_search_never_worse_than_zero_start() {
    let t = t3();
    let p = params(0.05);
    let mut base = c0();
    base.lambda = 0.3;
    let zero = Config { t1: vec![0.0, 0.0], ..base.clone() };
    let searched = search_t1(&t, &base, &p).unwrap();
    assert!(objective(&t, &searched, &p).unwrap().f <= objective(&t, &zero, &p).unwrap().f);
}

/// The first expert is always wrong and reports zero confidence. Most samples
/// are settled by the middle expert; the rest need the last one, and the
/// middle expert reports zero on those. Skipping the middle expert sends the
/// majority to the dearer last expert, and skipping the last one loses the
/// minority, so every positive pre-threshold makes things worse.
#[test]
fn useless_skipping_keeps_pre_thresholds_at_zero() {
    let experts = vec![ExpertDecl::new("a", 1.0), ExpertDecl::new("b", 2.0), ExpertDecl::new("c", 20.0)];
    let mut samples: Vec<SampleRecord> = (0..16)
        .map(|i| SampleRecord::new(format!("mid{i}"), vec![0.0, 0.9, 0.9], vec![0.0, 1.0, 1.0]))
        .collect();
    samples.extend(
        (0..4).map(|i| SampleRecord::new(format!("hard{i}"), vec![0.0, 0.0, 0.9], vec![0.0, 0.0, 1.0])),
    );
    let trace = TraceSet::new(experts, samples).unwrap();
    let p = params(0.05);
    let frozen = Config::new(0.7, vec![0.0, 0.0], vec![0.5, 0.5]);
    for node in 1..3 {
        for t in threshold_grid(0.05).unwrap().into_iter().skip(1) {
            let mut c = frozen.clone();
            c.t1[node - 1] = t;
            assert!(objective(&trace, &c, &p).unwrap().f > objective(&trace, &frozen, &p).unwrap().f);
        }
    }
    assert_eq!(search_t1(&trace, &frozen, &p).unwrap().t1, vec![0.0, 0.0]);
}

#[test]
fn zero_preference_finds_minimum_cost() {
    let trace = synth_trace(3, 200, 9, 0.5).unwrap();
    let p = params(0.1).with_lambdas(vec![0.0, 0.5, 1.0]);
    let c = search_collection(&trace, &p).unwrap();
    assert_eq!(c.len(), 3);
    let (best, _) = exhaustive_optimum(&trace, 0.0, &unit_grid(10), 2.0, 0.2);
    let got = objective(&trace, &c.entries[0].config, &p).unwrap().f;
    assert!((got - best).abs() < 1e-12, "{got} vs {best}");
    assert_eq!(c.entries[0].report.mean_cost_raw, 1.0);
}

#[test]
fn collection_is_deterministic_and_ordered() {
    let trace = synth_trace(4, 300, 3, 0.5).unwrap();
    let p = params(0.1).with_lambdas(vec![0.1, 0.3, 0.6, 0.9]);
    let mut a = Vec::new();
    let mut b = Vec::new();
    search_collection(&trace, &p).unwrap().to_writer(&mut a).unwrap();
    search_collection(&trace, &p).unwrap().to_writer(&mut b).unwrap();
    assert_eq!(a, b);
    let c = search_collection(&trace, &p).unwrap();
    assert_eq!(c.lambdas(), vec![0.1, 0.3, 0.6, 0.9]);

    let empty = search_collection(&trace, &p.clone().with_lambdas(vec![])).unwrap();
    assert!(empty.is_empty());
}
