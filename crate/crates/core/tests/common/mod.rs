//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's routing or objective code; the
//! router below is a literal step-through of the cascade rules written
//! against plain slices.

#![allow(dead_code)]

use orxe::{Config, ExpertDecl, LastNodeGate, SampleRecord, TraceSet};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRoute {
    pub exit: usize,
    pub computed: Vec<usize>,
}

/// Step-through router. A node with post threshold exactly 1 (other than
/// the last) is never visited. The first visited node always runs. Any later
/// node is skipped when the confidence of the most recent computed node is
/// below its pre threshold. A computed node exits when its confidence is above
/// its post threshold; the last node exits unconditionally. If the last node
/// is skipped, the most recent computed node is the exit.
pub fn naive_route(conf: &[f64], t1: &[f64], t2: &[f64], gate_last: bool) -> NaiveRoute {
    let n = conf.len();
    let visited: Vec<usize> = (0..n).filter(|&i| i == n - 1 || t2[i] != 1.0).collect();
    let mut computed = vec![visited[0]];
    let mut current = visited[0];
    for &node in &visited[1..] {
        let current_is_done = conf[current] > t2[current];
        if current_is_done {
            return NaiveRoute { exit: current, computed };
        }
        let is_last = node == n - 1;
        let pre_applies = !is_last || gate_last;
        if pre_applies && conf[current] < t1[node - 1] {
            continue;
        }
        computed.push(node);
        current = node;
    }
    NaiveRoute { exit: current, computed }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveReport {
    pub n_exit: Vec<u64>,
    pub n_comp: Vec<u64>,
    pub total_cost: f64,
    /// Sum of the exit expert's metric per exit node.
    pub exit_metric: Vec<f64>,
    pub exit_conf: f64,
}

pub fn naive_evaluate(costs: &[f64], rows: &[(Vec<f64>, Vec<f64>)], config: &Config) -> NaiveReport {
    let n = costs.len();
    let gate_last = config.last_node == LastNodeGate::Gated;
    let mut r = NaiveReport {
        n_exit: vec![0; n],
        n_comp: vec![0; n],
        total_cost: 0.0,
        exit_metric: vec![0.0; n],
        exit_conf: 0.0,
    };
    for (conf, metric) in rows {
        let route = naive_route(conf, &config.t1, &config.t2, gate_last);
        r.n_exit[route.exit] += 1;
        for &c in &route.computed {
            r.n_comp[c] += 1;
            r.total_cost += costs[c];
        }
        r.exit_metric[route.exit] += metric[route.exit];
        r.exit_conf += conf[route.exit];
    }
    r
}

pub fn rows_of(trace: &TraceSet) -> Vec<(Vec<f64>, Vec<f64>)> {
    trace
        .to_records()
        .into_iter()
        .map(|s| (s.conf, s.metric))
        .collect()
}

pub fn costs_of(trace: &TraceSet) -> Vec<f64> {
    trace.experts().iter().map(|e| e.cost).collect()
}

/// Objective written out directly from its definition, with the trace
/// unpacked once.
pub struct NaiveObjective {
    costs: Vec<f64>,
    rows: Vec<(Vec<f64>, Vec<f64>)>,
    mean_perf: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl NaiveObjective {
    pub fn new(trace: &TraceSet, alpha: f64, beta: f64) -> Self {
        let costs = costs_of(trace);
        let rows = rows_of(trace);
        let n_data = rows.len() as f64;
        let mean_perf = (0..costs.len())
            .map(|i| rows.iter().map(|(_, m)| m[i]).sum::<f64>() / n_data)
            .collect();
        NaiveObjective { costs, rows, mean_perf, alpha, beta }
    }

    pub fn f(&self, config: &Config) -> f64 {
        let n = self.costs.len();
        let n_data = self.rows.len() as f64;
        let r = naive_evaluate(&self.costs, &self.rows, config);
        let lambda = config.lambda;
        let cost_term = r.total_cost / n_data / self.costs[n - 1];
        let mut perf = 0.0;
        for i in 0..n {
            let reg = f64::max(0.0, 1.0 - (self.alpha * lambda + self.beta) * (1.0 - self.mean_perf[i]));
            perf += r.exit_metric[i] * reg;
        }
        perf /= n_data;
        (1.0 - lambda) * cost_term + lambda * (1.0 - perf)
    }
}

pub fn naive_objective(trace: &TraceSet, config: &Config, alpha: f64, beta: f64) -> f64 {
    NaiveObjective::new(trace, alpha, beta).f(config)
}

/// Minimum objective over every combination of grid thresholds, first
/// minimum in enumeration order.
pub fn exhaustive_optimum(trace: &TraceSet, lambda: f64, grid: &[f64], alpha: f64, beta: f64) -> (f64, Config) {
    let obj = NaiveObjective::new(trace, alpha, beta);
    let gates = trace.n_experts() - 1;
    let dims = 2 * gates;
    let mut idx = vec![0usize; dims];
    let mut best: Option<(f64, Config)> = None;
    let mut config = Config::new(lambda, vec![0.0; gates], vec![0.0; gates]);
    loop {
        for g in 0..gates {
            config.t1[g] = grid[idx[g]];
            config.t2[g] = grid[idx[gates + g]];
        }
        let f = obj.f(&config);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, config.clone()));
        }
        let mut d = 0;
        loop {
            if d == dims {
                return best.unwrap();
            }
            idx[d] += 1;
            if idx[d] < grid.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `{0, step, 2 step, ..., 1}` computed as `k / m`.
pub fn unit_grid(m: usize) -> Vec<f64> {
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

/// Random valid trace. Confidences sit on a 0.05 grid so that exact ties with
/// grid thresholds occur often. Costs are small integers so sums are exact.
pub fn random_trace<R: Rng>(rng: &mut R, n_exp: usize, n_data: usize) -> TraceSet {
    let mut cost = 0.0;
    let experts: Vec<ExpertDecl> = (0..n_exp)
        .map(|i| {
            cost += rng.random_range(1..=5) as f64;
            ExpertDecl::new(format!("m{i}"), cost)
        })
        .collect();
    let samples: Vec<SampleRecord> = (0..n_data)
        .map(|s| {
            let conf = (0..n_exp).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
            let metric = (0..n_exp)
                .map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 })
                .collect();
            SampleRecord::new(format!("r{s}"), conf, metric)
        })
        .collect();
    TraceSet::new(experts, samples).expect("generated trace is valid")
}

/// Random config whose thresholds are often exactly 0, 1 or on the 0.05 grid.
pub fn random_config<R: Rng>(rng: &mut R, n_exp: usize) -> Config {
    let pick = |rng: &mut R| match rng.random_range(0..6) {
        0 => 0.0,
        1 => 1.0,
        2 | 3 => rng.random_range(0..=20) as f64 / 20.0,
        _ => rng.random::<f64>(),
    };
    let t1 = (0..n_exp - 1).map(|_| pick(rng)).collect();
    let t2 = (0..n_exp - 1).map(|_| pick(rng)).collect();
    let last = if rng.random_bool(0.8) {
        LastNodeGate::Gated
    } else {
        LastNodeGate::AlwaysCompute
    };
    Config::new(rng.random::<f64>(), t1, t2).with_last_node(last)
}

/// The four-sample reference trace, built independently of the library fixture.
pub fn t3() -> TraceSet {
    TraceSet::new(
        vec![
            ExpertDecl::new("e1", 1.0),
            ExpertDecl::new("e2", 4.0),
            ExpertDecl::new("e3", 16.0),
        ],
        vec![
            SampleRecord::new("s1", vec![0.95, 0.97, 0.99], vec![1.0, 1.0, 1.0]),
            SampleRecord::new("s2", vec![0.60, 0.90, 0.95], vec![0.0, 1.0, 1.0]),
            SampleRecord::new("s3", vec![0.20, 0.55, 0.90], vec![0.0, 0.0, 1.0]),
            SampleRecord::new("s4", vec![0.10, 0.30, 0.40], vec![0.0, 0.0, 0.0]),
        ],
    )
    .unwrap()
}

/// Thresholds used by the reference examples on [`t3`].
pub fn c0() -> Config {
    Config::new(0.5, vec![0.0, 0.25], vec![0.8, 0.8])
}

pub fn c1() -> Config {
    Config::new(0.5, vec![0.25, 0.35], vec![0.8, 0.8])
}
