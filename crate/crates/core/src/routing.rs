//! Cascade gating semantics and batch evaluation over a trace.
//!
//! Nodes are indexed from 0. Node `i < n-1` owns a post-expert threshold
//! `t2[i]`; node `j >= 1` owns a pre-expert threshold `t1[j-1]`. A sample
//! walks the cascade as follows:
//!
//! * a node whose `t2` is exactly `1.0` is disabled and never visited;
//! * the first enabled node is always computed;
//! * before computing a later node `j`, the sample skips it when the
//!   confidence of the last computed node is `< t1[j-1]`;
//! * after computing node `i`, the sample exits when its confidence is
//!   `> t2[i]`; the last node always exits;
//! * if nothing is left to compute, the last computed node's output is final.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ExpertMeta, SampleView, TraceSet};

/// Whether the pre-expert gate also applies to the last node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastNodeGate {
    /// `t1` covers every node after the first, including the last one.
    #[default]
    Gated,
    /// The last node is never skipped; the final `t1` entry is ignored.
    AlwaysCompute,
}

impl LastNodeGate {
    fn is_gated(&self) -> bool {
        *self == LastNodeGate::Gated
    }
}

/// One threshold configuration for preference `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub lambda: f64,
    /// Pre-expert thresholds for nodes `1..n`.
    pub t1: Vec<f64>,
    /// Post-expert thresholds for nodes `0..n-1`.
    pub t2: Vec<f64>,
    #[serde(default, skip_serializing_if = "LastNodeGate::is_gated")]
    pub last_node: LastNodeGate,
}

impl Config {
    pub fn new(lambda: f64, t1: Vec<f64>, t2: Vec<f64>) -> Self {
        Config {
            lambda,
            t1,
            t2,
            last_node: LastNodeGate::Gated,
        }
    }

    /// Search starting point: nothing skipped, every node but the last disabled.
    pub fn initial(lambda: f64, n_experts: usize) -> Self {
        let gates = n_experts.saturating_sub(1);
        Config::new(lambda, vec![0.0; gates], vec![1.0; gates])
    }

    pub fn with_last_node(mut self, last_node: LastNodeGate) -> Self {
        self.last_node = last_node;
        self
    }

    /// True if node `node` is disabled (never computed).
    pub fn is_disabled(&self, node: usize) -> bool {
        node < self.t2.len() && self.t2[node] == 1.0
    }

    pub fn n_experts(&self) -> usize {
        self.t2.len() + 1
    }

    pub fn validate(&self, n_experts: usize) -> Result<()> {
        let gates = n_experts.saturating_sub(1);
        for (what, v) in [("t1", &self.t1), ("t2", &self.t2)] {
            if v.len() != gates {
                return Err(Error::Dimension {
                    what,
                    expected: gates,
                    found: v.len(),
                });
            }
            if let Some(bad) = v.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::InvalidConfig(format!(
                    "{what} threshold {bad} is outside [0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} is outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// The path one sample took through the cascade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteOutcome {
    pub exit_node: usize,
    pub computed: Vec<usize>,
    pub final_conf: f64,
    pub cost: f64,
    pub metric: f64,
}

/// Cost, performance and exit statistics of one configuration on a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_cost_raw: f64,
    pub mean_cost_norm: f64,
    pub perf: f64,
    pub mean_exit_conf: f64,
    pub n_exit: Vec<u64>,
    pub n_comp: Vec<u64>,
}

/// Walks one confidence row and returns the exit node, reporting every
/// computed node through `on_compute`.
#[inline]
fn walk(conf: &[f64], config: &Config, mut on_compute: impl FnMut(usize)) -> usize {
    let n = conf.len();
    let gate_last = config.last_node == LastNodeGate::Gated;
    let mut last: Option<usize> = None;
    for j in 0..n {
        let is_last = j + 1 == n;
        if !is_last && config.t2[j] == 1.0 {
            continue;
        }
        if let Some(prev) = last {
            if (!is_last || gate_last) && conf[prev] < config.t1[j - 1] {
                continue;
            }
        }
        on_compute(j);
        last = Some(j);
        if is_last || conf[j] > config.t2[j] {
            return j;
        }
    }
    // Reaching here means the last node was skipped, which needs a computed predecessor.
    last.expect("the last node is computed unless an earlier node was")
}

pub fn route_sample<'a>(
    sample: impl Into<SampleView<'a>>,
    experts: &[ExpertMeta],
    config: &Config,
) -> Result<RouteOutcome> {
    let costs: Vec<f64> = experts.iter().map(|e| e.cost).collect();
    route_with_costs(sample, &costs, config)
}

/// [`route_sample`] against bare per-expert costs, for callers that only
/// know the expert pool through a configuration collection.
pub fn route_with_costs<'a>(
    sample: impl Into<SampleView<'a>>,
    costs: &[f64],
    config: &Config,
) -> Result<RouteOutcome> {
    let sample = sample.into();
    let n = costs.len();
    if n < 2 {
        return Err(Error::TooFewExperts(n));
    }
    for (what, len) in [("sample conf", sample.conf.len()), ("sample metric", sample.metric.len())] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                found: len,
            });
        }
    }
    config.validate(n)?;

    let mut computed = Vec::with_capacity(n);
    let mut cost = 0.0;
    let exit_node = walk(sample.conf, config, |j| {
        computed.push(j);
        cost += costs[j];
    });
    Ok(RouteOutcome {
        exit_node,
        computed,
        final_conf: sample.conf[exit_node],
        cost,
        metric: sample.metric[exit_node],
    })
}

/// Raw per-node counts and sums behind an [`EvalReport`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tally {
    pub n_exit: Vec<u64>,
    pub n_comp: Vec<u64>,
    /// Sum of the exiting expert's metric over samples exiting at each node.
    pub exit_metric: Vec<f64>,
    pub exit_conf: f64,
    pub n_data: usize,
}

pub(crate) fn tally(trace: &TraceSet, config: &Config) -> Result<Tally> {
    let n = trace.n_experts();
    config.validate(n)?;
    let mut t = Tally {
        n_exit: vec![0; n],
        n_comp: vec![0; n],
        exit_metric: vec![0.0; n],
        exit_conf: 0.0,
        n_data: trace.n_samples(),
    };
    let conf = trace.conf_matrix();
    let metric = trace.metric_matrix();
    for (conf_row, metric_row) in conf.chunks_exact(n).zip(metric.chunks_exact(n)) {
        let n_comp = &mut t.n_comp;
        let exit = walk(conf_row, config, |j| n_comp[j] += 1);
        t.n_exit[exit] += 1;
        t.exit_metric[exit] += metric_row[exit];
        t.exit_conf += conf_row[exit];
    }
    Ok(t)
}

impl Tally {
    pub(crate) fn mean_cost_raw(&self, experts: &[ExpertMeta]) -> f64 {
        let total: f64 = self
            .n_comp
            .iter()
            .zip(experts)
            .map(|(&c, e)| c as f64 * e.cost)
            .sum();
        total / self.n_data as f64
    }

    /// Normalizer for cost: the most expensive enabled expert, which is always
    /// the last one since costs ascend and the last node cannot be disabled.
    pub(crate) fn cost_scale(experts: &[ExpertMeta]) -> f64 {
        experts.last().map_or(1.0, |e| e.cost)
    }

    pub(crate) fn report(&self, experts: &[ExpertMeta]) -> EvalReport {
        let n_data = self.n_data as f64;
        let mean_cost_raw = self.mean_cost_raw(experts);
        EvalReport {
            mean_cost_raw,
            mean_cost_norm: mean_cost_raw / Self::cost_scale(experts),
            perf: self.exit_metric.iter().sum::<f64>() / n_data,
            mean_exit_conf: self.exit_conf / n_data,
            n_exit: self.n_exit.clone(),
            n_comp: self.n_comp.clone(),
        }
    }
}

pub fn evaluate(trace: &TraceSet, config: &Config) -> Result<EvalReport> {
    Ok(tally(trace, config)?.report(trace.experts()))
}

/// Routes every sample of the trace, in order.
pub fn route_all(trace: &TraceSet, config: &Config) -> Result<Vec<RouteOutcome>> {
    trace
        .samples()
        .map(|s| route_sample(s, trace.experts(), config))
        .collect()
}
