//! Regularized cost/performance objective and the coordinate search over
//! gate thresholds.
//!
//! For preference `lambda` the objective is
//!
//! ```text
//! f = (1 - lambda) * cost + lambda * (1 - perf_reg)
//! perf_reg = (1 / N) * sum_i exit_metric_i * reg_i
//! reg_i = max(0, 1 - (alpha * lambda + beta) * (1 - mean_perf_i))
//! ```
//!
//! where `cost` is the normalized mean cost and `exit_metric_i` is the summed
//! metric of samples exiting at node `i`. The regularizer discounts exits at
//! weak experts more heavily as `lambda` grows; it only exists inside the
//! search and never shows up in an [`EvalReport`](crate::routing::EvalReport).
//!
//! The search starts with every node but the last disabled. Each round
//! minimizes `f` along every single coordinate by a full scan of the
//! threshold grid and adopts only the best of those moves. It stops when no
//! move lowers `f`. The post-expert thresholds are searched first with the
//! pre-expert thresholds at zero, then the pre-expert thresholds with the
//! post-expert ones frozen.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configset::{CollectionEntry, ConfigCollection};
use crate::error::{Error, Result};
use crate::routing::{tally, Config, LastNodeGate, Tally};
use crate::trace::TraceSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Threshold grid step.
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Strictly ascending preferences in `[0, 1]`, one configuration each.
    pub lambda_grid: Vec<f64>,
    /// Upper bound on adopted moves per coordinate search.
    pub max_rounds: usize,
    #[serde(default, skip_serializing_if = "is_gated")]
    pub last_node: LastNodeGate,
}

fn is_gated(g: &LastNodeGate) -> bool {
    *g == LastNodeGate::Gated
}

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_MAX_ROUNDS: usize = 10_000;

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            delta: DEFAULT_DELTA,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            lambda_grid: grid_points(0.0, 1.0, 0.01).expect("valid default grid"),
            max_rounds: DEFAULT_MAX_ROUNDS,
            last_node: LastNodeGate::Gated,
        }
    }
}

impl SearchParams {
    pub fn with_lambdas(mut self, lambda_grid: Vec<f64>) -> Self {
        self.lambda_grid = lambda_grid;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "delta {} must lie in (0, 0.5]",
                self.delta
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} and beta {} must be non-negative",
                self.alpha, self.beta
            )));
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidArgument(format!("lambda {bad} is outside [0, 1]")));
        }
        if self.lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly ascending".into(),
            ));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Evenly spaced points from `start` to `end` inclusive. When the span is an
/// integer multiple of `step` the points are computed as `start + k * span / m`
/// so that decimal grids such as `0.3` come out correctly rounded.
pub fn grid_points(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::InvalidArgument(format!(
            "bad grid {start}:{end}:{step}"
        )));
    }
    let span = end - start;
    let ratio = span / step;
    let m = ratio.round();
    if (ratio - m).abs() < 1e-9 {
        let m = m as u64;
        if m == 0 {
            return Ok(vec![start]);
        }
        return Ok((0..=m)
            .map(|k| if k == m { end } else { start + (k as f64 * span) / m as f64 })
            .collect());
    }
    let mut points: Vec<f64> = (0..)
        .map(|k| start + k as f64 * step)
        .take_while(|&x| x < end)
        .collect();
    points.push(end);
    Ok(points)
}

/// Candidate thresholds `{0, delta, 2 delta, ..., 1}`.
pub fn threshold_grid(delta: f64) -> Result<Vec<f64>> {
    grid_points(0.0, 1.0, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub f: f64,
    pub cost_term: f64,
    pub perf_term_regularized: f64,
    /// Per-node regularizer.
    pub reg: Vec<f64>,
}

/// Regularizer of every node at preference `lambda`.
pub fn regularizers(trace: &TraceSet, lambda: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let strength = alpha * lambda + beta;
    trace
        .experts()
        .iter()
        .map(|e| (1.0 - strength * (1.0 - e.mean_perf)).max(0.0))
        .collect()
}

fn breakdown(trace: &TraceSet, lambda: f64, t: &Tally, params: &SearchParams) -> ObjectiveBreakdown {
    let experts = trace.experts();
    let cost_term = t.mean_cost_raw(experts) / Tally::cost_scale(experts);
    let reg = regularizers(trace, lambda, params.alpha, params.beta);
    let weighted: f64 = t.exit_metric.iter().zip(&reg).map(|(m, r)| m * r).sum();
    let perf_term_regularized = weighted / t.n_data as f64;
    ObjectiveBreakdown {
        f: combine(lambda, cost_term, perf_term_regularized),
        cost_term,
        perf_term_regularized,
        reg,
    }
}

/// The weighted objective from its two terms.
pub fn combine(lambda: f64, cost_term: f64, perf_term_regularized: f64) -> f64 {
    (1.0 - lambda) * cost_term + lambda * (1.0 - perf_term_regularized)
}

/// Objective of `config` at its own `lambda`.
pub fn objective(trace: &TraceSet, config: &Config, params: &SearchParams) -> Result<ObjectiveBreakdown> {
    let t = tally(trace, config)?;
    Ok(breakdown(trace, config.lambda, &t, params))
}

/// Which threshold of a node a coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// `t1`, valid for nodes `1..n`.
    Pre,
    /// `t2`, valid for nodes `0..n-1`.
    Post,
}

fn slot(config: &mut Config, node: usize, which: GateKind) -> Result<&mut f64> {
    let n = config.n_experts();
    let found = match which {
        GateKind::Post if node + 1 < n => config.t2.get_mut(node),
        GateKind::Pre if node >= 1 && node < n => config.t1.get_mut(node - 1),
        _ => None,
    };
    found.ok_or_else(|| {
        Error::InvalidArgument(format!("node {node} has no {which:?} gate in a {n}-expert cascade"))
    })
}

/// Scans every grid value of one threshold, all others fixed, at the
/// config's own `lambda`. Ties go to the smaller threshold.
pub fn minimize_1d(
    trace: &TraceSet,
    config: &Config,
    node: usize,
    which: GateKind,
    params: &SearchParams,
) -> Result<(f64, f64)> {
    let grid = threshold_grid(params.delta)?;
    let mut scratch = config.clone();
    slot(&mut scratch, node, which)?;
    let mut best: Option<(f64, f64)> = None;
    for &candidate in &grid {
        *slot(&mut scratch, node, which)? = candidate;
        let f = objective(trace, &scratch, params)?.f;
        if best.map_or(true, |(_, best_f)| f < best_f) {
            best = Some((candidate, f));
        }
    }
    Ok(best.expect("threshold grid is never empty"))
}

/// Result of one coordinate search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub config: Config,
    pub f: f64,
    /// Objective after initialization and after every adopted move.
    pub history: Vec<f64>,
    /// False if `max_rounds` stopped the search before convergence.
    pub converged: bool,
}

/// Coordinate search over the thresholds of one gate kind, starting from `start`.
pub fn coordinate_search(
    trace: &TraceSet,
    start: Config,
    which: GateKind,
    params: &SearchParams,
) -> Result<SearchOutcome> {
    params.validate()?;
    let n = trace.n_experts();
    start.validate(n)?;
    let nodes: Vec<usize> = match which {
        GateKind::Post => (0..n - 1).collect(),
        GateKind::Pre if start.last_node == LastNodeGate::AlwaysCompute => (1..n - 1).collect(),
        GateKind::Pre => (1..n).collect(),
    };

    let mut config = start;
    let mut f_min = objective(trace, &config, params)?.f;
    let mut history = vec![f_min];
    let mut converged = false;
    for _ in 0..params.max_rounds {
        let mut candidate = None;
        for &node in &nodes {
            let (t, f) = minimize_1d(trace, &config, node, which, params)?;
            if f < f_min {
                candidate = Some((node, t));
                f_min = f;
            }
        }
        match candidate {
            Some((node, t)) => {
                *slot(&mut config, node, which)? = t;
                history.push(f_min);
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!(
            "coordinate search at lambda {} hit max_rounds={} before converging",
            config.lambda,
            params.max_rounds
        );
    }
    Ok(SearchOutcome {
        config,
        f: f_min,
        history,
        converged,
    })
}

/// Post-expert thresholds for one preference, pre-expert thresholds at zero.
pub fn search_t2(trace: &TraceSet, lambda: f64, params: &SearchParams) -> Result<Config> {
    let start = Config::initial(lambda, trace.n_experts()).with_last_node(params.last_node);
    Ok(coordinate_search(trace, start, GateKind::Post, params)?.config)
}

/// Pre-expert thresholds for a fixed set of post-expert thresholds,
/// starting from all zeros.
pub fn search_t1(trace: &TraceSet, config_with_t2: &Config, params: &SearchParams) -> Result<Config> {
    let mut start = config_with_t2.clone();
    start.t1.iter_mut().for_each(|t| *t = 0.0);
    Ok(coordinate_search(trace, start, GateKind::Pre, params)?.config)
}

/// Both stages for one preference.
pub fn search_lambda(trace: &TraceSet, lambda: f64, params: &SearchParams) -> Result<Config> {
    let with_t2 = search_t2(trace, lambda, params)?;
    search_t1(trace, &with_t2, params)
}

/// One searched configuration per preference in the grid, ascending, each
/// with its report on `trace`.
pub fn search_collection(trace: &TraceSet, params: &SearchParams) -> Result<ConfigCollection> {
    params.validate()?;
    let entries = params
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let config = search_lambda(trace, lambda, params)?;
            CollectionEntry::evaluated(trace, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfigCollection::new(trace, params.clone(), entries))
}
