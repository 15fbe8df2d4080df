//! Streaming router and cost-budget controller.
//!
//! The router applies the currently active configuration of a collection to
//! samples as they arrive. The optional [`BudgetController`] watches the
//! per-sample cost over tumbling windows and moves one rung down (cheaper) or
//! up (more accurate) the collection whenever the window mean leaves the
//! hysteresis band around the target. Switches only take effect between
//! samples.

use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::configset::ConfigCollection;
use crate::error::{Error, Result};
use crate::routing::{route_with_costs, Config, RouteOutcome};
use crate::trace::{parse_header, parse_sample, SampleRecord, SampleView};

pub const DEFAULT_WINDOW: usize = 256;
pub const DEFAULT_HYSTERESIS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetController {
    target_cost: f64,
    window: usize,
    hysteresis: f64,
    current_index: usize,
    n_rungs: usize,
    pending: Vec<f64>,
}

impl BudgetController {
    pub fn new(
        target_cost: f64,
        window: usize,
        hysteresis: f64,
        start_index: usize,
        n_rungs: usize,
    ) -> Result<Self> {
        if !(target_cost > 0.0 && target_cost.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "target cost {target_cost} must be positive"
            )));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        if !(hysteresis >= 0.0 && hysteresis.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hysteresis {hysteresis} must be non-negative"
            )));
        }
        if start_index >= n_rungs {
            return Err(Error::InvalidArgument(format!(
                "start index {start_index} outside a {n_rungs}-rung collection"
            )));
        }
        Ok(BudgetController {
            target_cost,
            window,
            hysteresis,
            current_index: start_index,
            n_rungs,
            pending: Vec::with_capacity(window),
        })
    }

    pub fn target_cost(&self) -> f64 {
        self.target_cost
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hysteresis(&self) -> f64 {
        self.hysteresis
    }

    pub fn current_index(&self) -> usize {
        self.current_index
    }

    /// True if `mean` lies inside `target * (1 ± hysteresis)`.
    pub fn in_band(&self, mean: f64) -> bool {
        mean <= self.target_cost * (1.0 + self.hysteresis)
            && mean >= self.target_cost * (1.0 - self.hysteresis)
    }

    /// Applies one window's observed mean cost and returns the new index.
    pub fn step(&mut self, observed_mean: f64) -> usize {
        if observed_mean > self.target_cost * (1.0 + self.hysteresis) {
            self.current_index = self.current_index.saturating_sub(1);
        } else if observed_mean < self.target_cost * (1.0 - self.hysteresis) {
            self.current_index = (self.current_index + 1).min(self.n_rungs - 1);
        }
        self.current_index
    }

    /// Records one sample's cost. When this completes a window, steps the
    /// controller and returns the window mean.
    pub fn observe(&mut self, cost: f64) -> Option<f64> {
        self.pending.push(cost);
        if self.pending.len() < self.window {
            return None;
        }
        let mean = self.pending.iter().sum::<f64>() / self.window as f64;
        self.pending.clear();
        self.step(mean);
        Some(mean)
    }
}

pub fn controller_step(controller: &mut BudgetController, observed_mean: f64) -> usize {
    controller.step(observed_mean)
}

/// The configuration routing calls currently use.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveConfig {
    pub index: usize,
    pub config: Config,
}

/// Single-writer, many-reader cell holding the active configuration.
/// Readers take a whole snapshot, so a switch is never observed half-applied.
#[derive(Debug)]
pub struct ConfigCell {
    current: RwLock<Arc<ActiveConfig>>,
}

impl ConfigCell {
    pub fn new(active: ActiveConfig) -> Self {
        ConfigCell {
            current: RwLock::new(Arc::new(active)),
        }
    }

    pub fn load(&self) -> Arc<ActiveConfig> {
        Arc::clone(&self.current.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn publish(&self, active: ActiveConfig) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(active);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamOutcome {
    pub sample_id: String,
    pub outcome: RouteOutcome,
    pub lambda: f64,
    pub index: usize,
}

/// Outcome line of the streaming interface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeLine<'a> {
    pub id: &'a str,
    pub exit: usize,
    pub cost: f64,
    pub lambda: f64,
}

impl StreamOutcome {
    pub fn line(&self) -> OutcomeLine<'_> {
        OutcomeLine {
            id: &self.sample_id,
            exit: self.outcome.exit_node,
            cost: self.outcome.cost,
            lambda: self.lambda,
        }
    }
}

pub struct StreamRouter {
    collection: Arc<ConfigCollection>,
    costs: Vec<f64>,
    active: Arc<ConfigCell>,
    controller: Option<BudgetController>,
}

impl StreamRouter {
    /// Starts at the entry nearest to `initial_lambda` (ties to the lower one).
    pub fn new(collection: ConfigCollection, initial_lambda: f64) -> Result<Self> {
        let index = collection
            .nearest_index(initial_lambda)
            .ok_or_else(|| Error::InvalidCollection("collection has no entries".into()))?;
        let costs = collection.costs();
        let active = ActiveConfig {
            index,
            config: collection.entries[index].config.clone(),
        };
        Ok(StreamRouter {
            collection: Arc::new(collection),
            costs,
            active: Arc::new(ConfigCell::new(active)),
            controller: None,
        })
    }

    pub fn with_budget(mut self, target_cost: f64, window: usize, hysteresis: f64) -> Result<Self> {
        let start = self.active.load().index;
        self.controller = Some(BudgetController::new(
            target_cost,
            window,
            hysteresis,
            start,
            self.collection.len(),
        )?);
        Ok(self)
    }

    /// Router with a budget controller that starts from the most expensive
    /// entry whose calibration cost fits `target_cost` (the cheapest entry if
    /// none does).
    pub fn for_budget(
        collection: ConfigCollection,
        target_cost: f64,
        window: usize,
        hysteresis: f64,
    ) -> Result<Self> {
        let start = collection
            .entries
            .iter()
            .rposition(|e| e.report.mean_cost_raw <= target_cost)
            .unwrap_or(0);
        let lambda = collection
            .entries
            .get(start)
            .map(|e| e.lambda())
            .ok_or_else(|| Error::InvalidCollection("collection has no entries".into()))?;
        StreamRouter::new(collection, lambda)?.with_budget(target_cost, window, hysteresis)
    }

    pub fn collection(&self) -> &ConfigCollection {
        &self.collection
    }

    pub fn controller(&self) -> Option<&BudgetController> {
        self.controller.as_ref()
    }

    /// Shared handle to the active configuration, for routing from other threads.
    pub fn handle(&self) -> Arc<ConfigCell> {
        Arc::clone(&self.active)
    }

    pub fn current(&self) -> Arc<ActiveConfig> {
        self.active.load()
    }

    fn switch_to(&mut self, index: usize) {
        if index != self.active.load().index {
            self.active.publish(ActiveConfig {
                index,
                config: self.collection.entries[index].config.clone(),
            });
        }
    }

    /// Switches to the entry nearest `lambda` before the next sample.
    pub fn set_lambda(&mut self, lambda: f64) {
        if let Some(index) = self.collection.nearest_index(lambda) {
            self.switch_to(index);
            if let Some(c) = self.controller.as_mut() {
                c.current_index = index;
            }
        }
    }

    pub fn route<'a>(&mut self, sample: impl Into<SampleView<'a>>) -> Result<StreamOutcome> {
        let sample = sample.into();
        let active = self.active.load();
        let outcome = route_with_costs(sample, &self.costs, &active.config)?;
        let routed = StreamOutcome {
            sample_id: sample.sample_id.to_owned(),
            lambda: active.config.lambda,
            index: active.index,
            outcome,
        };
        if let Some(controller) = self.controller.as_mut() {
            if controller.observe(routed.outcome.cost).is_some() {
                let next = controller.current_index();
                self.switch_to(next);
            }
        }
        Ok(routed)
    }
}

/// Routes a finite stream under a fixed preference.
pub fn route_stream<I>(samples: I, collection: &ConfigCollection, initial_lambda: f64) -> Result<Vec<StreamOutcome>>
where
    I: IntoIterator<Item = SampleRecord>,
{
    let mut router = StreamRouter::new(collection.clone(), initial_lambda)?;
    samples.into_iter().map(|s| router.route(&s)).collect()
}

/// Routes trace-format sample lines from `input`, writing one outcome line per
/// sample to `output`. An optional header line is accepted and must declare
/// the same experts as the collection. Returns the number of samples routed.
pub fn route_jsonl<R: BufRead, W: Write>(
    router: &mut StreamRouter,
    input: R,
    mut output: W,
) -> Result<usize> {
    let n = router.costs.len();
    let mut routed = 0;
    for (k, line) in input.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(experts) = parse_header(&line, line_no)? {
            let expected = &router.collection.experts;
            let same = experts.len() == expected.len()
                && experts
                    .iter()
                    .zip(expected)
                    .all(|(a, b)| a.name == b.name && a.cost == b.cost);
            if !same {
                return Err(Error::InvalidCollection(format!(
                    "line {line_no}: stream header experts differ from the collection's"
                )));
            }
            continue;
        }
        let sample = parse_sample(&line, line_no)?;
        sample.validate(n)?;
        let outcome = router.route(&sample)?;
        serde_json::to_writer(&mut output, &outcome.line())?;
        output
            .write_all(b"\n")
            .map_err(|e| Error::io("<stdout>", e))?;
        routed += 1;
    }
    output.flush().map_err(|e| Error::io("<stdout>", e))?;
    Ok(routed)
}
