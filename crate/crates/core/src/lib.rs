//! Trace-driven construction and execution of confidence-gated expert cascades.
//!
//! A cascade runs a pool of experts ordered by cost. Each node has a
//! pre-gate (skip this expert if the last computed confidence is too low)
//! and a post-gate (stop here if this expert is confident enough). Given a
//! trace of per-sample confidences and metrics, the [`search`] module finds
//! one threshold configuration per cost/quality preference, [`configset`]
//! cleans the resulting collection, and [`runtime`] applies it to a stream
//! with an optional cost-budget controller. [`gate`] trains a ranking gate
//! for experts that have no native confidence.

pub mod cli;
pub mod configset;
pub mod error;
pub mod gate;
pub mod routing;
pub mod runtime;
pub mod search;
pub mod synth;
pub mod trace;

pub use configset::{
    interpolate, load_collection, monotonic_filter, pareto_filter, postprocess, save_collection,
    CollectionEntry, ConfigCollection,
};
pub use error::{Error, Result};
pub use gate::{confidence, train, FeatureRow, GateModel, TrainCfg};
pub use routing::{evaluate, route_all, route_sample, Config, EvalReport, LastNodeGate, RouteOutcome};
pub use runtime::{BudgetController, StreamRouter};
pub use search::{objective, search_collection, search_lambda, SearchParams};
pub use synth::synth_trace;
pub use trace::{load_trace, read_trace, write_trace, ExpertDecl, SampleRecord, TraceSet};
