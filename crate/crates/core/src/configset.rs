//! The deployable configuration collection and its post-processing:
//! Pareto discard, interpolation between adjacent preferences and the
//! confidence/cost monotonicity filter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{evaluate, Config, EvalReport};
use crate::search::SearchParams;
use crate::trace::{ExpertDecl, TraceSet};

pub const COLLECTION_FORMAT_VERSION: u64 = 1;

/// A configuration together with its report on the calibration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionEntry {
    #[serde(flatten)]
    pub config: Config,
    pub report: EvalReport,
}

impl CollectionEntry {
    pub fn evaluated(trace: &TraceSet, config: Config) -> Result<Self> {
        let report = evaluate(trace, &config)?;
        Ok(CollectionEntry { config, report })
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }
}

/// Ascending-`lambda` set of configurations, all evaluated on the same
/// calibration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigCollection {
    /// Content hash of the calibration trace.
    pub trace_id: String,
    /// Expert pool of the calibration trace, in cascade order.
    pub experts: Vec<ExpertDecl>,
    pub params: SearchParams,
    /// Interpolation step, once the collection has been interpolated.
    pub interp_step: Option<f64>,
    pub entries: Vec<CollectionEntry>,
}

#[derive(Serialize, Deserialize)]
struct CollectionFile {
    version: u64,
    trace_id: String,
    experts: Vec<ExpertDecl>,
    params: SearchParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interp_step: Option<f64>,
    entries: Vec<CollectionEntry>,
}

impl ConfigCollection {
    pub fn new(trace: &TraceSet, params: SearchParams, entries: Vec<CollectionEntry>) -> Self {
        ConfigCollection {
            trace_id: trace.trace_id(),
            experts: trace.decls(),
            params,
            interp_step: None,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.entries.iter().map(CollectionEntry::lambda).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.experts.iter().map(|e| e.cost).collect()
    }

    fn with_entries(&self, entries: Vec<CollectionEntry>) -> Self {
        ConfigCollection {
            entries,
            ..self.clone()
        }
    }

    /// Index of the entry whose `lambda` is nearest; ties go to the lower `lambda`.
    pub fn nearest_index(&self, lambda: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = (e.lambda() - lambda).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Fails unless `trace` is the calibration trace of this collection.
    pub fn check_trace(&self, trace: &TraceSet) -> Result<()> {
        let id = trace.trace_id();
        if id != self.trace_id {
            return Err(Error::InvalidCollection(format!(
                "collection was calibrated on {} but the supplied trace is {id}",
                self.trace_id
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.experts.len();
        if n < 2 {
            return Err(Error::TooFewExperts(n));
        }
        if self.experts.windows(2).any(|w| !(w[0].cost < w[1].cost)) || self.experts.iter().any(|e| !(e.cost > 0.0)) {
            return Err(Error::InvalidCollection(
                "expert costs must be positive and strictly ascending".into(),
            ));
        }
        let lambdas = self.lambdas();
        if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidCollection(
                "entries must be strictly ascending in lambda".into(),
            ));
        }
        let mut n_data = None;
        for e in &self.entries {
            e.config.validate(n)?;
            let r = &e.report;
            if r.n_exit.len() != n || r.n_comp.len() != n {
                return Err(Error::InvalidCollection(format!(
                    "report at lambda {} does not cover {n} experts",
                    e.lambda()
                )));
            }
            if r.n_exit.iter().zip(&r.n_comp).any(|(x, c)| x > c) {
                return Err(Error::InvalidCollection(format!(
                    "report at lambda {} exits more samples than it computes",
                    e.lambda()
                )));
            }
            let total: u64 = r.n_exit.iter().sum();
            if *n_data.get_or_insert(total) != total {
                return Err(Error::InvalidCollection(
                    "reports disagree on the calibration sample count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, mut out: W) -> Result<()> {
        let file = CollectionFile {
            version: COLLECTION_FORMAT_VERSION,
            trace_id: self.trace_id.clone(),
            experts: self.experts.clone(),
            params: self.params.clone(),
            interp_step: self.interp_step,
            entries: self.entries.clone(),
        };
        serde_json::to_writer_pretty(&mut out, &file)?;
        out.write_all(b"\n").map_err(serde_json::Error::io)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(reader)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidCollection("missing integer `version`".into()))?;
        if version != COLLECTION_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: COLLECTION_FORMAT_VERSION,
            });
        }
        let file: CollectionFile = serde_json::from_value(value)
            .map_err(|e| Error::InvalidCollection(e.to_string()))?;
        let collection = ConfigCollection {
            trace_id: file.trace_id,
            experts: file.experts,
            params: file.params,
            interp_step: file.interp_step,
            entries: file.entries,
        };
        collection.validate()?;
        Ok(collection)
    }
}

pub fn save_collection(collection: &ConfigCollection, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    collection.to_writer(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_collection(path: impl AsRef<Path>) -> Result<ConfigCollection> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ConfigCollection::from_reader(BufReader::new(file))
}

fn dominates(a: &EvalReport, b: &EvalReport) -> bool {
    a.mean_cost_raw < b.mean_cost_raw && a.perf > b.perf
}

/// Drops every entry that another entry beats on both cost and performance.
pub fn pareto_filter(collection: &ConfigCollection) -> ConfigCollection {
    let entries = &collection.entries;
    let kept = entries
        .iter()
        .filter(|e| !entries.iter().any(|o| dominates(&o.report, &e.report)))
        .cloned()
        .collect();
    collection.with_entries(kept)
}

/// Multiples of `step` strictly between `lo` and `hi`.
fn steps_between(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let inverse = 1.0 / step;
    let exact = (inverse - inverse.round()).abs() < 1e-9;
    let at = |k: i64| {
        if exact {
            k as f64 / inverse.round()
        } else {
            k as f64 * step
        }
    };
    let first = (lo / step + 1e-9).floor() as i64 + 1;
    let last = (hi / step - 1e-9).ceil() as i64 - 1;
    (first..=last).map(at).filter(|&l| l > lo && l < hi).collect()
}

fn lerp_thresholds(a: &[f64], b: &[f64], w: f64, keep_disabled: bool) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&ta, &tb)| {
            if ta == tb {
                return ta;
            }
            let t = (ta + w * (tb - ta)).clamp(ta.min(tb), ta.max(tb));
            if keep_disabled && t == 1.0 {
                // only nodes disabled at both ends stay disabled
                1.0f64.next_down()
            } else {
                t
            }
        })
        .collect()
}

/// Linear interpolation of both threshold vectors at `lambda` between two
/// neighbouring configurations.
pub fn interpolate_config(left: &Config, right: &Config, lambda: f64) -> Config {
    let span = right.lambda - left.lambda;
    let w = (lambda - left.lambda) / span;
    Config {
        lambda,
        t1: lerp_thresholds(&left.t1, &right.t1, w, false),
        t2: lerp_thresholds(&left.t2, &right.t2, w, true),
        last_node: left.last_node,
    }
}

/// Inserts interpolated configurations on the `step` grid between every pair
/// of adjacent entries and evaluates them on the calibration trace.
pub fn interpolate(collection: &ConfigCollection, step: f64, trace: &TraceSet) -> Result<ConfigCollection> {
    let entries = &collection.entries;
    if entries.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs at least 2 entries, found {}",
            entries.len()
        )));
    }
    let min_gap = entries
        .windows(2)
        .map(|w| w[1].lambda() - w[0].lambda())
        .fold(f64::INFINITY, f64::min);
    if !(step > 0.0 && step < min_gap) {
        return Err(Error::InvalidArgument(format!(
            "interpolation step {step} must lie in (0, {min_gap})"
        )));
    }
    collection.check_trace(trace)?;
    if entries.windows(2).any(|w| w[0].config.last_node != w[1].config.last_node) {
        return Err(Error::InvalidCollection(
            "entries disagree on last-node gating".into(),
        ));
    }

    enum Slot {
        Original(CollectionEntry),
        Interpolated(Config),
    }
    let mut slots = Vec::new();
    for pair in entries.windows(2) {
        let (left, right) = (&pair[0].config, &pair[1].config);
        slots.push(Slot::Original(pair[0].clone()));
        slots.extend(
            steps_between(left.lambda, right.lambda, step)
                .into_iter()
                .map(|l| Slot::Interpolated(interpolate_config(left, right, l))),
        );
    }
    slots.push(Slot::Original(entries[entries.len() - 1].clone()));

    let evaluated = slots
        .into_par_iter()
        .map(|slot| match slot {
            Slot::Original(entry) => Ok(entry),
            Slot::Interpolated(config) => CollectionEntry::evaluated(trace, config),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut result = collection.with_entries(evaluated);
    result.interp_step = Some(step);
    Ok(result)
}

/// Keeps an entry only when its mean exit confidence and mean cost both
/// strictly exceed those of the last kept entry.
pub fn monotonic_filter(collection: &ConfigCollection) -> ConfigCollection {
    let mut kept: Vec<CollectionEntry> = Vec::new();
    for e in &collection.entries {
        let admit = kept.last().map_or(true, |last| {
            last.report.mean_exit_conf < e.report.mean_exit_conf
                && last.report.mean_cost_raw < e.report.mean_cost_raw
        });
        if admit {
            kept.push(e.clone());
        }
    }
    collection.with_entries(kept)
}

/// Pareto filter, interpolation (skipped with a warning when fewer than two
/// entries survive) and monotonicity filter, in that order.
pub fn postprocess(collection: &ConfigCollection, trace: &TraceSet, step: f64) -> Result<ConfigCollection> {
    collection.check_trace(trace)?;
    let front = pareto_filter(collection);
    let dense = if front.len() >= 2 {
        interpolate(&front, step, trace)?
    } else {
        log::warn!(
            "only {} configuration(s) survive the Pareto filter; skipping interpolation",
            front.len()
        );
        front
    };
    Ok(monotonic_filter(&dense))
}
