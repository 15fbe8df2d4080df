//! Trace substrate: the expert pool plus per-sample confidence and metric logs.
//!
//! A trace replaces live inference. Every routing decision the cascade could
//! make is answerable from the recorded `(confidence, metric)` pair of each
//! expert on each sample, so search and evaluation never run a model.
//!
//! On disk a trace is JSONL: one header line naming the experts in cascade
//! order, then one line per sample.
//!
//! ```text
//! {"type":"header","version":1,"experts":[{"name":"small","cost":1.0},{"name":"large","cost":4.0}]}
//! {"id":"s1","conf":[0.93,0.99],"metric":[1.0,1.0]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TRACE_FORMAT_VERSION: u64 = 1;

/// Tolerance between a declared `mean_perf` and the recomputed column mean.
pub const MEAN_PERF_TOLERANCE: f64 = 1e-12;

/// One expert of the cascade, as it appears inside a validated [`TraceSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertMeta {
    pub index: usize,
    pub name: String,
    /// Cost of computing this expert on one sample, in caller-chosen units.
    pub cost: f64,
    /// Mean of the expert's per-sample metric over the whole trace.
    pub mean_perf: f64,
}

/// Expert entry of a trace header. `mean_perf` is optional and, when given,
/// is checked against the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDecl {
    pub name: String,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_perf: Option<f64>,
}

impl ExpertDecl {
    pub fn new(name: impl Into<String>, cost: f64) -> Self {
        ExpertDecl {
            name: name.into(),
            cost,
            mean_perf: None,
        }
    }
}

/// Owned per-sample record, the unit of the streaming interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub conf: Vec<f64>,
    pub metric: Vec<f64>,
}

impl SampleRecord {
    pub fn new(sample_id: impl Into<String>, conf: Vec<f64>, metric: Vec<f64>) -> Self {
        SampleRecord {
            sample_id: sample_id.into(),
            conf,
            metric,
        }
    }

    pub fn view(&self) -> SampleView<'_> {
        SampleView {
            sample_id: &self.sample_id,
            conf: &self.conf,
            metric: &self.metric,
        }
    }

    /// Checks length and range invariants against an expert count.
    pub fn validate(&self, n_experts: usize) -> Result<()> {
        for (field, values) in [("conf", &self.conf), ("metric", &self.metric)] {
            if values.len() != n_experts {
                return Err(Error::ExpertCountMismatch {
                    sample_id: self.sample_id.clone(),
                    field,
                    expected: n_experts,
                    found: values.len(),
                });
            }
            if let Some((index, &value)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::OutOfRange {
                    sample_id: self.sample_id.clone(),
                    field,
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub sample_id: &'a str,
    pub conf: &'a [f64],
    pub metric: &'a [f64],
}

impl<'a> From<&'a SampleRecord> for SampleView<'a> {
    fn from(record: &'a SampleRecord) -> Self {
        record.view()
    }
}

/// Immutable, validated trace. Confidences and metrics are stored row-major
/// (`sample * n_experts + expert`).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    experts: Vec<ExpertMeta>,
    ids: Vec<String>,
    conf: Vec<f64>,
    metric: Vec<f64>,
}

impl TraceSet {
    pub fn new(experts: Vec<ExpertDecl>, samples: Vec<SampleRecord>) -> Result<Self> {
        let n_exp = experts.len();
        if n_exp < 2 {
            return Err(Error::TooFewExperts(n_exp));
        }
        validate_costs(&experts)?;
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }

        let mut ids = Vec::with_capacity(samples.len());
        let mut conf = Vec::with_capacity(samples.len() * n_exp);
        let mut metric = Vec::with_capacity(samples.len() * n_exp);
        for record in samples {
            record.validate(n_exp)?;
            conf.extend_from_slice(&record.conf);
            metric.extend_from_slice(&record.metric);
            ids.push(record.sample_id);
        }

        let n_data = ids.len();
        let mut sums = vec![0.0; n_exp];
        for row in metric.chunks_exact(n_exp) {
            for (sum, m) in sums.iter_mut().zip(row) {
                *sum += m;
            }
        }

        let mut metas = Vec::with_capacity(n_exp);
        for (index, (decl, sum)) in experts.into_iter().zip(sums).enumerate() {
            let mean_perf = sum / n_data as f64;
            if let Some(declared) = decl.mean_perf {
                if !((declared - mean_perf).abs() <= MEAN_PERF_TOLERANCE) {
                    return Err(Error::MeanPerfMismatch {
                        name: decl.name,
                        declared,
                        computed: mean_perf,
                    });
                }
            }
            metas.push(ExpertMeta {
                index,
                name: decl.name,
                cost: decl.cost,
                mean_perf,
            });
        }

        Ok(TraceSet {
            experts: metas,
            ids,
            conf,
            metric,
        })
    }

    pub fn experts(&self) -> &[ExpertMeta] {
        &self.experts
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.experts.iter().map(|e| e.cost)
    }

    pub fn sample(&self, index: usize) -> SampleView<'_> {
        let n = self.n_experts();
        let span = index * n..(index + 1) * n;
        SampleView {
            sample_id: &self.ids[index],
            conf: &self.conf[span.clone()],
            metric: &self.metric[span],
        }
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = SampleView<'_>> + '_ {
        (0..self.n_samples()).map(move |i| self.sample(i))
    }

    /// Row-major confidence matrix.
    pub fn conf_matrix(&self) -> &[f64] {
        &self.conf
    }

    /// Row-major metric matrix.
    pub fn metric_matrix(&self) -> &[f64] {
        &self.metric
    }

    pub fn to_records(&self) -> Vec<SampleRecord> {
        self.samples()
            .map(|s| SampleRecord::new(s.sample_id, s.conf.to_vec(), s.metric.to_vec()))
            .collect()
    }

    pub fn decls(&self) -> Vec<ExpertDecl> {
        self.experts
            .iter()
            .map(|e| ExpertDecl::new(e.name.clone(), e.cost))
            .collect()
    }

    /// Content hash of the canonical serialization, used to tie a
    /// configuration collection to the trace it was calibrated on.
    pub fn trace_id(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        write_trace_to(self, &mut buf).expect("writing to a Vec cannot fail");
        hasher.update(&buf);
        format!("sha256:{}", hex::encode(hasher.finalize()))
    }
}

fn validate_costs(experts: &[ExpertDecl]) -> Result<()> {
    for (index, e) in experts.iter().enumerate() {
        if !(e.cost.is_finite() && e.cost > 0.0) {
            return Err(Error::InvalidCost {
                name: e.name.clone(),
                index,
                cost: e.cost,
            });
        }
    }
    for pair in experts.windows(2) {
        if !(pair[0].cost < pair[1].cost) {
            return Err(Error::CostOrder {
                prev: pair[0].name.clone(),
                prev_cost: pair[0].cost,
                next: pair[1].name.clone(),
                next_cost: pair[1].cost,
            });
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "type")]
    kind: String,
    version: u64,
    experts: Vec<ExpertDecl>,
}

/// Parses a trace header line. Returns `None` if the line is not a header.
pub(crate) fn parse_header(line: &str, line_no: usize) -> Result<Option<Vec<ExpertDecl>>> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    if value.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Ok(None);
    }
    let header: HeaderLine = serde_json::from_value(value).map_err(|e| Error::Malformed {
        line: line_no,
        message: format!("bad header: {e}"),
    })?;
    if header.version != TRACE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.version,
            supported: TRACE_FORMAT_VERSION,
        });
    }
    Ok(Some(header.experts))
}

pub(crate) fn parse_sample(line: &str, line_no: usize) -> Result<SampleRecord> {
    serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads and validates a trace from any buffered reader.
pub fn read_trace<R: BufRead>(reader: R) -> Result<TraceSet> {
    let mut lines = reader.lines().enumerate();
    let mut experts = None;
    for (i, line) in lines.by_ref() {
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_header(&line, i + 1)? {
            Some(decls) => {
                experts = Some(decls);
                break;
            }
            None => {
                return Err(Error::Malformed {
                    line: i + 1,
                    message: "expected the header line first".into(),
                })
            }
        }
    }
    let experts = experts.ok_or(Error::Malformed {
        line: 1,
        message: "missing header line".into(),
    })?;
    if experts.len() < 2 {
        return Err(Error::TooFewExperts(experts.len()));
    }
    validate_costs(&experts)?;

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_sample(&line, i + 1)?;
        record.validate(experts.len())?;
        samples.push(record);
    }
    TraceSet::new(experts, samples)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file))
}

/// Writes the canonical form: header without `mean_perf`, then one line per sample.
pub fn write_trace_to<W: Write>(trace: &TraceSet, mut out: W) -> std::io::Result<()> {
    let header = HeaderLine {
        kind: "header".into(),
        version: TRACE_FORMAT_VERSION,
        experts: trace.decls(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in trace.samples() {
        write_sample_line(&mut out, s)?;
    }
    out.flush()
}

pub(crate) fn write_sample_line<W: Write>(out: &mut W, s: SampleView<'_>) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        conf: &'a [f64],
        metric: &'a [f64],
    }
    serde_json::to_writer(
        &mut *out,
        &Line {
            id: s.sample_id,
            conf: s.conf,
            metric: s.metric,
        },
    )?;
    out.write_all(b"\n")
}

pub fn write_trace(trace: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(trace, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Per-expert summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertStats {
    pub index: usize,
    pub name: String,
    pub cost: f64,
    pub mean_perf: f64,
    /// Confidence counts over equal-width buckets covering `[0, 1]`; the last
    /// bucket is closed on the right.
    pub conf_histogram: Vec<u64>,
}

pub const DEFAULT_HISTOGRAM_BUCKETS: usize = 10;

pub fn expert_stats(trace: &TraceSet) -> Vec<ExpertStats> {
    expert_stats_with_buckets(trace, DEFAULT_HISTOGRAM_BUCKETS)
}

pub fn expert_stats_with_buckets(trace: &TraceSet, buckets: usize) -> Vec<ExpertStats> {
    let buckets = buckets.max(1);
    let mut stats: Vec<ExpertStats> = trace
        .experts()
        .iter()
        .map(|e| ExpertStats {
            index: e.index,
            name: e.name.clone(),
            cost: e.cost,
            mean_perf: e.mean_perf,
            conf_histogram: vec![0; buckets],
        })
        .collect();
    for s in trace.samples() {
        for (stat, &c) in stats.iter_mut().zip(s.conf) {
            let bucket = ((c * buckets as f64) as usize).min(buckets - 1);
            stat.conf_histogram[bucket] += 1;
        }
    }
    stats
}

/// The shared four-sample, three-expert fixture used across the test-suite
/// and examples.
pub fn fixture_t3() -> TraceSet {
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
    .expect("fixture is valid")
}
