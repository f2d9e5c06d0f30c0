//! File formats exchanged between pipeline stages.
//!
//! All tables are delimited text with a header row. Floats are written in
//! shortest round-trip form, so reading a file back recovers the exact
//! values.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use peerbench_core::panel::PanelDataset;
use peerbench_core::synth::{PanelTruth, TrajTruth};
use peerbench_core::trajtest::{HistoryStatus, PredictiveBands, Trajectory, TrajectoryResult};
use peerbench_core::treebench::{BenchmarkAccumulator, BenchmarkTable, RetainedDraw, TreeSamplerState};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::panel_io::fmt_f64;

fn writer<W: Write>(out: W, delimiter: u8) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(delimiter).from_writer(out)
}

fn reader<R: Read>(input: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_reader(input)
}

fn parse_f64(rec: &csv::StringRecord, j: usize, what: &str) -> Result<f64> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let c = rec.get(j).unwrap_or("").trim();
    c.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::data(format!("line {line}: {what} is not a finite number: `{c}`")))
}

fn parse_i64(rec: &csv::StringRecord, j: usize, what: &str) -> Result<i64> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let c = rec.get(j).unwrap_or("").trim();
    c.parse::<i64>().map_err(|_| CliError::data(format!("line {line}: {what} is not an integer: `{c}`")))
}

fn require_columns(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| CliError::data(format!("column `{n}` not found in header")))
        })
        .collect()
}

/// Normal scores with their built (all-numeric) covariates: the output of
/// `transform` and the input of `fit-tree`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoresTable {
    pub subjects: Vec<String>,
    pub times: Vec<i64>,
    pub raw: Vec<f64>,
    pub z: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// Row-major design matrix.
    pub x: Vec<f64>,
}

impl ScoresTable {
    pub fn new(built: &PanelDataset, z: Vec<f64>) -> Result<Self> {
        Ok(ScoresTable {
            subjects: built.observations().iter().map(|o| o.subject.clone()).collect(),
            times: built.observations().iter().map(|o| o.time).collect(),
            raw: built.scores(),
            z,
            covariate_names: built.covariate_names().to_vec(),
            x: built.design_matrix()?,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn write<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let p = self.covariate_names.len();
        let mut w = writer(out, delimiter);
        let mut h = vec!["subject", "time", "raw", "z"];
        h.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&h)?;
        for i in 0..self.len() {
            let mut rec = vec![self.subjects[i].clone(), self.times[i].to_string(), fmt_f64(self.raw[i]), fmt_f64(self.z[i])];
            rec.extend(self.x[i * p..(i + 1) * p].iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Covariates are the columns after `z`.
    pub fn read<R: Read>(input: R, delimiter: u8) -> Result<Self> {
        let mut r = reader(input, delimiter);
        let headers = r.headers()?.clone();
        let idx = require_columns(&headers, &["subject", "time", "raw", "z"])?;
        let first_cov = idx[3] + 1;
        let covariate_names: Vec<String> = headers.iter().skip(first_cov).map(|s| s.trim().to_string()).collect();
        let mut t = ScoresTable {
            subjects: vec![],
            times: vec![],
            raw: vec![],
            z: vec![],
            covariate_names,
            x: vec![],
        };
        for rec in r.records() {
            let rec = rec?;
            t.subjects.push(rec.get(idx[0]).unwrap_or("").trim().to_string());
            t.times.push(parse_i64(&rec, idx[1], "time")?);
            t.raw.push(parse_f64(&rec, idx[2], "raw")?);
            t.z.push(parse_f64(&rec, idx[3], "z")?);
            for (k, name) in t.covariate_names.iter().enumerate() {
                t.x.push(parse_f64(&rec, first_cov + k, name)?);
            }
        }
        if t.is_empty() {
            return Err(CliError::data("scores table has no rows"));
        }
        Ok(t)
    }
}

/// Writes the benchmark table keyed by subject and time.
pub fn write_benchmark<W: Write>(out: W, delimiter: u8, scores: &ScoresTable, table: &BenchmarkTable) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record([
        "subject",
        "time",
        "z",
        "benchmark",
        "common_scale",
        "pred_mean",
        "pred_lower",
        "pred_upper",
    ])?;
    for (i, r) in table.rows.iter().enumerate() {
        w.write_record([
            scores.subjects[i].clone(),
            scores.times[i].to_string(),
            fmt_f64(scores.z[i]),
            fmt_f64(r.benchmark),
            fmt_f64(r.common_scale),
            fmt_f64(r.pred_mean),
            fmt_f64(r.pred_lower),
            fmt_f64(r.pred_upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFileRow {
    pub subject: String,
    pub time: i64,
    pub z: f64,
    pub benchmark: f64,
    pub common_scale: f64,
    pub pred_lower: f64,
    pub pred_upper: f64,
}

pub fn read_benchmark<R: Read>(input: R, delimiter: u8) -> Result<Vec<BenchmarkFileRow>> {
    let mut r = reader(input, delimiter);
    let headers = r.headers()?.clone();
    let idx = require_columns(
        &headers,
        &["subject", "time", "z", "benchmark", "common_scale", "pred_lower", "pred_upper"],
    )?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(BenchmarkFileRow {
            subject: rec.get(idx[0]).unwrap_or("").trim().to_string(),
            time: parse_i64(&rec, idx[1], "time")?,
            z: parse_f64(&rec, idx[2], "z")?,
            benchmark: parse_f64(&rec, idx[3], "benchmark")?,
            common_scale: parse_f64(&rec, idx[4], "common_scale")?,
            pred_lower: parse_f64(&rec, idx[5], "pred_lower")?,
            pred_upper: parse_f64(&rec, idx[6], "pred_upper")?,
        });
    }
    Ok(rows)
}

/// Groups `(subject, time, value)` rows into trajectories sorted by
/// subject and time. Repeated `(subject, time)` pairs are an error.
pub fn read_trajectories<R: Read>(input: R, delimiter: u8, value_column: &str) -> Result<Vec<Trajectory>> {
    let mut r = reader(input, delimiter);
    let headers = r.headers()?.clone();
    let idx = require_columns(&headers, &["subject", "time", value_column])?;
    let mut by_subject: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let s = rec.get(idx[0]).unwrap_or("").trim().to_string();
        if s.is_empty() {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            return Err(CliError::data(format!("line {line}: empty subject id")));
        }
        let t = parse_i64(&rec, idx[1], "time")?;
        let v = parse_f64(&rec, idx[2], value_column)?;
        by_subject.entry(s).or_default().push((t, v));
    }
    if by_subject.is_empty() {
        return Err(CliError::data("no trajectories in input"));
    }
    by_subject
        .into_iter()
        .map(|(s, mut pts)| {
            pts.sort_by_key(|p| p.0);
            if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(CliError::data(format!("subject `{s}` has two rows for time {}", w[0].0)));
            }
            let (times, values) = pts.into_iter().unzip();
            Ok(Trajectory::new(s, times, values)?)
        })
        .collect()
}

pub fn write_trajectories<W: Write>(out: W, delimiter: u8, trajs: &[Trajectory]) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["subject", "time", "benchmark"])?;
    for t in trajs {
        for (time, v) in t.times().iter().zip(t.values()) {
            w.write_record([t.subject.clone(), time.to_string(), fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_truth<W: Write>(out: W, delimiter: u8, truth: &[PanelTruth]) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["subject", "time", "cell", "mu", "sigma", "latent", "residual"])?;
    for t in truth {
        w.write_record([
            t.subject.clone(),
            t.time.to_string(),
            t.cell.to_string(),
            fmt_f64(t.mu),
            fmt_f64(t.sigma),
            fmt_f64(t.latent),
            fmt_f64(t.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traj_truth<W: Write>(out: W, delimiter: u8, trajs: &[Trajectory], truth: &[TrajTruth]) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["subject", "time", "nonnull", "phi", "v", "f"])?;
    for (t, tr) in trajs.iter().zip(truth) {
        for (time, f) in t.times().iter().zip(&tr.f) {
            w.write_record([
                tr.subject.clone(),
                time.to_string(),
                (tr.nonnull as u8).to_string(),
                fmt_f64(tr.phi),
                fmt_f64(tr.v),
                fmt_f64(*f),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_results<W: Write>(out: W, delimiter: u8, results: &[TrajectoryResult]) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["subject", "n", "inclusion_probability", "status"])?;
    for r in results {
        w.write_record([
            r.subject.clone(),
            r.n.to_string(),
            r.inclusion_probability.map(fmt_f64).unwrap_or_default(),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub subject: String,
    pub n: usize,
    pub inclusion_probability: Option<f64>,
    pub status: HistoryStatus,
}

pub fn read_results<R: Read>(input: R, delimiter: u8) -> Result<Vec<ResultRow>> {
    let mut r = reader(input, delimiter);
    let headers = r.headers()?.clone();
    let idx = require_columns(&headers, &["subject", "n", "inclusion_probability", "status"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let status = match rec.get(idx[3]).unwrap_or("").trim() {
            "ok" => HistoryStatus::Reported,
            "insufficient-history" => HistoryStatus::InsufficientHistory,
            s => return Err(CliError::data(format!("line {line}: unknown status `{s}`"))),
        };
        let p = rec.get(idx[2]).unwrap_or("").trim();
        out.push(ResultRow {
            subject: rec.get(idx[0]).unwrap_or("").trim().to_string(),
            n: parse_i64(&rec, idx[1], "n")? as usize,
            inclusion_probability: if p.is_empty() { None } else { Some(parse_f64(&rec, idx[2], "inclusion_probability")?) },
            status,
        });
    }
    Ok(out)
}

pub const BAND_COLUMNS: [&str; 8] = ["time", "mean", "q25", "q75", "q125", "q875", "q025", "q975"];

pub fn write_bands<W: Write>(out: W, delimiter: u8, b: &PredictiveBands) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(BAND_COLUMNS)?;
    let band = |level: f64| {
        b.band(level).ok_or_else(|| CliError::data(format!("bands lack the {level} level")))
    };
    let (b50, b75, b95) = (band(0.50)?, band(0.75)?, band(0.95)?);
    for h in 0..b.times.len() {
        w.write_record([
            b.times[h].to_string(),
            fmt_f64(b.mean[h]),
            fmt_f64(b50.lower[h]),
            fmt_f64(b50.upper[h]),
            fmt_f64(b75.lower[h]),
            fmt_f64(b75.upper[h]),
            fmt_f64(b95.lower[h]),
            fmt_f64(b95.upper[h]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Band file rows: `(time, [mean, q25, q75, q125, q875, q025, q975])`.
pub fn read_bands<R: Read>(input: R, delimiter: u8) -> Result<Vec<(i64, [f64; 7])>> {
    let mut r = reader(input, delimiter);
    let headers = r.headers()?.clone();
    let idx = require_columns(&headers, &BAND_COLUMNS)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut v = [0.0; 7];
        for k in 0..7 {
            v[k] = parse_f64(&rec, idx[k + 1], BAND_COLUMNS[k + 1])?;
        }
        out.push((parse_i64(&rec, idx[0], "time")?, v));
    }
    Ok(out)
}

/// Posterior-mean trajectory given `γ = 1`, long format.
pub fn write_trajectory_means<W: Write>(
    out: W,
    delimiter: u8,
    trajs: &[Trajectory],
    results: &[TrajectoryResult],
) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["subject", "time", "benchmark", "mean_trajectory"])?;
    for (t, r) in trajs.iter().zip(results) {
        for (k, (time, v)) in t.times().iter().zip(t.values()).enumerate() {
            let m = r.mean_trajectory.as_ref().map(|m| fmt_f64(m[k])).unwrap_or_default();
            w.write_record([t.subject.clone(), time.to_string(), fmt_f64(*v), m])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(out: W, delimiter: u8, bins: &[(f64, f64, usize)]) -> Result<()> {
    let mut w = writer(out, delimiter);
    w.write_record(["lower", "upper", "count"])?;
    for (lo, hi, c) in bins {
        w.write_record([fmt_f64(*lo), fmt_f64(*hi), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Retained tree draws and benchmark sums of one or more chains, enough to
/// recompute intervals at any level without rerunning the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsFile {
    pub covariate_names: Vec<String>,
    pub accumulator: BenchmarkAccumulator,
    pub draws: Vec<RetainedDraw>,
}

impl DrawsFile {
    pub fn from_chains(covariate_names: Vec<String>, chains: &[TreeSamplerState]) -> Self {
        let n = chains.first().map(|c| c.accumulator.sums.len()).unwrap_or(0);
        let mut accumulator = BenchmarkAccumulator::new(n);
        for c in chains {
            accumulator.merge(&c.accumulator);
        }
        DrawsFile { covariate_names, accumulator, draws: chains.iter().flat_map(|c| c.draws.iter().cloned()).collect() }
    }

    /// Validates deserialized draws against a dataset of `n` rows and the
    /// given covariates.
    pub fn check(&self, n: usize, covariate_names: &[String]) -> Result<()> {
        if self.covariate_names != covariate_names {
            return Err(CliError::data("draws were fitted on different covariates"));
        }
        if self.accumulator.sums.len() != n {
            return Err(CliError::data(format!(
                "draws were fitted on {} rows, scores table has {n}",
                self.accumulator.sums.len()
            )));
        }
        for d in &self.draws {
            d.tree.check()?;
            if d.tree.arity() != covariate_names.len() || d.params.len() != d.tree.len() {
                return Err(CliError::data("draw does not match the covariates"));
            }
            for (i, node) in d.tree.nodes().iter().enumerate() {
                match (node.is_leaf(), d.params[i]) {
                    (true, Some(p)) if p.sigma > 0.0 && p.mu.is_finite() && p.sigma.is_finite() => {}
                    (false, None) => {}
                    _ => return Err(CliError::data("draw has inconsistent leaf parameters")),
                }
            }
        }
        Ok(())
    }

    /// Repackages the draws as a single chain state.
    pub fn into_state(self) -> TreeSamplerState {
        let tree = self.draws.last().map(|d| d.tree.clone()).unwrap_or_else(|| {
            peerbench_core::treebench::Tree::root_only(self.covariate_names.len())
        });
        TreeSamplerState {
            tree,
            allocation: vec![],
            iteration: 0,
            accepted: 0,
            accumulator: self.accumulator,
            draws: self.draws,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectories_round_trip_and_reject_duplicates() {
        let t = vec![
            Trajectory::new("a", vec![1, 3], vec![0.1, -1.0 / 3.0]).unwrap(),
            Trajectory::new("b", vec![2], vec![1e-300]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, b',', &t).unwrap();
        assert_eq!(read_trajectories(buf.as_slice(), b',', "benchmark").unwrap(), t);
        let dup = "subject,time,benchmark\na,1,0.1\na,1,0.2\n";
        assert!(read_trajectories(dup.as_bytes(), b',', "benchmark").unwrap_err().message.contains("two rows"));
    }

    #[test]
    fn scores_round_trip() {
        let t = ScoresTable {
            subjects: vec!["x".into(), "y".into()],
            times: vec![1, 2],
            raw: vec![0.5, -0.25],
            z: vec![-0.67448975, 0.1],
            covariate_names: vec!["a".into(), "b".into()],
            x: vec![1.0, 2.0, 3.0, 0.1 + 0.2],
        };
        let mut buf = Vec::new();
        t.write(&mut buf, b'\t').unwrap();
        assert_eq!(ScoresTable::read(buf.as_slice(), b'\t').unwrap(), t);
    }
}
