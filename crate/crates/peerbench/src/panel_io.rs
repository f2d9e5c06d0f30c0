//! Delimited-text panel ingestion and emission.
//!
//! A column map (flat config) assigns roles to header names:
//!
//! ```text
//! subject = firm_id
//! time = year
//! score = roa
//! raw.size = log_assets        # numeric covariate
//! code.industry = gics         # fixed-width integer code, used numerically
//! group.country = country      # label replaced by KS distance to baseline
//! baseline.country = US
//! ```
//!
//! Without a map, `subject`, `time` and `score` must be present by name;
//! every other column becomes a numeric covariate if all its cells parse as
//! numbers and a group covariate otherwise, with the most frequent label as
//! baseline.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use peerbench_core::panel::{
    CovariateDef, CovariateKind, CovariateSpec, CovariateValue, DropCounts, Observation, PanelDataset,
};

use crate::config::KeyValueConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub subject: String,
    pub time: String,
    pub score: String,
    /// Covariates in map order; reordered to header order on load.
    pub covariates: Vec<CovariateDef>,
}

impl ColumnMap {
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        let mut map = ColumnMap {
            subject: cfg.get("subject").unwrap_or("subject").to_string(),
            time: cfg.get("time").unwrap_or("time").to_string(),
            score: cfg.get("score").unwrap_or("score").to_string(),
            covariates: Vec::new(),
        };
        let mut baselines = BTreeMap::new();
        for (key, value) in cfg.entries() {
            let (role, name) = match key.split_once('.') {
                Some((r, n)) if !n.is_empty() => (r, n),
                _ if ["subject", "time", "score"].contains(&key.as_str()) => continue,
                _ => return Err(CliError::usage(format!("unknown column-map key `{key}`"))),
            };
            let kind = match role {
                "raw" => CovariateKind::Raw,
                "code" => CovariateKind::Code,
                "group" => CovariateKind::GroupDistance { baseline: String::new() },
                "baseline" => {
                    baselines.insert(name.to_string(), value.clone());
                    continue;
                }
                _ => return Err(CliError::usage(format!("unknown column-map key `{key}`"))),
            };
            map.covariates.push(CovariateDef { name: name.to_string(), column: value.clone(), kind });
        }
        for def in &mut map.covariates {
            if let CovariateKind::GroupDistance { baseline } = &mut def.kind {
                *baseline = baselines
                    .remove(&def.name)
                    .ok_or_else(|| CliError::usage(format!("group covariate `{}` needs `baseline.{}`", def.name, def.name)))?;
            }
        }
        if let Some(name) = baselines.keys().next() {
            return Err(CliError::usage(format!("`baseline.{name}` given without `group.{name}`")));
        }
        map.spec().validate()?;
        Ok(map)
    }

    pub fn to_config(&self) -> KeyValueConfig {
        let mut c = KeyValueConfig::from_entries([
            ("subject", self.subject.as_str()),
            ("time", self.time.as_str()),
            ("score", self.score.as_str()),
        ]);
        for d in &self.covariates {
            match &d.kind {
                CovariateKind::Raw => c.set(format!("raw.{}", d.name), &d.column),
                CovariateKind::Code => c.set(format!("code.{}", d.name), &d.column),
                CovariateKind::GroupDistance { baseline } => {
                    c.set(format!("group.{}", d.name), &d.column);
                    c.set(format!("baseline.{}", d.name), baseline);
                }
            }
        }
        c
    }

    pub fn spec(&self) -> CovariateSpec {
        CovariateSpec { defs: self.covariates.clone() }
    }

    /// The map matching files written by [`write_panel`] for synthetic
    /// panels.
    pub fn synthetic() -> Self {
        let raw = |n: &str| CovariateDef { name: n.into(), column: n.into(), kind: CovariateKind::Raw };
        ColumnMap {
            subject: "subject".into(),
            time: "time".into(),
            score: "score".into(),
            covariates: vec![
                raw("year"),
                raw("size"),
                raw("leverage"),
                CovariateDef {
                    name: "country".into(),
                    column: "country".into(),
                    kind: CovariateKind::GroupDistance { baseline: "C0".into() },
                },
            ],
        }
    }
}

pub(crate) fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("null")
}

/// Loaded panel plus the covariate spec in dataset column order.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub dataset: PanelDataset,
    pub spec: CovariateSpec,
    pub map: ColumnMap,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::data(format!("column `{name}` not found in header")))
}

fn auto_map(headers: &csv::StringRecord, rows: &[csv::StringRecord], baseline: Option<&str>) -> Result<ColumnMap> {
    let mut map = ColumnMap {
        subject: "subject".into(),
        time: "time".into(),
        score: "score".into(),
        covariates: Vec::new(),
    };
    for (j, h) in headers.iter().enumerate() {
        let h = h.trim();
        if ["subject", "time", "score"].contains(&h) {
            continue;
        }
        let cells = || rows.iter().filter_map(|r| r.get(j)).filter(|c| !is_missing(c));
        let numeric = cells().all(|c| c.trim().parse::<f64>().is_ok());
        let kind = if numeric {
            CovariateKind::Raw
        } else {
            let base = match baseline {
                Some(b) => b.to_string(),
                None => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for c in cells() {
                        *counts.entry(c.trim()).or_default() += 1;
                    }
                    // most frequent; ties go to the smallest label
                    let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
                    best.map(|(l, _)| l.to_string()).unwrap_or_default()
                }
            };
            CovariateKind::GroupDistance { baseline: base }
        };
        map.covariates.push(CovariateDef { name: h.to_string(), column: h.to_string(), kind });
    }
    map.spec().validate()?;
    Ok(map)
}

/// Reads a panel. `map = None` infers roles from the header (see module
/// docs); `auto_baseline` then overrides the inferred baseline label.
pub fn read_panel<R: Read>(
    input: R,
    delimiter: u8,
    map: Option<&ColumnMap>,
    auto_baseline: Option<&str>,
) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?);
    }
    let mut map = match map {
        Some(m) => m.clone(),
        None => auto_map(&headers, &rows, auto_baseline)?,
    };
    let cs = column_index(&headers, &map.subject)?;
    let ct = column_index(&headers, &map.time)?;
    let cv = column_index(&headers, &map.score)?;
    let mut cols = Vec::with_capacity(map.covariates.len());
    for d in &map.covariates {
        cols.push(column_index(&headers, &d.column)?);
    }
    // covariates in header order
    let mut order: Vec<usize> = (0..cols.len()).collect();
    order.sort_by_key(|&k| cols[k]);
    map.covariates = order.iter().map(|&k| map.covariates[k].clone()).collect();
    let cols: Vec<usize> = order.iter().map(|&k| cols[k]).collect();

    let mut dropped = DropCounts::default();
    let mut obs = Vec::with_capacity(rows.len());
    'rows: for rec in &rows {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |j: usize| rec.get(j).unwrap_or("");
        let err = |what: &str, v: &str| CliError::data(format!("line {line}: {what} `{v}`"));
        let subject = cell(cs).trim();
        if subject.is_empty() {
            return Err(err("empty subject id", ""));
        }
        let t = cell(ct).trim();
        let time: i64 = t.parse().map_err(|_| err("time is not an integer:", t))?;
        let s = cell(cv);
        if is_missing(s) {
            dropped.missing_score += 1;
            continue;
        }
        let raw_score: f64 = s.trim().parse().map_err(|_| err("score is not a number:", s))?;
        if !raw_score.is_finite() {
            return Err(err("score is not finite:", s));
        }
        let mut covariates = Vec::with_capacity(cols.len());
        for (d, &j) in map.covariates.iter().zip(&cols) {
            let c = cell(j);
            if is_missing(c) {
                dropped.missing_covariate += 1;
                continue 'rows;
            }
            let c = c.trim();
            covariates.push(match d.kind {
                CovariateKind::Raw => CovariateValue::Number(
                    c.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(&format!("{} is not a number:", d.name), c))?,
                ),
                CovariateKind::Code => {
                    if !c.bytes().all(|b| b.is_ascii_digit()) {
                        return Err(err(&format!("{} is not an integer code:", d.name), c));
                    }
                    CovariateValue::Number(c.parse::<u64>().map_err(|_| err("code out of range:", c))? as f64)
                }
                CovariateKind::GroupDistance { .. } => CovariateValue::Label(c.to_string()),
            });
        }
        obs.push(Observation { subject: subject.to_string(), time, raw_score, covariates });
    }
    if dropped.missing_score + dropped.missing_covariate > 0 {
        log::warn!(
            "dropped {} rows with missing score and {} with missing covariates",
            dropped.missing_score,
            dropped.missing_covariate
        );
    }
    let names = map.covariates.iter().map(|d| d.name.clone()).collect();
    let mut dataset = PanelDataset::new(obs, names)?;
    dataset.dropped = dropped;
    Ok(LoadedPanel { spec: map.spec(), dataset, map })
}

pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn covariate_cell(v: &CovariateValue) -> String {
    match v {
        CovariateValue::Number(x) => fmt_f64(*x),
        CovariateValue::Label(l) => l.clone(),
    }
}

/// Writes `subject,time,score,<covariates…>`; `extra` rows (e.g. rows with a
/// missing score, written as an empty cell) are merged in `(subject, time)`
/// order.
pub fn write_panel<W: Write>(out: W, delimiter: u8, dataset: &PanelDataset, extra: &[Observation]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let mut header = vec!["subject".to_string(), "time".into(), "score".into()];
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    let mut rows: Vec<&Observation> = dataset.observations().iter().chain(extra).collect();
    rows.sort_by(|a, b| a.subject.cmp(&b.subject).then(a.time.cmp(&b.time)));
    for o in rows {
        let mut rec = vec![o.subject.clone(), o.time.to_string(), fmt_f64(o.raw_score)];
        rec.extend(o.covariates.iter().map(covariate_cell));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `,` / `comma`, `\t` / `tab`, or any single byte.
pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "," | "comma" => Ok(b','),
        "\t" | "\\t" | "tab" => Ok(b'\t'),
        _ if s.len() == 1 => Ok(s.as_bytes()[0]),
        _ => Err(CliError::usage(format!("delimiter must be a single character, `comma` or `tab`, got `{s}`"))),
    }
}
