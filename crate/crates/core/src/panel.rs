//! Panel data model and covariate engineering.
//!
//! A [`PanelDataset`] holds one [`Observation`] per (subject, time) pair.
//! Covariates are numeric, except for group labels which [`build_covariates`]
//! replaces by the Kolmogorov–Smirnov distance between the group's pooled
//! score distribution and that of a baseline group.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A single covariate cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Number(f64),
    /// Group label awaiting conversion to a numeric distance.
    Label(String),
}

impl CovariateValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            CovariateValue::Number(v) => Some(*v),
            CovariateValue::Label(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subject: String,
    pub time: i64,
    pub raw_score: f64,
    pub covariates: Vec<CovariateValue>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovariateKind {
    /// Numeric pass-through.
    Raw,
    /// Fixed-width hierarchical integer code, used as a number.
    Code,
    /// Group label replaced by the KS distance to the baseline group.
    GroupDistance { baseline: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateDef {
    pub name: String,
    /// Source column in the input table.
    pub column: String,
    pub kind: CovariateKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CovariateSpec {
    pub defs: Vec<CovariateDef>,
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for def in &self.defs {
            if !names.insert(def.name.as_str()) {
                return Err(Error::Config(format!("covariate `{}` defined twice", def.name)));
            }
        }
        let groups = self
            .defs
            .iter()
            .filter(|d| matches!(d.kind, CovariateKind::GroupDistance { .. }))
            .count();
        if groups > 1 {
            return Err(Error::Config(format!(
                "exactly one group-distance covariate may be designated, found {groups}"
            )));
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.defs.iter().map(|d| d.name.clone()).collect()
    }
}

/// Rows dropped during ingestion, by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub missing_score: usize,
    pub missing_covariate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    time_range: Option<(i64, i64)>,
    pub dropped: DropCounts,
}

impl PanelDataset {
    /// Validates finiteness, covariate arity and (subject, time) uniqueness.
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let arity = covariate_names.len();
        let mut seen = BTreeSet::new();
        let mut range: Option<(i64, i64)> = None;
        for obs in &observations {
            if !obs.raw_score.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite score for subject `{}` at time {}",
                    obs.subject, obs.time
                )));
            }
            if obs.covariates.len() != arity {
                return Err(Error::Domain(format!(
                    "subject `{}` at time {} has {} covariates, expected {arity}",
                    obs.subject,
                    obs.time,
                    obs.covariates.len()
                )));
            }
            if !seen.insert((obs.subject.as_str(), obs.time)) {
                return Err(Error::Duplicate { subject: obs.subject.clone(), time: obs.time });
            }
            range = Some(match range {
                None => (obs.time, obs.time),
                Some((lo, hi)) => (lo.min(obs.time), hi.max(obs.time)),
            });
        }
        Ok(PanelDataset { observations, covariate_names, time_range: range, dropped: DropCounts::default() })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        self.time_range
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.raw_score).collect()
    }

    /// Row-major `n × p` covariate matrix. Fails while group labels remain.
    pub fn design_matrix(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len() * self.covariate_names.len());
        for obs in &self.observations {
            for (j, c) in obs.covariates.iter().enumerate() {
                match c {
                    CovariateValue::Number(v) => out.push(*v),
                    CovariateValue::Label(l) => {
                        return Err(Error::Domain(format!(
                            "covariate `{}` still holds label `{l}`; build covariates first",
                            self.covariate_names[j]
                        )))
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Domain("KS distance needs two nonempty samples".into()));
    }
    if sample_a.iter().chain(sample_b).any(|v| v.is_nan()) {
        return Err(Error::Domain("KS distance undefined for NaN values".into()));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Replaces group labels by the KS distance between each group's pooled
/// (all-period) score sample and the baseline group's.
///
/// Numeric cells pass through, so already-built datasets are unchanged.
pub fn build_covariates(data: &PanelDataset, spec: &CovariateSpec) -> Result<PanelDataset> {
    spec.validate()?;
    let mut out = data.clone();
    for (j, def) in spec.defs.iter().enumerate() {
        let CovariateKind::GroupDistance { baseline } = &def.kind else {
            continue;
        };
        let column = data
            .covariate_names
            .iter()
            .position(|n| n == &def.name)
            .unwrap_or(j);
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for obs in &data.observations {
            if let Some(CovariateValue::Label(l)) = obs.covariates.get(column) {
                groups.entry(l.as_str()).or_default().push(obs.raw_score);
            }
        }
        if groups.is_empty() {
            continue;
        }
        let base = groups.get(baseline.as_str()).ok_or_else(|| {
            Error::Domain(format!("baseline group `{baseline}` has no observations"))
        })?;
        let mut distances = BTreeMap::new();
        for (label, sample) in &groups {
            let d = if *label == baseline.as_str() { 0.0 } else { ks_distance(base, sample)? };
            distances.insert(String::from(*label), d);
        }
        for obs in &mut out.observations {
            if let CovariateValue::Label(l) = &obs.covariates[column] {
                obs.covariates[column] = CovariateValue::Number(distances[l.as_str()]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    /// Brute force: evaluate both ECDFs by counting at every sample point.
    fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    fn obs(subject: &str, time: i64, score: f64, group: &str) -> Observation {
        Observation {
            subject: subject.to_string(),
            time,
            raw_score: score,
            covariates: vec![CovariateValue::Number(time as f64), CovariateValue::Label(group.to_string())],
        }
    }

    fn spec() -> CovariateSpec {
        CovariateSpec {
            defs: vec![
                CovariateDef { name: "year".into(), column: "year".into(), kind: CovariateKind::Raw },
                CovariateDef {
                    name: "country".into(),
                    column: "country".into(),
                    kind: CovariateKind::GroupDistance { baseline: "US".into() },
                },
            ],
        }
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        let d = ks_distance(&[1.0, 2.0], &[1.5, 2.5]).unwrap();
        assert_eq!(d, ks_oracle(&[1.0, 2.0], &[1.5, 2.5]));
        assert_eq!(d, 0.5);
        assert!(matches!(ks_distance(&[], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn baseline_gets_zero_and_equal_group_gets_zero() {
        let rows = vec![
            obs("a", 1, 0.1, "US"),
            obs("a", 2, 0.3, "US"),
            obs("b", 1, 0.3, "FR"),
            obs("b", 2, 0.1, "FR"),
        ];
        let data = PanelDataset::new(rows, spec().names()).unwrap();
        let built = build_covariates(&data, &spec()).unwrap();
        for o in built.observations() {
            assert_eq!(o.covariates[1], CovariateValue::Number(0.0));
        }
    }

    #[test]
    fn three_groups_match_oracle() {
        let us = [0.1, 0.2, 0.3, 0.4, 0.5];
        let fr = [0.15, 0.45, 0.9];
        let jp = [-0.2, 0.0, 0.25, 0.35];
        let mut rows = Vec::new();
        for (g, s) in [("US", &us[..]), ("FR", &fr[..]), ("JP", &jp[..])] {
            for (t, &v) in s.iter().enumerate() {
                rows.push(obs(g, t as i64, v, g));
            }
        }
        let data = PanelDataset::new(rows, spec().names()).unwrap();
        let built = build_covariates(&data, &spec()).unwrap();
        for o in built.observations() {
            let expected = match o.subject.as_str() {
                "US" => 0.0,
                "FR" => ks_oracle(&us, &fr),
                _ => ks_oracle(&us, &jp),
            };
            assert_eq!(o.covariates[1], CovariateValue::Number(expected));
        }
        assert_eq!(build_covariates(&built, &spec()).unwrap(), built);
    }

    #[test]
    fn missing_baseline_is_domain_error() {
        let data = PanelDataset::new(vec![obs("a", 1, 0.1, "FR")], spec().names()).unwrap();
        assert!(matches!(build_covariates(&data, &spec()), Err(Error::Domain(_))));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let rows = vec![obs("firmA", 1990, 0.1, "US"), obs("firmA", 1990, 0.2, "US")];
        let err = PanelDataset::new(rows, spec().names()).unwrap_err();
        assert_eq!(err, Error::Duplicate { subject: "firmA".into(), time: 1990 });
    }

    #[test]
    fn labels_block_design_matrix() {
        let data = PanelDataset::new(vec![obs("a", 1, 0.1, "US")], spec().names()).unwrap();
        assert!(data.design_matrix().is_err());
        let built = build_covariates(&data, &spec()).unwrap();
        assert_eq!(built.design_matrix().unwrap(), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_matches_oracle(
            a in prop::collection::vec(-5.0f64..5.0, 1..30),
            b in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let ab = ks_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, ks_distance(&b, &a).unwrap());
            prop_assert!((ab - ks_oracle(&a, &b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn ks_invariant_under_increasing_maps(
            a in prop::collection::vec(-3.0f64..3.0, 1..30),
            b in prop::collection::vec(-3.0f64..3.0, 1..30),
        ) {
            let t = |v: &f64| v.exp() * 2.0 + 1.0;
            let ta: Vec<f64> = a.iter().map(t).collect();
            let tb: Vec<f64> = b.iter().map(t).collect();
            prop_assert_eq!(ks_distance(&a, &b).unwrap(), ks_distance(&ta, &tb).unwrap());
        }
    }
}
