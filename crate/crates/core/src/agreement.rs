//! Krippendorff's α over sentence-level quality judgments.
//!
//! Uses the pairable-values estimator: only units with at least two values
//! contribute, and each contributes its `m_u` values with weight
//! `1 / (m_u - 1)`, so missing ratings need no imputation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{correction_rate, Marking, PostEdit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Interval,
    Nominal,
}

impl Level {
    fn delta(self, a: f64, b: f64) -> f64 {
        match self {
            Level::Interval => (a - b) * (a - b),
            Level::Nominal => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Ratings indexed `[unit][rater]`; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub units: Vec<String>,
    pub raters: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub level: Level,
}

impl RatingMatrix {
    pub fn new(
        units: Vec<String>,
        raters: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
        level: Level,
    ) -> Result<Self> {
        if values.len() != units.len() {
            return Err(Error::LengthMismatch {
                expected: units.len(),
                actual: values.len(),
            });
        }
        for row in &values {
            if row.len() != raters.len() {
                return Err(Error::LengthMismatch {
                    expected: raters.len(),
                    actual: row.len(),
                });
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("ratings must be finite"));
            }
        }
        Ok(RatingMatrix {
            units,
            raters,
            values,
            level,
        })
    }

    /// Builds a matrix from `(unit, rater, value)` triples; units and raters
    /// keep first-seen order. A repeated (unit, rater) pair is an error.
    pub fn from_triples<U, R>(
        triples: impl IntoIterator<Item = (U, R, f64)>,
        level: Level,
    ) -> Result<Self>
    where
        U: Into<String>,
        R: Into<String>,
    {
        let mut units: Vec<String> = Vec::new();
        let mut raters: Vec<String> = Vec::new();
        let mut uidx: HashMap<String, usize> = HashMap::new();
        let mut ridx: HashMap<String, usize> = HashMap::new();
        let mut cells = Vec::new();
        for (u, r, v) in triples {
            let (u, r) = (u.into(), r.into());
            let ui = *uidx.entry(u.clone()).or_insert_with(|| {
                units.push(u.clone());
                units.len() - 1
            });
            let ri = *ridx.entry(r.clone()).or_insert_with(|| {
                raters.push(r.clone());
                raters.len() - 1
            });
            cells.push((ui, ri, v, u, r));
        }
        let mut values = vec![vec![None; raters.len()]; units.len()];
        for (ui, ri, v, u, r) in cells {
            if values[ui][ri].replace(v).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate rating for unit {u} by {r}"
                )));
            }
        }
        RatingMatrix::new(units, raters, values, level)
    }
}

/// α = 1 − D_o / D_e. Fewer than two pairable values is undefined; zero
/// expected disagreement yields 1.
pub fn krippendorff_alpha(m: &RatingMatrix) -> Result<f64> {
    if m.raters.len() < 2 {
        return Err(Error::Undefined("alpha needs at least two raters".into()));
    }
    let units: Vec<Vec<f64>> = m
        .values
        .iter()
        .map(|row| row.iter().flatten().copied().collect::<Vec<f64>>())
        .filter(|vals| vals.len() >= 2)
        .collect();
    let n: usize = units.iter().map(Vec::len).sum();
    if n < 2 {
        return Err(Error::Undefined("fewer than two pairable values".into()));
    }
    let mut d_o = 0.0;
    for vals in &units {
        let mut s = 0.0;
        for (i, &a) in vals.iter().enumerate() {
            for (j, &b) in vals.iter().enumerate() {
                if i != j {
                    s += m.level.delta(a, b);
                }
            }
        }
        d_o += s / (vals.len() - 1) as f64;
    }
    let all: Vec<f64> = units.concat();
    let pair_sum = match m.level {
        Level::Interval => {
            // sum over ordered pairs of (a - b)^2, centred for stability
            let mean = all.iter().sum::<f64>() / n as f64;
            2.0 * n as f64 * all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        }
        Level::Nominal => {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for v in &all {
                *counts.entry((v + 0.0).to_bits()).or_default() += 1;
            }
            (n * n - counts.values().map(|c| c * c).sum::<usize>()) as f64
        }
    };
    let d_o = d_o / n as f64;
    let d_e = pair_sum / (n * (n - 1)) as f64;
    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

/// An annotation reduced for agreement analysis. A user-choice item
/// carries whichever annotation the annotator chose.
#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Marking(Marking),
    PostEdit(PostEdit),
}

/// Sentence-level quality judgment in [0, 1]: the fraction of hypothesis
/// tokens flagged or edited. An empty hypothesis has nothing to judge and
/// maps to 0.
pub fn to_quality_judgment(a: &Annotation) -> f64 {
    let r = match a {
        Annotation::Marking(m) => correction_rate(m),
        Annotation::PostEdit(p) => correction_rate(p),
    };
    r.unwrap_or(0.0)
}

/// One judgment by one annotator in one mode and pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub annotator_id: String,
    pub sentence_id: String,
    pub mode: String,
    pub pass: String,
    pub value: f64,
}

/// Pass label of the first presentation of a sentence.
pub const MAIN_PASS: &str = "main";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraRaterReport {
    pub per_annotator: BTreeMap<String, f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 with a single annotator.
    pub std: f64,
}

/// Per-annotator α with passes as pseudo-raters, then mean and sample std.
/// Annotators without a unit seen in two passes are left out.
pub fn intra_rater_alpha(judgments: &[Judgment], level: Level) -> Result<IntraRaterReport> {
    let mut by_annotator: BTreeMap<&str, Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        by_annotator.entry(&j.annotator_id).or_default().push(j);
    }
    let mut per_annotator = BTreeMap::new();
    for (who, js) in by_annotator {
        let m = RatingMatrix::from_triples(
            js.iter()
                .map(|j| (j.sentence_id.as_str(), j.pass.as_str(), j.value)),
            level,
        )?;
        let repeated = m
            .values
            .iter()
            .filter(|r| r.iter().flatten().count() >= 2)
            .count();
        if repeated == 0 || m.raters.len() < 2 {
            continue;
        }
        per_annotator.insert(who.to_string(), krippendorff_alpha(&m)?);
    }
    if per_annotator.is_empty() {
        return Err(Error::invalid("no unit was rated in two passes"));
    }
    let k = per_annotator.len() as f64;
    let mean = per_annotator.values().sum::<f64>() / k;
    let std = if per_annotator.len() < 2 {
        0.0
    } else {
        (per_annotator
            .values()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0))
            .sqrt()
    };
    Ok(IntraRaterReport {
        per_annotator,
        mean,
        std,
    })
}

/// Inter-rater α over the main pass, annotators as raters.
pub fn inter_rater_alpha(judgments: &[Judgment], level: Level) -> Result<f64> {
    let m = RatingMatrix::from_triples(
        judgments
            .iter()
            .filter(|j| j.pass == MAIN_PASS)
            .map(|j| (j.sentence_id.as_str(), j.annotator_id.as_str(), j.value)),
        level,
    )?;
    krippendorff_alpha(&m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub mode: String,
    pub intra_mean: Option<f64>,
    pub intra_std: Option<f64>,
    pub inter: Option<f64>,
}

/// One row per mode, sorted by mode name. Undefined values are `None`.
pub fn agreement_report(judgments: &[Judgment], level: Level) -> Vec<AgreementRow> {
    let mut modes: BTreeMap<&str, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        modes.entry(&j.mode).or_default().push(j.clone());
    }
    modes
        .into_iter()
        .map(|(mode, js)| {
            let intra = intra_rater_alpha(&js, level).ok();
            AgreementRow {
                mode: mode.to_string(),
                intra_mean: intra.as_ref().map(|r| r.mean),
                intra_std: intra.as_ref().map(|r| r.std),
                inter: inter_rater_alpha(&js, level).ok(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::Origin;

    fn matrix(rows: &[&[Option<f64>]], level: Level) -> RatingMatrix {
        let raters = (0..rows[0].len()).map(|i| format!("r{i}")).collect();
        let units = (0..rows.len()).map(|i| format!("u{i}")).collect();
        RatingMatrix::new(
            units,
            raters,
            rows.iter().map(|r| r.to_vec()).collect(),
            level,
        )
        .unwrap()
    }

    #[test]
    fn perfect_agreement() {
        let m = matrix(
            &[&[Some(0.2), Some(0.2)], &[Some(0.7), Some(0.7)]],
            Level::Interval,
        );
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn crossed_pair() {
        // n = 4; D_o = (2 + 2) / 4 = 1; D_e = 8 / 12
        let m = matrix(
            &[&[Some(0.0), Some(1.0)], &[Some(1.0), Some(0.0)]],
            Level::Interval,
        );
        assert!((krippendorff_alpha(&m).unwrap() - -0.5).abs() < 1e-12);
    }

    #[test]
    fn single_rater_is_undefined() {
        let m = matrix(&[&[Some(1.0)], &[Some(0.0)]], Level::Interval);
        assert!(matches!(krippendorff_alpha(&m), Err(Error::Undefined(_))));
        let sparse = matrix(&[&[Some(1.0), None], &[None, Some(0.0)]], Level::Interval);
        assert!(matches!(
            krippendorff_alpha(&sparse),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn constant_ratings_give_one() {
        let m = matrix(
            &[&[Some(0.5), Some(0.5)], &[Some(0.5), None]],
            Level::Nominal,
        );
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn duplicate_triples_rejected() {
        let r = RatingMatrix::from_triples([("u", "a", 1.0), ("u", "a", 2.0)], Level::Interval);
        assert!(r.is_err());
    }

    #[test]
    fn quality_judgments() {
        let m = |flags: Vec<bool>| {
            Annotation::Marking(Marking {
                hypothesis_id: "h".into(),
                flags,
                origin: Origin::Human,
            })
        };
        assert_eq!(to_quality_judgment(&m(vec![false; 4])), 0.0);
        assert_eq!(to_quality_judgment(&m(vec![true; 4])), 1.0);
        assert_eq!(
            to_quality_judgment(&m(vec![false, true, false, false])),
            0.25
        );
        let hyp: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let pe = PostEdit::new("h", &hyp, vec!["x".into(), "y".into()]);
        assert_eq!(to_quality_judgment(&Annotation::PostEdit(pe)), 1.0);
    }

    fn j(a: &str, s: &str, mode: &str, pass: &str, v: f64) -> Judgment {
        Judgment {
            annotator_id: a.into(),
            sentence_id: s.into(),
            mode: mode.into(),
            pass: pass.into(),
            value: v,
        }
    }

    #[test]
    fn identical_passes_and_report_shape() {
        let mut js = Vec::new();
        for a in ["ann1", "ann2"] {
            for (i, v) in [0.1, 0.5, 0.9].iter().enumerate() {
                js.push(j(a, &format!("s{i}"), "marking", MAIN_PASS, *v));
                js.push(j(a, &format!("s{i}"), "marking", "repeat", *v));
            }
        }
        let intra = intra_rater_alpha(&js, Level::Interval).unwrap();
        assert_eq!(intra.mean, 1.0);
        assert_eq!(intra.std, 0.0);
        assert_eq!(inter_rater_alpha(&js, Level::Interval).unwrap(), 1.0);
        let rows = agreement_report(&js, Level::Interval);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].inter, Some(1.0));
        let json = serde_json::to_value(&rows[0]).unwrap();
        for key in ["mode", "intra_mean", "intra_std", "inter"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn no_repeats_is_an_error() {
        let js = vec![
            j("a", "s1", "m", MAIN_PASS, 0.1),
            j("a", "s2", "m", MAIN_PASS, 0.3),
        ];
        assert!(intra_rater_alpha(&js, Level::Interval).is_err());
    }
}
