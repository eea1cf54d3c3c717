//! Precision-recall curves, effort/value analysis for triage, and the
//! sampled-review precision analysis with indeterminate handling.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adjacency::CandidateId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Sweeps thresholds down through the distinct scores; a candidate is
/// predicted positive when `score >= threshold`. AUPRC is the step-wise sum
/// of `(recall_i - recall_{i-1}) * precision_i`.
pub fn pr_curve(scores: &[(f64, bool)]) -> Result<PrCurve> {
    let positives = scores.iter().filter(|s| s.1).count() as u64;
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut points = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            tp,
            fp,
            fn_: positives - tp,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    let auprc = step_auprc(&points);
    Ok(PrCurve { points, auprc })
}

pub fn step_auprc(points: &[PrPoint]) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,tp,fp,fn,precision,recall\n");
        for p in &self.points {
            writeln!(s, "{},{},{},{},{},{}", p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall).unwrap();
        }
        s
    }

    /// Highest precision among points with recall >= `recall`.
    pub fn precision_at_recall(&self, recall: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.recall >= recall)
            .map(|p| p.precision)
            .max_by(f64::total_cmp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffortValue {
    /// `(effort fraction, value fraction)` for every prefix length 0..=n.
    pub curve: Vec<(f64, f64)>,
    pub total: usize,
    pub positives: usize,
    pub merge_rate: f64,
    /// Smallest effort fraction whose value reaches 0.9.
    pub effort_for_90_value: Option<f64>,
    /// Value captured when effort equals `merge_rate`.
    pub value_at_merge_rate: f64,
}

/// `ranked` holds ground-truth labels in review order (best first).
pub fn effort_value(ranked: &[bool], merge_rate: f64) -> EffortValue {
    let n = ranked.len();
    let positives = ranked.iter().filter(|&&l| l).count();
    let mut curve = Vec::with_capacity(n + 1);
    let mut hits = 0usize;
    curve.push((0.0, 0.0));
    for (k, &label) in ranked.iter().enumerate() {
        hits += usize::from(label);
        let value = if positives == 0 { 1.0 } else { hits as f64 / positives as f64 };
        curve.push(((k + 1) as f64 / n as f64, value));
    }
    let effort_for_90_value = curve.iter().find(|(_, v)| *v >= 0.9).map(|(e, _)| *e);
    let k = ((merge_rate * n as f64).round() as usize).min(n);
    EffortValue {
        value_at_merge_rate: curve[k].1,
        curve,
        total: n,
        positives,
        merge_rate,
        effort_for_90_value,
    }
}

impl EffortValue {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("effort,value\n");
        for (e, v) in &self.curve {
            writeln!(s, "{e},{v}").unwrap();
        }
        s
    }
}

/// Fraction of all candidates predicted positive at an operating point:
/// `recall * merge_rate / precision`. At precision = recall this equals the
/// merge rate, i.e. as many positive predictions as true merges.
pub fn positive_fraction_at(precision: f64, recall: f64, merge_rate: f64) -> f64 {
    recall * merge_rate / precision
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reviewer {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assessment {
    Correct,
    Incorrect,
    Indeterminate,
}

impl Assessment {
    fn rank(self) -> u8 {
        match self {
            Assessment::Incorrect => 0,
            Assessment::Indeterminate => 1,
            Assessment::Correct => 2,
        }
    }

    fn counts_as_true(self, indeterminate_true: bool) -> bool {
        match self {
            Assessment::Correct => true,
            Assessment::Incorrect => false,
            Assessment::Indeterminate => indeterminate_true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewAssessment {
    pub candidate_id: CandidateId,
    pub reviewer: Reviewer,
    pub verdict: Assessment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewPoint {
    pub rank: usize,
    pub candidate_id: CandidateId,
    pub score: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewCurve {
    /// `A`, `B` or `combined`.
    pub name: String,
    pub indeterminate_as_true: bool,
    pub points: Vec<ReviewPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewPrecision {
    pub curves: Vec<ReviewCurve>,
}

fn cumulative_curve(
    name: &str,
    verdicts: &BTreeMap<CandidateId, Assessment>,
    scores: &HashMap<CandidateId, f64>,
    indeterminate_as_true: bool,
) -> ReviewCurve {
    let mut items: Vec<(CandidateId, f64, Assessment)> =
        verdicts.iter().map(|(id, v)| (*id, scores[id], *v)).collect();
    items.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut hits = 0usize;
    let points = items
        .iter()
        .enumerate()
        .map(|(i, (id, score, v))| {
            hits += usize::from(v.counts_as_true(indeterminate_as_true));
            ReviewPoint {
                rank: i + 1,
                candidate_id: *id,
                score: *score,
                precision: hits as f64 / (i + 1) as f64,
            }
        })
        .collect();
    ReviewCurve {
        name: name.to_string(),
        indeterminate_as_true,
        points,
    }
}

/// Cumulative precision by descending score for each reviewer and for the
/// per-candidate maximum of both reviewers, each with indeterminate verdicts
/// read as false and as true.
pub fn review_precision(
    assessments: &[ReviewAssessment],
    scores: &HashMap<CandidateId, f64>,
) -> Result<ReviewPrecision> {
    let mut per_reviewer: BTreeMap<Reviewer, BTreeMap<CandidateId, Assessment>> = BTreeMap::new();
    for a in assessments {
        if !scores.contains_key(&a.candidate_id) {
            return Err(Error::Unscored(a.candidate_id.to_string()));
        }
        let slot = per_reviewer.entry(a.reviewer).or_default();
        if slot.insert(a.candidate_id, a.verdict).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate assessment of {} by {:?}",
                a.candidate_id, a.reviewer
            )));
        }
    }
    let mut combined: BTreeMap<CandidateId, Assessment> = BTreeMap::new();
    for verdicts in per_reviewer.values() {
        for (id, v) in verdicts {
            combined
                .entry(*id)
                .and_modify(|c| {
                    if v.rank() > c.rank() {
                        *c = *v
                    }
                })
                .or_insert(*v);
        }
    }
    let mut curves = Vec::new();
    for (reviewer, verdicts) in &per_reviewer {
        let name = format!("{reviewer:?}");
        curves.push(cumulative_curve(&name, verdicts, scores, false));
        curves.push(cumulative_curve(&name, verdicts, scores, true));
    }
    curves.push(cumulative_curve("combined", &combined, scores, false));
    curves.push(cumulative_curve("combined", &combined, scores, true));
    Ok(ReviewPrecision { curves })
}

impl ReviewPrecision {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curve,indeterminate_as,rank,candidate_id,score,precision\n");
        for c in &self.curves {
            let interp = if c.indeterminate_as_true { "true" } else { "false" };
            for p in &c.points {
                writeln!(s, "{},{},{},{},{},{}", c.name, interp, p.rank, p.candidate_id, p.score, p.precision).unwrap();
            }
        }
        s
    }

    pub fn curve(&self, name: &str, indeterminate_as_true: bool) -> Option<&ReviewCurve> {
        self.curves
            .iter()
            .find(|c| c.name == name && c.indeterminate_as_true == indeterminate_as_true)
    }
}
