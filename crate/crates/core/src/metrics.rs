//! Ranking metrics over scored records: GAP, MAP, PERR and Hit@1, overall
//! and restricted to each taxonomy level.
//!
//! Orderings are deterministic: score descending, then video id, then label
//! id. Average precision is evaluated at the end of each group of equal
//! scores, so its value does not depend on how ties are ordered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelSet, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid record {id:?}: {detail}")]
    Record { id: String, detail: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Per-record prediction cutoff for GAP.
pub const DEFAULT_TOP_N: usize = 20;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub truth: LabelSet,
}

impl EvalRecord {
    pub fn new(video_id: impl Into<String>, scores: Vec<f64>, truth: LabelSet) -> Result<Self> {
        let video_id = video_id.into();
        if scores.len() != truth.len() {
            return Err(MetricsError::Record {
                id: video_id,
                detail: format!("{} scores for {} labels", scores.len(), truth.len()),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MetricsError::Record { id: video_id, detail: format!("score {s} outside [0, 1]") });
        }
        Ok(EvalRecord { video_id, scores, truth })
    }

    /// Scores and truth restricted to `ids`, in that order.
    pub fn restrict(&self, ids: &[usize]) -> EvalRecord {
        EvalRecord {
            video_id: self.video_id.clone(),
            scores: ids.iter().map(|&i| self.scores[i]).collect(),
            truth: self.truth.restrict(ids),
        }
    }
}

fn check_nonempty(records: &[EvalRecord]) -> Result<usize> {
    let first = records.first().ok_or_else(|| MetricsError::Contract("no records".into()))?;
    let k = first.scores.len();
    if let Some(r) = records.iter().find(|r| r.scores.len() != k) {
        return Err(MetricsError::Contract(format!("record {:?} has {} labels, expected {k}", r.video_id, r.scores.len())));
    }
    Ok(k)
}

/// Label ids by descending score, lowest id first on ties.
pub fn ranked_labels(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

/// Average precision of `(score, is_positive)` items already sorted by descending score.
///
/// Summing `precision · hits` and dividing once keeps the result at most 1.
fn tie_group_ap(sorted: &[(f64, bool)], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let (mut seen, mut hits, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let mut group_hits = 0;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            group_hits += usize::from(sorted[j].1);
            j += 1;
        }
        seen += j - i;
        hits += group_hits;
        if group_hits > 0 {
            ap += (hits as f64 / seen as f64) * group_hits as f64;
        }
        i = j;
    }
    ap / positives as f64
}

/// GAP, or `None` when no record has a true label.
pub fn try_global_average_precision(records: &[EvalRecord], top_n: usize) -> Result<Option<f64>> {
    check_nonempty(records)?;
    if top_n == 0 {
        return Err(MetricsError::Contract("top_n must be at least 1".into()));
    }
    let mut pooled: Vec<(f64, &str, usize, bool)> = Vec::new();
    let mut positives = 0;
    for r in records {
        positives += r.truth.count().min(top_n);
        for &label in ranked_labels(&r.scores).iter().take(top_n) {
            pooled.push((r.scores[label], &r.video_id, label, r.truth.contains(label)));
        }
    }
    if positives == 0 {
        return Ok(None);
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    let sorted: Vec<(f64, bool)> = pooled.iter().map(|p| (p.0, p.3)).collect();
    Ok(Some(tie_group_ap(&sorted, positives)))
}

/// Area under the precision-recall curve of the pooled top-`top_n` predictions.
pub fn global_average_precision(records: &[EvalRecord], top_n: usize) -> Result<f64> {
    try_global_average_precision(records, top_n)?
        .ok_or_else(|| MetricsError::Contract("GAP needs at least one true label".into()))
}

/// Per-class AP averaged over classes with a positive; `None` when there are none.
pub fn try_mean_average_precision(records: &[EvalRecord]) -> Result<Option<f64>> {
    let k = check_nonempty(records)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let (mut total, mut classes) = (0.0, 0usize);
    for c in 0..k {
        let positives = records.iter().filter(|r| r.truth.contains(c)).count();
        if positives == 0 {
            continue;
        }
        order.sort_by(|&a, &b| {
            records[b].scores[c]
                .total_cmp(&records[a].scores[c])
                .then_with(|| records[a].video_id.cmp(&records[b].video_id))
                .then(a.cmp(&b))
        });
        let sorted: Vec<(f64, bool)> = order.iter().map(|&i| (records[i].scores[c], records[i].truth.contains(c))).collect();
        total += tie_group_ap(&sorted, positives);
        classes += 1;
    }
    Ok((classes > 0).then(|| total / classes as f64))
}

pub fn mean_average_precision(records: &[EvalRecord]) -> Result<f64> {
    try_mean_average_precision(records)?
        .ok_or_else(|| MetricsError::Contract("MAP needs a class with at least one positive".into()))
}

/// Mean over records and the number of records skipped for empty truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub value: Option<f64>,
    pub skipped: usize,
}

/// Precision among each record's top-|truth| labels, averaged over records with nonempty truth.
pub fn precision_at_equal_recall(records: &[EvalRecord]) -> Result<Averaged> {
    check_nonempty(records)?;
    let (mut total, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for r in records {
        let m = r.truth.count();
        if m == 0 {
            skipped += 1;
            continue;
        }
        let hits = ranked_labels(&r.scores).iter().take(m).filter(|&&l| r.truth.contains(l)).count();
        total += hits as f64 / m as f64;
        used += 1;
    }
    Ok(Averaged { value: (used > 0).then(|| total / used as f64), skipped })
}

/// Fraction of records whose top label (lowest id on ties) is true.
pub fn hit_at_one(records: &[EvalRecord]) -> Result<f64> {
    check_nonempty(records)?;
    let hits = records.iter().filter(|r| r.truth.contains(ranked_labels(&r.scores)[0])).count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub gap: Option<f64>,
    pub map: Option<f64>,
    pub perr: Option<f64>,
    pub hit1: Option<f64>,
    /// Records without a true label, excluded from PERR and Hit@1.
    pub skipped_records: usize,
}

impl MetricSet {
    /// All four metrics; records with empty truth are left out of PERR and Hit@1.
    pub fn compute(records: &[EvalRecord], top_n: usize) -> Result<Self> {
        let gap = try_global_average_precision(records, top_n)?;
        let map = try_mean_average_precision(records)?;
        let perr = precision_at_equal_recall(records)?;
        let labelled: Vec<EvalRecord> = records.iter().filter(|r| !r.truth.is_empty()).cloned().collect();
        let hit1 = if labelled.is_empty() { None } else { Some(hit_at_one(&labelled)?) };
        Ok(MetricSet { gap, map, perr: perr.value, hit1, skipped_records: perr.skipped })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "gap" => self.gap,
            "map" => self.map,
            "perr" => self.perr,
            "hit1" => self.hit1,
            _ => None,
        }
    }
}

pub const METRIC_NAMES: [&str; 4] = ["gap", "map", "perr", "hit1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    pub labels: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub report_version: u32,
    pub top_n: usize,
    /// PERR averages per record, not per class.
    pub perr_definition: String,
    pub records: usize,
    pub overall: MetricSet,
    pub per_level: Vec<LevelMetrics>,
}

impl MetricReport {
    /// Rows `Overall, Level 0, …` with one value per metric.
    pub fn rows(&self) -> Vec<(String, &MetricSet)> {
        let mut rows = vec![("Overall".to_string(), &self.overall)];
        rows.extend(self.per_level.iter().map(|l| (format!("Level {}", l.level), &l.metrics)));
        rows
    }

    /// Fixed-width human table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10}{:>9}{:>9}{:>9}{:>9}\n", "", "GAP", "MAP", "PERR", "Hit@1");
        for (name, m) in self.rows() {
            out.push_str(&format!("{name:<10}"));
            for metric in METRIC_NAMES {
                out.push_str(&m.get(metric).map_or(format!("{:>9}", "-"), |v| format!("{:>9.4}", v)));
            }
            out.push('\n');
        }
        out
    }
}

/// Overall metrics over the flat label space plus the same metrics per taxonomy level.
pub fn per_level_report(records: &[EvalRecord], tax: &Taxonomy, top_n: usize) -> Result<MetricReport> {
    let k = check_nonempty(records)?;
    if k != tax.len() {
        return Err(MetricsError::Contract(format!("records cover {k} labels, taxonomy has {}", tax.len())));
    }
    let overall = MetricSet::compute(records, top_n)?;
    let mut per_level = Vec::new();
    for level in 0..=tax.max_level() {
        let ids = tax.nodes_at_level(level)?;
        let restricted: Vec<EvalRecord> = records.iter().map(|r| r.restrict(&ids)).collect();
        per_level.push(LevelMetrics { level, labels: ids.len(), metrics: MetricSet::compute(&restricted, top_n)? });
    }
    Ok(MetricReport {
        report_version: REPORT_VERSION,
        top_n,
        perr_definition: "per-record".into(),
        records: records.len(),
        overall,
        per_level,
    })
}

/// CSV with rows `Overall, Level 0, …` and one column per model, for one metric per block.
pub fn comparison_csv(reports: &[(String, MetricReport)]) -> String {
    let mut out = String::from("metric,row");
    for (name, _) in reports {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let Some((_, first)) = reports.first() else { return out };
    let row_names: Vec<String> = first.rows().into_iter().map(|(n, _)| n).collect();
    for metric in METRIC_NAMES {
        for (i, row) in row_names.iter().enumerate() {
            out.push_str(&format!("{metric},{row}"));
            for (_, rep) in reports {
                let v = rep.rows().get(i).and_then(|(_, m)| m.get(metric));
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, scores: &[f64], truth: &[usize]) -> EvalRecord {
        EvalRecord::new(id, scores.to_vec(), LabelSet::from_ids(scores.len(), truth)).unwrap()
    }

    #[test]
    fn perfect_rankings_score_exactly_one() {
        let recs: Vec<EvalRecord> = (0..300).map(|i| rec(&format!("v{i:03}"), &[0.9, 0.8, 0.3 + (i % 7) as f64 * 0.01], &[0, 1])).collect();
        assert_eq!(global_average_precision(&recs, 20).unwrap(), 1.0);
        assert_eq!(mean_average_precision(&recs).unwrap(), 1.0);
    }

    #[test]
    fn gap_hand_cases() {
        assert_eq!(global_average_precision(&[rec("a", &[0.9, 0.1], &[0])], 20).unwrap(), 1.0);
        assert_eq!(global_average_precision(&[rec("a", &[0.9, 0.1], &[1])], 20).unwrap(), 0.5);
        assert!(global_average_precision(&[], 20).is_err());
    }

    #[test]
    fn map_hand_case() {
        let recs = [rec("a", &[0.9], &[0]), rec("b", &[0.5], &[]), rec("c", &[0.1], &[0])];
        let v = mean_average_precision(&recs).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perr_hand_case() {
        let r = rec("a", &[0.9, 0.1, 0.8], &[0, 1]);
        assert_eq!(precision_at_equal_recall(&[r]).unwrap().value, Some(0.5));
        let empty = rec("b", &[0.2, 0.3, 0.4], &[]);
        let got = precision_at_equal_recall(&[rec("a", &[0.9, 0.1, 0.8], &[0, 2]), empty]).unwrap();
        assert_eq!(got, Averaged { value: Some(1.0), skipped: 1 });
    }

    #[test]
    fn hit_at_one_cases() {
        let recs = [rec("a", &[0.9, 0.1], &[0]), rec("b", &[0.9, 0.1], &[1])];
        assert_eq!(hit_at_one(&recs).unwrap(), 0.5);
        // A tie goes to label 0.
        assert_eq!(hit_at_one(&[rec("c", &[0.5, 0.5], &[0])]).unwrap(), 1.0);
        assert_eq!(hit_at_one(&[rec("c", &[0.5, 0.5], &[1])]).unwrap(), 0.0);
    }

    #[test]
    fn gap_ignores_duplicate_records() {
        let base = vec![rec("a", &[0.9, 0.4, 0.4], &[1]), rec("b", &[0.3, 0.6, 0.4], &[0, 2])];
        let mut doubled = base.clone();
        doubled.extend(base.clone());
        assert_eq!(
            global_average_precision(&base, 2).unwrap(),
            global_average_precision(&doubled, 2).unwrap()
        );
    }

    #[test]
    fn single_level_report_matches_overall() {
        let tax = Taxonomy::from_parents(&[(None, "a"), (None, "b"), (None, "c")]).unwrap();
        let recs = [rec("x", &[0.2, 0.7, 0.1], &[1]), rec("y", &[0.6, 0.3, 0.5], &[0, 2])];
        let rep = per_level_report(&recs, &tax, 20).unwrap();
        assert_eq!(rep.per_level.len(), 1);
        assert_eq!(rep.per_level[0].metrics, rep.overall);
    }

    #[test]
    fn deeper_levels_skip_records_without_truth_there() {
        let tax = Taxonomy::from_parents(&[(None, "a"), (Some(0), "a1"), (None, "b")]).unwrap();
        let recs = [rec("x", &[0.9, 0.2, 0.1], &[0]), rec("y", &[0.1, 0.8, 0.9], &[0, 1])];
        let rep = per_level_report(&recs, &tax, 20).unwrap();
        assert_eq!(rep.per_level[1].metrics.skipped_records, 1);
        assert_eq!(rep.per_level[1].metrics.hit1, Some(1.0));
        assert_eq!(rep.per_level[1].metrics.perr, Some(1.0));
        assert_eq!(comparison_csv(&[("m".into(), rep)]).lines().count(), 1 + 4 * 3);
    }
}
