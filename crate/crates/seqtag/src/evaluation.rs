//! Entity-level scoring: strict span+type matching, per-class
//! precision/recall/F1, unweighted macro averages, and a TSV report.

use std::collections::BTreeSet;

use crate::corpus::{repair_bio, spans_from_bio, EntitySpan, EntityType, LabelVocab, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassScore {
    pub entity_type: EntityType,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    fn from_counts(entity_type: EntityType, tp: usize, fp: usize, fn_count: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScore {
            entity_type,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_count,
            precision,
            recall,
            f1,
        }
    }
}

/// Per-class scores in declared class order plus unweighted macro means
/// over all declared classes, zero-score classes included.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn class(&self, t: EntityType) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.entity_type == t)
    }
}

/// Unweighted arithmetic mean, one value per declared class.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Scores predictions against gold: a predicted span counts as a true
/// positive iff the same (type, start, end) exists in the gold spans of
/// the same sentence. Predictions are BIO-repaired first; gold must
/// already be valid.
pub fn score_sentences(
    gold: &[Sentence],
    pred: &[Vec<String>],
    vocab: &LabelVocab,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            sentence: gold.len().min(pred.len()),
            msg: format!(
                "{} gold sentences but {} predictions",
                gold.len(),
                pred.len()
            ),
        });
    }
    let types = vocab.entity_types();
    let type_slot = |t: EntityType| types.iter().position(|&u| u == t);
    let mut tp = vec![0usize; types.len()];
    let mut fp = vec![0usize; types.len()];
    let mut fn_count = vec![0usize; types.len()];

    for (idx, (sentence, tags)) in gold.iter().zip(pred).enumerate() {
        let gold_tags = sentence.gold_tags.as_ref().ok_or(Error::Alignment {
            sentence: idx,
            msg: "gold sentence has no tags".to_string(),
        })?;
        if gold_tags.len() != tags.len() {
            return Err(Error::Alignment {
                sentence: idx,
                msg: format!(
                    "gold has {} tokens but prediction has {}",
                    gold_tags.len(),
                    tags.len()
                ),
            });
        }
        let gold_spans = spans_from_bio(gold_tags).map_err(|e| Error::Alignment {
            sentence: idx,
            msg: format!("invalid gold BIO: {e}"),
        })?;
        let pred_spans: BTreeSet<EntitySpan> =
            spans_from_bio(&repair_bio(tags)).expect("repaired tags are valid");

        for span in &pred_spans {
            if let Some(slot) = type_slot(span.entity_type) {
                if gold_spans.contains(span) {
                    tp[slot] += 1;
                } else {
                    fp[slot] += 1;
                }
            }
        }
        for span in &gold_spans {
            if let Some(slot) = type_slot(span.entity_type) {
                if !pred_spans.contains(span) {
                    fn_count[slot] += 1;
                }
            }
        }
    }

    let per_class: Vec<ClassScore> = types
        .iter()
        .enumerate()
        .map(|(slot, &t)| ClassScore::from_counts(t, tp[slot], fp[slot], fn_count[slot]))
        .collect();
    let collect = |f: fn(&ClassScore) -> f64| -> Vec<f64> { per_class.iter().map(f).collect() };
    Ok(EvalReport {
        macro_precision: macro_average(&collect(|c| c.precision)),
        macro_recall: macro_average(&collect(|c| c.recall)),
        macro_f1: macro_average(&collect(|c| c.f1)),
        per_class,
    })
}

/// TSV rendering: header, one row per class in declared order, then the
/// macro-average row; four decimal places throughout.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::from("class\tprec\trec\tf1\n");
    for c in &report.per_class {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            c.entity_type, c.precision, c.recall, c.f1
        ));
    }
    out.push_str(&format!(
        "average\t{:.4}\t{:.4}\t{:.4}\n",
        report.macro_precision, report.macro_recall, report.macro_f1
    ));
    out
}
