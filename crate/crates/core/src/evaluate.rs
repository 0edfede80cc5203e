//! ROUGE-1 and speaker-classification metrics.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::notes::{render_note_text, ClinicalNote, NoteError, NoteKind};
use crate::text::tokenize;
use crate::transcript::SpeakerLabel;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and gold lengths differ ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no labels to compare")]
    EmptyInput,
    #[error("confusion matrix has no observations")]
    EmptyMatrix,
    #[error("corpus has no samples")]
    EmptyCorpus,
    #[error("sample {sample_id}: {reason}")]
    InvalidNote { sample_id: String, reason: String },
}

/// 2x2 confusion counts with Patient as the positive class.
///
/// Construction rejects an all-zero matrix, so the ratio metrics are always
/// defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Result<Self, EvalError> {
        if tp + fp + tn + fn_ == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        Ok(Self { tp, fp, tn, fn_ })
    }

    pub fn tp(&self) -> u64 {
        self.tp
    }
    pub fn fp(&self) -> u64 {
        self.fp
    }
    pub fn tn(&self) -> u64 {
        self.tn
    }
    pub fn fn_(&self) -> u64 {
        self.fn_
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[SpeakerLabel], golds: &[SpeakerLabel]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        match (p, g) {
            (SpeakerLabel::Patient, SpeakerLabel::Patient) => tp += 1,
            (SpeakerLabel::Patient, SpeakerLabel::Clinician) => fp += 1,
            (SpeakerLabel::Clinician, SpeakerLabel::Clinician) => tn += 1,
            (SpeakerLabel::Clinician, SpeakerLabel::Patient) => fn_ += 1,
        }
    }
    ConfusionMatrix::new(tp, fp, tn, fn_)
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    (cm.tp + cm.tn) as f64 / cm.total() as f64
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision, recall and F1 for the Patient class; zero denominators give 0.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let p = ratio(cm.tp, cm.tp + cm.fp);
    let r = ratio(cm.tp, cm.tp + cm.fn_);
    (p, r, f1_from(p, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationMetrics {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        let (precision, recall, f1) = precision_recall_f1(cm);
        Self { accuracy: accuracy(cm), precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub candidate_unigrams: usize,
    pub reference_unigrams: usize,
    pub overlap: usize,
}

/// ROUGE-1 over lowercase alphanumeric tokens with clipped unigram counts.
pub fn rouge1_f1(candidate: &str, reference: &str) -> RougeScore {
    rouge1_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge1_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *ref_counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut overlap = 0;
    for t in candidate {
        if let Some(c) = ref_counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    let precision = ratio(overlap as u64, candidate.len() as u64);
    let recall = ratio(overlap as u64, reference.len() as u64);
    RougeScore {
        precision,
        recall,
        f1: f1_from(precision, recall),
        candidate_unigrams: candidate.len(),
        reference_unigrams: reference.len(),
        overlap,
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub sample_id: String,
    pub model_id: String,
    pub kind: NoteKind,
    pub candidate: Value,
    pub reference: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub sample_id: String,
    pub kind: NoteKind,
    pub model_id: String,
    pub rouge1_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAggregate {
    pub model_id: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<ModelAggregate>,
}

impl EvaluationReport {
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then_with(|| a.model_id.cmp(&b.model_id)));
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for row in &rows {
            groups.entry(&row.model_id).or_default().push(row.rouge1_f1);
        }
        let aggregates = groups
            .into_iter()
            .map(|(model_id, scores)| ModelAggregate {
                model_id: model_id.to_string(),
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                min: scores.iter().copied().fold(f64::INFINITY, f64::min),
                max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                count: scores.len(),
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "kind", "model_id", "rouge1_f1"])?;
        for r in &self.rows {
            w.write_record([r.sample_id.as_str(), r.kind.as_str(), r.model_id.as_str(), &format!("{:.6}", r.rouge1_f1)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model_id", "mean", "min", "max"])?;
        for a in &self.aggregates {
            w.write_record([
                a.model_id.clone(),
                format!("{:.6}", a.mean),
                format!("{:.6}", a.min),
                format!("{:.6}", a.max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rendered(doc: &Value, kind: NoteKind, sample_id: &str, which: &str) -> Result<String, EvalError> {
    ClinicalNote::from_json(doc, kind)
        .map(|n| render_note_text(&n))
        .map_err(|e: NoteError| EvalError::InvalidNote { sample_id: sample_id.to_string(), reason: format!("{which}: {e}") })
}

/// Scores each candidate note against its reference on the rendered text.
pub fn evaluate_corpus(samples: &[Sample]) -> Result<EvaluationReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let rows = samples
        .iter()
        .map(|s| {
            let cand = rendered(&s.candidate, s.kind, &s.sample_id, "candidate")?;
            let reference = rendered(&s.reference, s.kind, &s.sample_id, "reference")?;
            Ok(ReportRow {
                sample_id: s.sample_id.clone(),
                kind: s.kind,
                model_id: s.model_id.clone(),
                rouge1_f1: rouge1_f1(&cand, &reference).f1,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvaluationReport::from_rows(rows))
}
