//! Speaker attribution for undiarized transcripts.
//!
//! Each sentence-sized segment gets a two-class decision (clinician or
//! patient) from a [`SpeakerPredictor`]; consecutive segments by the same
//! speaker merge into one utterance. Two predictors exist: the local
//! bag-of-words [`ClassifierModel`] and an LLM prompted to emit the tagged
//! format directly ([`classify_with_llm`]).

mod llm;
mod model;

use serde::{Deserialize, Serialize};

use crate::transcript::{segment_utterances, DiarizedTranscript, RawTranscript, SpeakerLabel, TranscriptError};

pub use llm::{classify_with_llm, LlmClassifyError};
pub use model::{
    featurize, objective, objective_gradient, train, train_with_trace, ClassifierModel, Features, LabeledExample,
    TrainingConfig, TrainingMeta, Vocabulary,
};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPSILON: f64 = 1e-12;

/// Probabilities closer than this count as a tie, resolved to the clinician.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClassifyError {
    #[error("logits must be finite")]
    NonFiniteInput,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains only {0} examples; both speakers are required")]
    DegenerateDataset(SpeakerLabel),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("feature index {index} out of range for vocabulary of {len} terms")]
    FeatureOutOfRange { index: usize, len: usize },
    #[error("invalid model document: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

/// Raw two-class scores, index 0 clinician and 1 patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logits([f64; 2]);

impl Logits {
    pub fn new(clinician: f64, patient: f64) -> Result<Self, ClassifyError> {
        if !(clinician.is_finite() && patient.is_finite()) {
            return Err(ClassifyError::NonFiniteInput);
        }
        Ok(Self([clinician, patient]))
    }

    pub fn values(&self) -> [f64; 2] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPair([f64; 2]);

impl ProbabilityPair {
    pub fn clinician(&self) -> f64 {
        self.0[0]
    }

    pub fn patient(&self) -> f64 {
        self.0[1]
    }

    pub fn values(&self) -> [f64; 2] {
        self.0
    }

    pub fn of(&self, label: SpeakerLabel) -> f64 {
        self.0[label.code() as usize]
    }

    /// Arg-max label; near-ties go to the clinician.
    pub fn label(&self) -> SpeakerLabel {
        if (self.0[0] - self.0[1]).abs() < TIE_TOLERANCE || self.0[0] > self.0[1] {
            SpeakerLabel::Clinician
        } else {
            SpeakerLabel::Patient
        }
    }
}

/// Softmax with max-subtraction, so large logits do not overflow.
pub fn softmax(z: &Logits) -> ProbabilityPair {
    let [a, b] = z.0;
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let sum = ea + eb;
    ProbabilityPair([ea / sum, eb / sum])
}

/// Un-averaged binary cross-entropy over `(true label, P(patient))` pairs.
///
/// Probabilities are clamped to `[ε, 1-ε]` first.
pub fn cross_entropy(examples: &[(SpeakerLabel, f64)]) -> Result<f64, ClassifyError> {
    if examples.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    Ok(examples
        .iter()
        .map(|&(y, p)| {
            let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
            let y = y.code() as f64;
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

/// Anything that can label one utterance.
pub trait SpeakerPredictor {
    fn predict(&self, text: &str) -> (SpeakerLabel, ProbabilityPair);
}

/// Segments the raw text, labels each segment and merges speaker runs.
pub fn classify_transcript<P: SpeakerPredictor + ?Sized>(
    predictor: &P,
    raw: &RawTranscript,
) -> Result<DiarizedTranscript, ClassifyError> {
    let segments = segment_utterances(raw)?;
    let runs: Vec<(SpeakerLabel, String)> = segments.into_iter().map(|s| (predictor.predict(&s).0, s)).collect();
    Ok(DiarizedTranscript::new(raw.source_id(), runs)?)
}
