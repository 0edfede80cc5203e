//! Clinical note generation from patient-clinician conversation transcripts.
//!
//! The crate is organised as a pipeline:
//!
//! * [`transcript`] parses and renders diarized transcripts (`[0] ... [1] ...`).
//! * [`classify`] attributes undiarized utterances to a speaker, either with a
//!   local bag-of-words logistic model or by delegating to an LLM backend.
//! * [`notes`] holds the SOAP/BIRP note model, its JSON Schema and a PII scanner.
//! * [`prompts`] renders the prompting strategies, chain plans and ensembles.
//! * [`gateway`] talks to chat-completion backends (HTTP or scripted mock).
//! * [`refine`] updates notes across encounters over a hash-chained store.
//! * [`evaluate`] computes ROUGE-1 and classification metrics.
//! * [`cli`] wires everything into the `clinote` command.

pub mod classify;
pub mod clock;
pub mod cli;
pub mod digest;
pub mod evaluate;
pub mod gateway;
pub mod notes;
pub mod prompts;
pub mod refine;
pub mod text;
pub mod transcript;

pub use classify::{ClassifierModel, ProbabilityPair, TrainingConfig};
pub use evaluate::{ConfusionMatrix, EvaluationReport, RougeScore};
pub use gateway::{Gateway, GatewayError};
pub use notes::{BirpNote, NoteKind, SoapNote};
pub use prompts::{PromptTemplate, RenderedPrompt, Strategy};
pub use refine::{NoteStore, NoteVersion};
pub use transcript::{DiarizedTranscript, RawTranscript, SpeakerLabel, Utterance};
