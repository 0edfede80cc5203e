use serde_json::Value;

use super::{complete_note, Gateway, GenerationError, NoteOutcome};
use crate::prompts::{combine_ensemble, EnsembleChoice, EnsembleSpec, PromptError};
use crate::transcript::DiarizedTranscript;

#[derive(Debug)]
pub struct EnsembleOutcome {
    /// One result per member, in member order.
    pub members: Vec<Result<NoteOutcome, GenerationError>>,
    pub choice: EnsembleChoice,
}

/// Generates one note per ensemble member and combines the successful ones.
///
/// `gateways` is looked up by each member's backend id. Members run
/// sequentially so the result does not depend on scheduling.
pub fn run_ensemble(
    spec: &EnsembleSpec,
    gateways: &[&Gateway],
    transcript: &DiarizedTranscript,
) -> Result<EnsembleOutcome, GenerationError> {
    let kind = spec.members()[0].1.kind;
    if spec.members().iter().any(|(_, t)| t.kind != kind) {
        return Err(PromptError::InvalidTemplate("ensemble members must share a note kind".into()).into());
    }
    let mut members = Vec::new();
    for (backend_id, template) in spec.members() {
        let gw = gateways
            .iter()
            .find(|g| g.id() == backend_id)
            .ok_or_else(|| PromptError::InvalidTemplate(format!("no gateway with id `{backend_id}`")))?;
        members.push(complete_note(gw, template, transcript));
    }
    let candidates: Vec<Value> = members.iter().flatten().map(|o| o.note.clone()).collect();
    let positions: Vec<usize> = members.iter().enumerate().filter(|(_, r)| r.is_ok()).map(|(i, _)| i).collect();
    let mut choice = combine_ensemble(&candidates, kind)?;
    // Report indices and scores against member positions.
    let mut scores = vec![None; members.len()];
    for (k, &pos) in positions.iter().enumerate() {
        scores[pos] = choice.scores[k];
    }
    choice.index = positions[choice.index];
    choice.scores = scores;
    Ok(EnsembleOutcome { members, choice })
}
