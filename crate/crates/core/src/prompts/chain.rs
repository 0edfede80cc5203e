use serde::Serialize;

use super::{PromptError, PromptTemplate, Strategy};
use crate::notes::NoteKind;

/// Data flowing between chain stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The encounter transcript (always available).
    Transcript,
    /// The latest stored note (always available when refining).
    PriorNote,
    Summary,
    Note,
}

impl Role {
    fn is_source(self) -> bool {
        matches!(self, Role::Transcript | Role::PriorNote)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StagePrompt {
    Note(PromptTemplate),
    Extract { kind: NoteKind },
    Integrate { kind: NoteKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStage {
    pub name: String,
    pub prompt: StagePrompt,
    pub inputs: Vec<Role>,
    pub output: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    Generate,
    Refine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPlan {
    stages: Vec<ChainStage>,
}

impl ChainPlan {
    /// Checks that there is at least one stage and that every input is a
    /// source role or the output of an earlier stage.
    pub fn new(stages: Vec<ChainStage>) -> Result<Self, PromptError> {
        if stages.is_empty() {
            return Err(PromptError::InvalidChain("plan has no stages".into()));
        }
        let mut produced: Vec<Role> = Vec::new();
        for stage in &stages {
            if let Some(missing) = stage.inputs.iter().find(|r| !r.is_source() && !produced.contains(r)) {
                return Err(PromptError::InvalidChain(format!(
                    "stage `{}` reads {missing:?} before any stage produces it",
                    stage.name
                )));
            }
            if stage.output.is_source() {
                return Err(PromptError::InvalidChain(format!("stage `{}` overwrites a source role", stage.name)));
            }
            produced.push(stage.output);
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[ChainStage] {
        &self.stages
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }
}

pub fn build_chain(kind: NoteKind, mode: ChainMode) -> ChainPlan {
    let stages = match mode {
        ChainMode::Generate => vec![ChainStage {
            name: "generate".into(),
            prompt: StagePrompt::Note(PromptTemplate::builtin(Strategy::Structured, kind)),
            inputs: vec![Role::Transcript],
            output: Role::Note,
        }],
        ChainMode::Refine => vec![
            ChainStage {
                name: "extract".into(),
                prompt: StagePrompt::Extract { kind },
                inputs: vec![Role::Transcript],
                output: Role::Summary,
            },
            ChainStage {
                name: "integrate".into(),
                prompt: StagePrompt::Integrate { kind },
                inputs: vec![Role::PriorNote, Role::Summary],
                output: Role::Note,
            },
        ],
    };
    ChainPlan::new(stages).expect("built-in plans are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_plans() {
        let refine = build_chain(NoteKind::Soap, ChainMode::Refine);
        assert_eq!(refine.stage_names(), ["extract", "integrate"]);
        let gen = build_chain(NoteKind::Birp, ChainMode::Generate);
        assert_eq!(gen.stages().len(), 1);
        assert!(matches!(&gen.stages()[0].prompt, StagePrompt::Note(t) if t.strategy == Strategy::Structured));
    }

    #[test]
    fn forward_references_rejected() {
        let mut stages = build_chain(NoteKind::Soap, ChainMode::Refine).stages().to_vec();
        stages.swap(0, 1);
        assert!(matches!(ChainPlan::new(stages), Err(PromptError::InvalidChain(_))));
        assert!(matches!(ChainPlan::new(vec![]), Err(PromptError::InvalidChain(_))));
        let accepted = ChainPlan::new(build_chain(NoteKind::Soap, ChainMode::Refine).stages().to_vec());
        assert!(accepted.is_ok());
    }
}
