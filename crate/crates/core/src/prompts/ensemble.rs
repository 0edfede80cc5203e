use serde_json::Value;

use super::{PromptError, PromptTemplate};
use crate::evaluate::rouge1_f1;
use crate::notes::{render_note_text, ClinicalNote, NoteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combiner {
    #[default]
    MedoidByRouge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    members: Vec<(String, PromptTemplate)>,
    combiner: Combiner,
}

impl EnsembleSpec {
    pub fn new(members: Vec<(String, PromptTemplate)>, combiner: Combiner) -> Result<Self, PromptError> {
        if members.len() < 2 {
            return Err(PromptError::TooFewMembers);
        }
        Ok(Self { members, combiner })
    }

    pub fn members(&self) -> &[(String, PromptTemplate)] {
        &self.members
    }

    pub fn combiner(&self) -> Combiner {
        self.combiner
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleChoice {
    /// Position of the chosen candidate in the input list.
    pub index: usize,
    pub note: Value,
    /// Medoid score per input; `None` for candidates that failed validation.
    pub scores: Vec<Option<f64>>,
    pub warning: Option<String>,
}

/// Picks the valid candidate whose rendered text has the largest summed
/// ROUGE-1 F1 against the other valid candidates. Ties go to the earliest.
pub fn combine_ensemble(candidates: &[Value], kind: NoteKind) -> Result<EnsembleChoice, PromptError> {
    let texts: Vec<Option<String>> = candidates
        .iter()
        .map(|c| ClinicalNote::from_json(c, kind).ok().map(|n| render_note_text(&n)))
        .collect();
    let valid: Vec<usize> = (0..candidates.len()).filter(|&i| texts[i].is_some()).collect();
    let mut warnings = Vec::new();
    if valid.len() < candidates.len() {
        warnings.push(format!("{} of {} candidates failed validation", candidates.len() - valid.len(), candidates.len()));
    }
    let Some(&first) = valid.first() else {
        return Err(PromptError::NoValidCandidates(kind));
    };
    let mut scores: Vec<Option<f64>> = vec![None; candidates.len()];
    for &i in &valid {
        let ti = texts[i].as_deref().expect("valid");
        let s = valid.iter().filter(|&&j| j != i).map(|&j| rouge1_f1(ti, texts[j].as_deref().expect("valid")).f1).sum();
        scores[i] = Some(s);
    }
    if valid.len() == 1 {
        warnings.push("single valid candidate returned as-is".into());
    }
    let mut best = first;
    for &i in &valid[1..] {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(EnsembleChoice {
        index: best,
        note: candidates[best].clone(),
        scores,
        warning: (!warnings.is_empty()).then(|| warnings.join("; ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notes::fixtures;
    use proptest::prelude::*;

    fn soap_with(words: &str) -> Value {
        let mut n = fixtures::soap();
        let set = |s: &mut String| *s = words.to_string();
        set(&mut n.subjective.chief_complaint);
        set(&mut n.subjective.impairments);
        set(&mut n.subjective.medical_history);
        n.subjective.impairments_quote = None;
        n.subjective.symptoms.clear();
        let o = &mut n.objective;
        for s in [&mut o.clinical_assessment.tool, &mut o.clinical_assessment.results, &mut o.clinical_assessment.status, &mut o.risk_assessment, &mut o.interventions.approach, &mut o.interventions.rationale] {
            set(s);
        }
        o.interventions.interventions.clear();
        let a = &mut n.assessment;
        for s in [&mut a.response_to_treatment, &mut a.examples, &mut a.progress_quote, &mut a.challenges, &mut a.therapist_observations, &mut a.therapeutic_alliance] {
            set(s);
        }
        let p = &mut n.plan;
        for s in [&mut p.homework, &mut p.future_session, &mut p.continued_treatment, &mut p.coordination_of_care] {
            set(s);
        }
        ClinicalNote::Soap(n).to_json()
    }

    #[test]
    fn identical_candidates_pick_first() {
        let a = soap_with("alpha");
        let c = combine_ensemble(&[a.clone(), a.clone(), a], NoteKind::Soap).unwrap();
        assert_eq!(c.index, 0);
        assert_eq!(c.scores[0], Some(2.0));
    }

    #[test]
    fn medoid_of_a_a_b() {
        // Section labels are shared text, so scores are compared, not fixed.
        let a = soap_with("alpha");
        let b = soap_with("omega");
        let c = combine_ensemble(&[a.clone(), a.clone(), b.clone()], NoteKind::Soap).unwrap();
        assert_eq!(c.index, 0);
        assert_eq!(c.note, a);
        assert!(c.scores[0] > c.scores[2]);
        assert_eq!(c.scores[0], c.scores[1]);
    }

    #[test]
    fn invalid_candidates_skipped() {
        let a = soap_with("alpha");
        assert_eq!(combine_ensemble(&[serde_json::json!({})], NoteKind::Soap), Err(PromptError::NoValidCandidates(NoteKind::Soap)));
        let c = combine_ensemble(&[serde_json::json!({"x": 1}), a.clone()], NoteKind::Soap).unwrap();
        assert_eq!(c.index, 1);
        assert!(c.warning.unwrap().contains("single valid candidate"));
        assert_eq!(c.scores[0], None);
    }

    #[test]
    fn spec_needs_two_members() {
        let t = PromptTemplate::builtin(super::super::Strategy::Basic, NoteKind::Soap);
        assert_eq!(EnsembleSpec::new(vec![("a".into(), t.clone())], Combiner::MedoidByRouge), Err(PromptError::TooFewMembers));
        assert!(EnsembleSpec::new(vec![("a".into(), t.clone()), ("b".into(), t)], Combiner::default()).is_ok());
    }

    proptest! {
        #[test]
        fn output_is_an_input(words in prop::collection::vec("[a-z]{1,5}( [a-z]{1,5}){0,3}", 1..6)) {
            let cands: Vec<Value> = words.iter().map(|w| soap_with(w)).collect();
            let c = combine_ensemble(&cands, NoteKind::Soap).unwrap();
            prop_assert_eq!(&cands[c.index], &c.note);
            let best = c.scores.iter().flatten().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(c.scores[c.index], Some(best));
            prop_assert!(c.scores[..c.index].iter().all(|s| s.unwrap() < best));
        }
    }
}
