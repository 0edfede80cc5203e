use std::fmt::Write;

use super::{BirpNote, ClinicalNote, FollowUpPlan, Interventions, ProgressResponse, SoapNote, SymptomEntry};

/// Section-headed plain text for display and ROUGE scoring.
pub fn render_note_text(note: &ClinicalNote) -> String {
    let mut out = String::new();
    match note {
        ClinicalNote::Soap(n) => soap(n, &mut out),
        ClinicalNote::Birp(n) => birp(n, &mut out),
    }
    out
}

fn line(out: &mut String, label: &str, value: &str) {
    let _ = writeln!(out, "{label}: {value}");
}

fn symptoms(out: &mut String, symptoms: &[SymptomEntry]) {
    for (i, s) in symptoms.iter().enumerate() {
        let _ = writeln!(out, "Symptom {}:", i + 1);
        line(out, "  Symptom Description", &s.description);
        line(out, "  Onset", &s.onset);
        line(out, "  Frequency", &s.frequency);
        line(out, "  Ascendance", &s.ascendance);
        line(out, "  Intensity", &s.intensity);
        line(out, "  Duration", &s.duration);
        line(out, "  Quote (Symptom)", &s.quote);
    }
}

fn interventions(out: &mut String, iv: &Interventions) {
    line(out, "Therapeutic Approach or Modality", &iv.approach);
    out.push_str("Psychological Interventions:\n");
    for item in &iv.interventions {
        let _ = writeln!(out, "  - {item}");
    }
    line(out, "Rationale", &iv.rationale);
}

fn progress(out: &mut String, p: &ProgressResponse) {
    line(out, "Response to Treatment", &p.response_to_treatment);
    line(out, "Specific Examples or Instances", &p.examples);
    line(out, "Quote (Progress)", &p.progress_quote);
    line(out, "Challenges to Progress", &p.challenges);
    line(out, "Therapist Observations and Reflections", &p.therapist_observations);
    line(out, "Therapeutic Alliance", &p.therapeutic_alliance);
}

fn plan(out: &mut String, p: &FollowUpPlan) {
    out.push_str("PLAN\n");
    line(out, "Homework", &p.homework);
    line(out, "Plan for Future Session", &p.future_session);
    line(out, "Plans for Continued Treatment", &p.continued_treatment);
    line(out, "Coordination of Care", &p.coordination_of_care);
}

fn soap(n: &SoapNote, out: &mut String) {
    let s = &n.subjective;
    out.push_str("SUBJECTIVE\n");
    line(out, "Chief Complaint", &s.chief_complaint);
    if let Some(q) = &s.chief_complaint_quote {
        line(out, "Quote (Chief Complaint)", q);
    }
    line(out, "Impairments and Challenges", &s.impairments);
    if let Some(q) = &s.impairments_quote {
        line(out, "Quote (Impairments and Challenges)", q);
    }
    line(out, "Medical History", &s.medical_history);
    symptoms(out, &s.symptoms);

    let o = &n.objective;
    out.push_str("\nOBJECTIVE\n");
    line(out, "Assessment Tool", &o.clinical_assessment.tool);
    line(out, "Results", &o.clinical_assessment.results);
    line(out, "Status", &o.clinical_assessment.status);
    line(out, "Risks or Safety Concerns", &o.risk_assessment);
    interventions(out, &o.interventions);

    out.push_str("\nASSESSMENT\n");
    progress(out, &n.assessment);

    out.push('\n');
    plan(out, &n.plan);
}

fn birp(n: &BirpNote, out: &mut String) {
    out.push_str("BEHAVIOR\n");
    symptoms(out, &n.behavior.symptoms);
    line(out, "Therapist Observations and Reflections", &n.behavior.therapist_observations);
    interventions(out, &n.behavior.interventions);

    out.push_str("\nRESPONSE\n");
    progress(out, &n.response);

    out.push('\n');
    plan(out, &n.plan);
}
