//! `clinote eval`: candidate notes live in `<candidates>/<model_id>/<sample_id>.json`
//! (files directly under `<candidates>` count as model `candidate`), references
//! in `<references>/<sample_id>.json`. `*.provenance.json` sidecars written by
//! `generate` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{read_text, write_file, CmdResult, Failure, EXIT_IO, EXIT_OK, EXIT_UNMATCHED};
use crate::evaluate::{evaluate_corpus, Sample};
use crate::notes::NoteKind;

pub(crate) const DEFAULT_MODEL_ID: &str = "candidate";
const PROVENANCE_SUFFIX: &str = ".provenance.json";

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = entries
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", dir.display())))?;
    paths.sort();
    Ok(paths)
}

fn json_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .filter(|p| !p.to_string_lossy().ends_with(PROVENANCE_SUFFIX))
        .filter_map(|p| Some((p.file_stem()?.to_string_lossy().into_owned(), p)))
        .collect())
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn aggregates_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    output.with_file_name(format!("{stem}_aggregates.csv"))
}

pub(crate) fn cmd_eval(candidates: &Path, references: &Path, output: &Path, out: &mut dyn Write) -> CmdResult {
    let refs = json_files(references)?;
    let mut cands: Vec<(String, String, PathBuf)> = Vec::new();
    for (sample, path) in json_files(candidates)? {
        cands.push((DEFAULT_MODEL_ID.to_string(), sample, path));
    }
    for sub in list_dir(candidates)?.into_iter().filter(|p| p.is_dir()) {
        let model = sub.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (sample, path) in json_files(&sub)? {
            cands.push((model.clone(), sample, path));
        }
    }

    let covered: BTreeSet<&str> = cands.iter().map(|(_, s, _)| s.as_str()).collect();
    let mut unmatched: Vec<String> = cands
        .iter()
        .filter(|(_, s, _)| !refs.contains_key(s))
        .map(|(m, s, _)| format!("candidate {m}/{s} has no reference"))
        .collect();
    unmatched.extend(refs.keys().filter(|s| !covered.contains(s.as_str())).map(|s| format!("reference {s} has no candidate")));
    if !unmatched.is_empty() {
        return Err(Failure::new(EXIT_UNMATCHED, format!("unmatched sample ids:\n{}", unmatched.join("\n"))));
    }

    let mut samples = Vec::new();
    for (model_id, sample_id, path) in cands {
        let reference = read_json(&refs[&sample_id])?;
        let kind = NoteKind::detect(&reference)
            .ok_or_else(|| Failure::new(EXIT_IO, format!("{}: not a SOAP or BIRP note", refs[&sample_id].display())))?;
        samples.push(Sample { sample_id, model_id, kind, candidate: read_json(&path)?, reference });
    }
    let report = evaluate_corpus(&samples).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;

    let mut rows = Vec::new();
    report.write_rows_csv(&mut rows).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let mut aggs = Vec::new();
    report.write_aggregates_csv(&mut aggs).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    write_file(output, rows)?;
    let agg_path = aggregates_path(output);
    write_file(&agg_path, aggs)?;
    let _ = writeln!(out, "scored {} sample(s); wrote {} and {}", report.rows.len(), output.display(), agg_path.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_name() {
        assert_eq!(aggregates_path(Path::new("out/report.csv")), Path::new("out/report_aggregates.csv"));
    }
}
