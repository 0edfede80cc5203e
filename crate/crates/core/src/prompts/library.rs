//! Versioned prompt wording, stored as text files next to a manifest.
//!
//! `manifest.json`:
//!
//! ```json
//! {"format_version": 1, "resources": [{"name": "system", "file": "system.txt", "version": 1}]}
//! ```
//!
//! Resource text has trailing whitespace removed on load. `{{kind}}` and
//! `{{sections}}` placeholders are filled in when a prompt is built.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::PromptError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Resources every library must provide.
pub const REQUIRED_RESOURCES: &[&str] = &[
    "system",
    "instruction_basic",
    "instruction_zero_shot",
    "instruction_one_shot",
    "instruction_structured",
    "formatting_soap",
    "formatting_birp",
    "exemplar_soap_transcript",
    "exemplar_soap_note",
    "exemplar_birp_transcript",
    "exemplar_birp_note",
    "conditional",
    "extract",
    "integrate",
    "classify_system",
    "classify",
    "repair_note",
    "repair_summary",
    "repair_transcript",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub resources: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| PromptError::Manifest(e.to_string()))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(PromptError::Manifest(format!("unsupported format_version {}", m.format_version)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &m.resources {
            if !seen.insert(r.name.as_str()) {
                return Err(PromptError::Manifest(format!("duplicate resource `{}`", r.name)));
            }
            if r.file.contains('/') || r.file.contains('\\') || r.file.starts_with('.') {
                return Err(PromptError::Manifest(format!("resource file `{}` must be a plain file name", r.file)));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptResource {
    pub entry: ManifestEntry,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    resources: BTreeMap<String, PromptResource>,
}

macro_rules! builtin_files {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../../prompts/", $file)))),*]
    };
}

const BUILTIN_MANIFEST: &str = include_str!("../../prompts/manifest.json");
const BUILTIN_FILES: &[(&str, &str)] = builtin_files![
    "classify.txt",
    "classify_system.txt",
    "conditional.txt",
    "exemplar_birp_note.json",
    "exemplar_birp_transcript.txt",
    "exemplar_soap_note.json",
    "exemplar_soap_transcript.txt",
    "extract.txt",
    "formatting_birp.txt",
    "formatting_soap.txt",
    "instruction_basic.txt",
    "instruction_one_shot.txt",
    "instruction_structured.txt",
    "instruction_zero_shot.txt",
    "integrate.txt",
    "repair_note.txt",
    "repair_summary.txt",
    "repair_transcript.txt",
    "system.txt",
];

impl PromptLibrary {
    /// The wording compiled into the crate.
    pub fn builtin() -> &'static PromptLibrary {
        static LIB: OnceLock<PromptLibrary> = OnceLock::new();
        LIB.get_or_init(|| {
            let manifest = Manifest::parse(BUILTIN_MANIFEST).expect("builtin manifest");
            Self::assemble(manifest, |file| {
                BUILTIN_FILES.iter().find(|(f, _)| *f == file).map(|(_, t)| t.to_string()).ok_or_else(|| {
                    PromptError::MissingResource(file.to_string())
                })
            })
            .expect("builtin prompt library")
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| PromptError::Io(format!("{}: {e}", manifest_path.display())))?;
        let manifest = Manifest::parse(&text)?;
        Self::assemble(manifest, |file| {
            let p = dir.join(file);
            fs::read_to_string(&p).map_err(|e| PromptError::Io(format!("{}: {e}", p.display())))
        })
    }

    fn assemble(manifest: Manifest, mut read: impl FnMut(&str) -> Result<String, PromptError>) -> Result<Self, PromptError> {
        let mut resources = BTreeMap::new();
        for entry in manifest.resources {
            let text = read(&entry.file)?.trim_end().to_string();
            resources.insert(entry.name.clone(), PromptResource { entry, text });
        }
        if let Some(missing) = REQUIRED_RESOURCES.iter().find(|n| !resources.contains_key(**n)) {
            return Err(PromptError::MissingResource((*missing).to_string()));
        }
        Ok(Self { resources })
    }

    /// Writes the manifest and every resource file into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), PromptError> {
        let io = |e: std::io::Error| PromptError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        for r in self.resources.values() {
            fs::write(dir.join(&r.entry.file), format!("{}\n", r.text)).map_err(io)?;
        }
        fs::write(dir.join(MANIFEST_FILE), self.manifest().to_json()).map_err(io)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            resources: self.resources.values().map(|r| r.entry.clone()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&str, PromptError> {
        self.resources.get(name).map(|r| r.text.as_str()).ok_or_else(|| PromptError::MissingResource(name.to_string()))
    }

    pub fn version(&self, name: &str) -> Option<u32> {
        self.resources.get(name).map(|r| r.entry.version)
    }
}
