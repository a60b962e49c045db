//! Prompt assembly for the three request kinds: annotation, filter, query.
//!
//! Default wording ships as plain-text section files (see `prompts/` in this
//! crate), embedded at compile time. A template directory with the same
//! layout overrides individual sections; a section that is not overridden
//! stays byte-identical to the default.
//!
//! ```text
//! prompts/annotation/{persona,phenomena,proof_types,instructions,context_preamble}.txt
//! prompts/filter/body.txt
//! prompts/query/framing.txt
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Annotation,
    Filter,
    Query,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Annotation => "annotation",
            PromptKind::Filter => "filter",
            PromptKind::Query => "query",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotation" => Ok(PromptKind::Annotation),
            "filter" => Ok(PromptKind::Filter),
            "query" => Ok(PromptKind::Query),
            other => Err(Error::InvalidInput(format!(
                "unknown prompt kind `{other}`"
            ))),
        }
    }
}

/// A fully assembled prompt. The request text is, in order: persona,
/// instructions, the context preamble and excerpt (only when the excerpt is
/// non-empty), the payload, and whatever the caller appends at send time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub persona: String,
    pub instructions: String,
    pub context_preamble: String,
    pub context_excerpt: Option<String>,
    pub payload: String,
    /// Doc ids, batch file names or a dataset path, depending on `kind`.
    pub payload_refs: Vec<String>,
    pub estimated_tokens: u64,
}

fn push_block(out: &mut String, block: &str) {
    if block.is_empty() {
        return;
    }
    if !out.is_empty() {
        out.push_str("\n\n");
    }
    out.push_str(block);
}

impl PromptBundle {
    pub fn new(
        kind: PromptKind,
        persona: impl Into<String>,
        instructions: impl Into<String>,
        context_excerpt: Option<String>,
        payload: impl Into<String>,
    ) -> Self {
        let mut b = PromptBundle {
            kind,
            persona: persona.into(),
            instructions: instructions.into(),
            context_preamble: String::new(),
            context_excerpt,
            payload: payload.into(),
            payload_refs: Vec::new(),
            estimated_tokens: 0,
        };
        b.estimated_tokens = estimate_tokens(&b.render());
        b
    }

    pub fn with_refs(mut self, refs: Vec<String>) -> Self {
        self.payload_refs = refs;
        self
    }

    fn with_preamble(mut self, preamble: String) -> Self {
        self.context_preamble = preamble;
        self.estimated_tokens = estimate_tokens(&self.render());
        self
    }

    /// Everything except the payload: what a system message would carry.
    pub fn preamble(&self) -> String {
        let mut out = String::new();
        push_block(&mut out, &self.persona);
        push_block(&mut out, &self.instructions);
        if let Some(excerpt) = self.context_excerpt.as_deref().filter(|e| !e.is_empty()) {
            push_block(&mut out, &self.context_preamble);
            push_block(&mut out, excerpt);
        }
        out
    }

    pub fn render(&self) -> String {
        self.render_with("")
    }

    /// Full request text with `extra` appended after the payload.
    pub fn render_with(&self, extra: &str) -> String {
        let mut out = self.preamble();
        push_block(&mut out, &self.payload);
        push_block(&mut out, extra);
        out
    }
}

/// A user-supplied background text appended to the annotation prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextAsset {
    pub path: PathBuf,
    pub description: String,
    pub char_count: usize,
}

impl ContextAsset {
    pub fn open(path: impl Into<PathBuf>, description: impl Into<String>) -> Result<Self> {
        let path = path.into();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(ContextAsset {
            char_count: text.chars().count(),
            path,
            description: description.into(),
        })
    }

    pub fn read(&self) -> Result<String> {
        fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// Named sections a template directory may replace.
pub const SECTION_NAMES: [&str; 7] = [
    "annotation/persona",
    "annotation/phenomena",
    "annotation/proof_types",
    "annotation/instructions",
    "annotation/context_preamble",
    "filter/body",
    "query/framing",
];

fn section(text: &str) -> String {
    text.trim_end_matches(['\n', '\r']).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub persona: String,
    pub phenomena: String,
    pub proof_types: String,
    pub instructions: String,
    pub context_preamble: String,
    pub filter_body: String,
    pub query_framing: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            persona: section(include_str!("../prompts/annotation/persona.txt")),
            phenomena: section(include_str!("../prompts/annotation/phenomena.txt")),
            proof_types: section(include_str!("../prompts/annotation/proof_types.txt")),
            instructions: section(include_str!("../prompts/annotation/instructions.txt")),
            context_preamble: section(include_str!("../prompts/annotation/context_preamble.txt")),
            filter_body: section(include_str!("../prompts/filter/body.txt")),
            query_framing: section(include_str!("../prompts/query/framing.txt")),
        }
    }
}

impl Templates {
    fn slot(&mut self, name: &str) -> Option<&mut String> {
        Some(match name {
            "annotation/persona" => &mut self.persona,
            "annotation/phenomena" => &mut self.phenomena,
            "annotation/proof_types" => &mut self.proof_types,
            "annotation/instructions" => &mut self.instructions,
            "annotation/context_preamble" => &mut self.context_preamble,
            "filter/body" => &mut self.filter_body,
            "query/framing" => &mut self.query_framing,
            _ => return None,
        })
    }

    /// Replaces one whole section, e.g. `"annotation/persona"`.
    pub fn override_section(&mut self, name: &str, text: &str) -> Result<()> {
        let slot = self.slot(name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown prompt section `{name}` (known: {})",
                SECTION_NAMES.join(", ")
            ))
        })?;
        *slot = section(text);
        Ok(())
    }

    /// Defaults overridden by whichever section files exist under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "template directory not found"),
            ));
        }
        let mut t = Templates::default();
        for name in SECTION_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                t.override_section(name, &text)?;
            }
        }
        Ok(t)
    }

    /// Writes every section to `dir` in the template layout.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut me = self.clone();
        for name in SECTION_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut text = me.slot(name).expect("known section").clone();
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn annotation_instructions(&self) -> String {
        [&self.phenomena, &self.proof_types, &self.instructions]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn build_annotation_prompt(&self, asset: Option<&ContextAsset>) -> Result<PromptBundle> {
        let excerpt = asset.map(ContextAsset::read).transpose()?;
        Ok(PromptBundle::new(
            PromptKind::Annotation,
            self.persona.clone(),
            self.annotation_instructions(),
            excerpt,
            "",
        )
        .with_preamble(self.context_preamble.clone()))
    }

    pub fn build_filter_prompt(&self, batch_output_text: &str) -> Result<PromptBundle> {
        if batch_output_text.trim().is_empty() {
            return Err(Error::InvalidInput("filter input is empty".into()));
        }
        Ok(PromptBundle::new(
            PromptKind::Filter,
            "",
            self.filter_body.clone(),
            None,
            batch_output_text,
        ))
    }

    pub fn build_query_prompt(&self, dataset_path: &Path, question: &str) -> Result<PromptBundle> {
        if question.trim().is_empty() {
            return Err(Error::InvalidInput("question is empty".into()));
        }
        if !dataset_path.is_file() {
            return Err(Error::io(
                dataset_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found"),
            ));
        }
        let instructions = format!("{}\n\n{}", self.query_framing, question.trim());
        Ok(
            PromptBundle::new(PromptKind::Query, "", instructions, None, "")
                .with_refs(vec![dataset_path.display().to_string()]),
        )
    }
}

/// Annotation prompt from the default templates.
pub fn build_annotation_prompt(asset: Option<&ContextAsset>) -> Result<PromptBundle> {
    Templates::default().build_annotation_prompt(asset)
}

/// Filter prompt from the default templates, with `batch_output_text` as payload.
pub fn build_filter_prompt(batch_output_text: &str) -> Result<PromptBundle> {
    Templates::default().build_filter_prompt(batch_output_text)
}

/// Query prompt from the default templates.
pub fn build_query_prompt(dataset_path: &Path, question: &str) -> Result<PromptBundle> {
    Templates::default().build_query_prompt(dataset_path, question)
}
