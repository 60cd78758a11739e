//! Prompt composition: the dataset-generation triplets (pinned + base +
//! modifier), the render plan and its manifest, and the two inference
//! prompts of the two-stage protocol.
//!
//! The inference prompt texts live in versioned resource files compiled
//! into the binary; [`prompt_hashes`] exposes their content hashes so run
//! manifests can pin exactly which wording produced a result.

use crate::clue::{serialize_clueset, ClueSet, ParseError};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

/// Stage-1 instruction requesting the four-field record.
const FIRST_PROMPT: &str = include_str!("../resources/first_prompt.txt");
/// Stage-2 self-correction preamble; the stage-1 evidence block is appended.
const RETHINK_PREAMBLE: &str = include_str!("../resources/rethink_prompt.txt");

/// Prompt sent with a cropped object region to a captioning backend.
const OBJECT_CAPTION_PROMPT: &str = "Describe the object.";
/// Prompt sent with the full frame to a captioning backend.
const CONTEXT_CAPTION_PROMPT: &str = "Describe the overall scene of this image.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt inventory is empty")]
    EmptyInventory,
    #[error("{path}:{line}: blank prompt line")]
    BlankLine { path: String, line: usize },
    #[error("pinned prompt is empty")]
    EmptyPinned,
    #[error("renders_per_triplet must be >= 1")]
    InvalidRenderCount,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The fixed stage-1 instruction text.
pub fn first_prompt() -> &'static str {
    FIRST_PROMPT
}

/// Marker for recognizing a stage-2 prompt (used by the mock backend).
pub fn rethink_preamble() -> &'static str {
    RETHINK_PREAMBLE
}

/// The stage-2 prompt: the fixed self-correction preamble followed by the
/// canonical serialization of the stage-1 record as the evidence block.
/// The serialized record appears verbatim, so it can be extracted and
/// re-parsed from the prompt text.
pub fn rethink_prompt(stage1: &ClueSet) -> Result<String, ParseError> {
    let evidence = serialize_clueset(stage1)?;
    Ok(format!(
        "{RETHINK_PREAMBLE}\nFirst inference results:\n{evidence}\n"
    ))
}

/// The literal (object-level, context-level) captioning prompts.
pub fn caption_prompts() -> (&'static str, &'static str) {
    (OBJECT_CAPTION_PROMPT, CONTEXT_CAPTION_PROMPT)
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hashes of the two inference prompt resources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptHashes {
    pub first_prompt_sha256: String,
    pub rethink_prompt_sha256: String,
}

pub fn prompt_hashes() -> PromptHashes {
    PromptHashes {
        first_prompt_sha256: sha256_hex(FIRST_PROMPT),
        rethink_prompt_sha256: sha256_hex(RETHINK_PREAMBLE),
    }
}

/// One dataset-generation prompt: pinned realism clause, scene base, and a
/// camera/weather/lighting modifier. `triplet_id` is a pure function of the
/// base and modifier indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTriplet {
    pub pinned: String,
    pub base: String,
    pub modifier: String,
    pub triplet_id: String,
}

impl PromptTriplet {
    /// Full prompt text: pinned, base, and modifier, newline-joined.
    pub fn prompt_text(&self) -> String {
        format!("{}\n{}\n{}", self.pinned, self.base, self.modifier)
    }
}

fn triplet_id(base_index: usize, modifier_index: usize) -> String {
    format!("b{base_index:03}-m{modifier_index:02}")
}

/// Uniform draw from `[0, n)` built directly on the raw 64-bit stream so
/// the assignment is stable across library versions.
fn draw_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Pair every base prompt with one seeded modifier draw (with replacement
/// across bases). Output order follows base order and every base appears
/// exactly once; the same inputs and seed reproduce the same list
/// byte-for-byte.
pub fn compose_triplets(
    pinned: &str,
    bases: &[String],
    modifiers: &[String],
    seed: u64,
) -> Result<Vec<PromptTriplet>, PromptError> {
    if pinned.trim().is_empty() {
        return Err(PromptError::EmptyPinned);
    }
    if bases.is_empty() || modifiers.is_empty() {
        return Err(PromptError::EmptyInventory);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(bases
        .iter()
        .enumerate()
        .map(|(i, base)| {
            let m = draw_index(&mut rng, modifiers.len());
            PromptTriplet {
                pinned: pinned.trim().to_string(),
                base: base.clone(),
                modifier: modifiers[m].clone(),
                triplet_id: triplet_id(i, m),
            }
        })
        .collect())
}

/// Work plan for an external image generator: every triplet rendered
/// `renders_per_triplet` times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderPlan {
    pub triplets: Vec<PromptTriplet>,
    pub renders_per_triplet: u32,
    pub total: u64,
}

pub fn render_plan(
    triplets: Vec<PromptTriplet>,
    renders_per_triplet: u32,
) -> Result<RenderPlan, PromptError> {
    if renders_per_triplet < 1 {
        return Err(PromptError::InvalidRenderCount);
    }
    let total = triplets.len() as u64 * u64::from(renders_per_triplet);
    Ok(RenderPlan {
        triplets,
        renders_per_triplet,
        total,
    })
}

/// One line of the render manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderManifestLine {
    pub triplet_id: String,
    pub render_index: u32,
    pub prompt: String,
}

impl RenderPlan {
    /// Manifest lines in triplet order, then render order.
    pub fn manifest_lines(&self) -> impl Iterator<Item = RenderManifestLine> + '_ {
        self.triplets.iter().flat_map(move |t| {
            let prompt = t.prompt_text();
            (0..self.renders_per_triplet).map(move |render_index| RenderManifestLine {
                triplet_id: t.triplet_id.clone(),
                render_index,
                prompt: prompt.clone(),
            })
        })
    }
}

/// Load a plain-text inventory: one prompt per line, UTF-8. Blank interior
/// lines are rejected so line numbers stay meaningful; a trailing newline
/// is fine.
pub fn load_inventory(path: &Path) -> Result<Vec<String>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            // Allow trailing blank lines only.
            if lines[i..].iter().all(|l| l.trim().is_empty()) {
                break;
            }
            return Err(PromptError::BlankLine {
                path: path.display().to_string(),
                line: i + 1,
            });
        }
        out.push(trimmed.to_string());
    }
    if out.is_empty() {
        return Err(PromptError::EmptyInventory);
    }
    Ok(out)
}
