//! The two-stage re-thinking protocol, executed per scene with a full
//! transcript.
//!
//! Stage 1 sends the fixed first prompt with the image and leniently
//! parses the reply. Two-stage mode then feeds the parsed stage-1 record
//! back in the re-thinking prompt with the same image and takes the
//! stage-2 reply wholesale as the final record; the two stages are never
//! mixed object-by-object and there is never a third pass. When stage 2 is
//! unusable (backend error or no parseable object) the stage-1 result
//! stands and the transcript says so.

use crate::backend::{Backend, BackendError, ImageData, VisionRequest};
use crate::clue::{ClueSet, ParseDiagnostics, RepairKind, SceneRecord};
use crate::dataset::PredictionRecord;
use crate::prompts::{first_prompt, rethink_prompt};
use crate::repair::parse_clueset_lenient;
use serde::Serialize;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    SinglePass,
    TwoStage,
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InferenceMode::SinglePass => f.write_str("single-pass"),
            InferenceMode::TwoStage => f.write_str("two-stage"),
        }
    }
}

/// Everything one scene produced: both stages' raw text, parse
/// diagnostics, the accepted final record, and whether the stage-1
/// fallback fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RethinkTranscript {
    pub image_id: String,
    pub mode: InferenceMode,
    pub stage1_raw: String,
    pub stage1_clues: ClueSet,
    pub stage1_diagnostics: ParseDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_clues: Option<ClueSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_diagnostics: Option<ParseDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_error: Option<String>,
    pub final_clues: ClueSet,
    pub fallback_used: bool,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scene {image_id}: {source}")]
    Backend {
        image_id: String,
        #[source]
        source: BackendError,
    },
}

/// A scene the run could not produce a prediction for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneFailure {
    pub image_id: String,
    pub error: String,
}

/// Per-scene outcome inside a dataset run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SceneOutcome {
    Completed(RethinkTranscript),
    Failed(SceneFailure),
}

/// Results of a dataset run, in input order regardless of completion order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRun {
    pub outcomes: Vec<SceneOutcome>,
}

impl DatasetRun {
    /// Prediction records for the completed scenes, in input order.
    pub fn prediction_records(&self) -> Vec<PredictionRecord> {
        self.outcomes
            .iter()
            .filter_map(|o| match o {
                SceneOutcome::Completed(t) => Some(PredictionRecord {
                    image_id: t.image_id.clone(),
                    pred: t.final_clues.clone(),
                }),
                SceneOutcome::Failed(_) => None,
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<&SceneFailure> {
        self.outcomes
            .iter()
            .filter_map(|o| match o {
                SceneOutcome::Failed(f) => Some(f),
                SceneOutcome::Completed(_) => None,
            })
            .collect()
    }

    /// One structured record per scene, suitable for offline audit.
    pub fn write_transcripts(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut out = Vec::new();
        for o in &self.outcomes {
            serde_json::to_writer(&mut out, o).expect("outcome serializes");
            out.push(b'\n');
        }
        std::fs::write(path, out)
    }
}

/// Decode and scheduling options for a run.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub max_tokens: u32,
    pub temperature: f64,
    pub deadline: Duration,
    /// Upper bound on scenes in flight at once.
    pub parallelism: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            max_tokens: 2048,
            temperature: 0.0,
            deadline: Duration::from_secs(60),
            parallelism: 1,
        }
    }
}

/// Process-wide engine counter; keeps request ids unique when several
/// engines share one backend (the ledger enforces at-most-once per id).
static ENGINE_IDS: AtomicU64 = AtomicU64::new(0);

pub struct RethinkEngine {
    backend: Arc<dyn Backend>,
    options: EngineOptions,
    engine_id: u64,
    sequence: AtomicU64,
}

impl RethinkEngine {
    pub fn new(backend: Arc<dyn Backend>, options: EngineOptions) -> Self {
        Self {
            backend,
            options,
            engine_id: ENGINE_IDS.fetch_add(1, Ordering::Relaxed),
            sequence: AtomicU64::new(0),
        }
    }

    pub fn backend_tag(&self) -> &str {
        self.backend.tag()
    }

    fn request(&self, scene: &SceneRecord, stage: u8, prompt: String) -> VisionRequest {
        let seq = self.sequence.fetch_add(1, Ordering::Relaxed);
        VisionRequest {
            request_id: format!("{}#e{}#{seq:06}#s{stage}", scene.image_id, self.engine_id),
            image: ImageData::PathRef(scene.image_path.clone()),
            prompt,
            max_tokens: self.options.max_tokens,
            temperature: self.options.temperature,
            deadline: self.options.deadline,
        }
    }

    /// Lenient parse with the scene bounds; output with no recoverable
    /// object becomes an empty record whose diagnostics record the total
    /// failure.
    fn parse_stage(scene: &SceneRecord, raw: &str) -> (ClueSet, ParseDiagnostics, bool) {
        match parse_clueset_lenient(raw, Some(scene.bounds())) {
            Ok((clues, diagnostics)) => (clues, diagnostics, true),
            Err(_) => {
                let diagnostics = ParseDiagnostics {
                    repairs_applied: vec![RepairKind::UnparseableOutput],
                    was_strict: false,
                    dropped_objects: 0,
                };
                (ClueSet::empty(""), diagnostics, false)
            }
        }
    }

    /// Single-pass inference: first prompt only, final = stage-1 result.
    pub fn run_single(&self, scene: &SceneRecord) -> Result<RethinkTranscript, EngineError> {
        let request = self.request(scene, 1, first_prompt().to_string());
        let response = self
            .backend
            .send(&request)
            .map_err(|source| EngineError::Backend {
                image_id: scene.image_id.clone(),
                source,
            })?;
        let (clues, diagnostics, _) = Self::parse_stage(scene, &response.text);
        Ok(RethinkTranscript {
            image_id: scene.image_id.clone(),
            mode: InferenceMode::SinglePass,
            stage1_raw: response.text,
            stage1_clues: clues.clone(),
            stage1_diagnostics: diagnostics,
            stage2_raw: None,
            stage2_clues: None,
            stage2_diagnostics: None,
            stage2_error: None,
            final_clues: clues,
            fallback_used: false,
        })
    }

    /// Two-stage inference: stage 1 as [`run_single`], then the
    /// re-thinking prompt built from the stage-1 record, sent with the
    /// same image. The stage-2 record replaces stage 1 wholesale; an
    /// unusable stage 2 falls back to the stage-1 result.
    pub fn run_rethink(&self, scene: &SceneRecord) -> Result<RethinkTranscript, EngineError> {
        let mut transcript = self.run_single(scene)?;
        transcript.mode = InferenceMode::TwoStage;

        let prompt = rethink_prompt(&transcript.stage1_clues)
            .expect("lenient parse always yields a serializable record");
        let request = self.request(scene, 2, prompt);
        match self.backend.send(&request) {
            Ok(response) => {
                let (clues, diagnostics, usable) = Self::parse_stage(scene, &response.text);
                if usable {
                    transcript.final_clues = clues.clone();
                    transcript.stage2_clues = Some(clues);
                    transcript.stage2_diagnostics = Some(diagnostics);
                } else {
                    transcript.fallback_used = true;
                }
                transcript.stage2_raw = Some(response.text);
            }
            Err(e) => {
                transcript.fallback_used = true;
                transcript.stage2_error = Some(e.to_string());
            }
        }
        Ok(transcript)
    }

    pub fn run_scene(
        &self,
        scene: &SceneRecord,
        mode: InferenceMode,
    ) -> Result<RethinkTranscript, EngineError> {
        match mode {
            InferenceMode::SinglePass => self.run_single(scene),
            InferenceMode::TwoStage => self.run_rethink(scene),
        }
    }

    /// Run every scene, up to `parallelism` in flight, recording failures
    /// per scene instead of aborting. Outcomes keep input order.
    pub fn run_dataset(&self, scenes: &[SceneRecord], mode: InferenceMode) -> DatasetRun {
        let n = scenes.len();
        let slots: Vec<Mutex<Option<SceneOutcome>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.options.parallelism.clamp(1, n.max(1));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let outcome = match self.run_scene(&scenes[i], mode) {
                        Ok(t) => SceneOutcome::Completed(t),
                        Err(e) => SceneOutcome::Failed(SceneFailure {
                            image_id: scenes[i].image_id.clone(),
                            error: e.to_string(),
                        }),
                    };
                    *slots[i].lock().expect("slot lock") = Some(outcome);
                });
            }
        });

        DatasetRun {
            outcomes: slots
                .into_iter()
                .map(|s| {
                    s.into_inner()
                        .expect("slot lock")
                        .expect("every scene visited")
                })
                .collect(),
        }
    }
}
