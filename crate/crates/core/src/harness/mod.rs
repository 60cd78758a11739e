//! Evaluation harness: binds datasets, backends, the inference engine, and
//! the metric modules into labeled variant runs (the A/B/C/D grid) and
//! emits reports.
//!
//! A run is described by a TOML config naming the ground-truth file, the
//! variant profiles (backend profile x inference mode), the metric
//! selection, a seed, and a parallelism cap. All inputs are validated and
//! backends preflighted before any output is written; afterwards each
//! variant's predictions and transcripts land on disk next to the report,
//! so every reported number can be recomputed from stored artifacts.

mod coco;
mod report;

pub use coco::{import_coco_truth, ImportStats};
pub use report::{render_report, ReportFormat};

use crate::backend::{
    Backend, BackendError, CorruptionConfig, HttpBackend, HttpBackendConfig, MockBackend,
};
use crate::caption::{bleu4, cider, CaptionCorpus, CaptionError, CorpusEntry, TokenizedCaption};
use crate::clue::class_key;
use crate::dataset::{pair_for_eval, write_predictions, DataError, ScenePair};
use crate::detect::{
    detection_report, match_greedy, topk_accuracy, DetectionEvaluation, MetricsError,
};
use crate::engine::{EngineOptions, InferenceMode, RethinkEngine};
use crate::prompts::{prompt_hashes, PromptHashes};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which metric families a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSelect {
    /// Detection bundle: mAP, precision, recall, F1, IoU mean.
    Det,
    /// Caption scores, object-level and context-level.
    Cap,
    /// Top-1 / top-5 classification accuracy.
    Top,
}

impl std::str::FromStr for MetricSelect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "det" => Ok(Self::Det),
            "cap" => Ok(Self::Cap),
            "top" => Ok(Self::Top),
            other => Err(format!(
                "unknown metric selection {other:?} (expected det, cap, top)"
            )),
        }
    }
}

/// One ablation cell: a label, a backend profile name, and an inference mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantProfile {
    pub label: String,
    pub backend: String,
    pub mode: InferenceMode,
}

/// Backend profile as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    /// Deterministic mock; a missing seed inherits the run seed.
    Mock {
        #[serde(default)]
        drop_rate: f64,
        #[serde(default)]
        box_jitter_fraction: f64,
        #[serde(default)]
        class_swap_rate: f64,
        #[serde(default)]
        caption_noise_rate: f64,
        #[serde(default)]
        repair_rate: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Remote chat-completion endpoint.
    Http {
        #[serde(flatten)]
        config: HttpBackendConfig,
    },
}

impl BackendSpec {
    pub fn corruption(&self, run_seed: u64) -> Option<CorruptionConfig> {
        match self {
            BackendSpec::Mock {
                drop_rate,
                box_jitter_fraction,
                class_swap_rate,
                caption_noise_rate,
                repair_rate,
                seed,
            } => Some(CorruptionConfig {
                drop_rate: *drop_rate,
                box_jitter_fraction: *box_jitter_fraction,
                class_swap_rate: *class_swap_rate,
                caption_noise_rate: *caption_noise_rate,
                repair_rate: *repair_rate,
                seed: seed.unwrap_or(run_seed),
            }),
            BackendSpec::Http { .. } => None,
        }
    }

    pub fn build(
        &self,
        name: &str,
        scenes: &[crate::clue::SceneRecord],
        run_seed: u64,
    ) -> Result<Arc<dyn Backend>, HarnessError> {
        match self {
            BackendSpec::Mock { .. } => {
                let cfg = self.corruption(run_seed).expect("mock spec");
                Ok(Arc::new(MockBackend::new(
                    scenes,
                    cfg,
                    format!("mock:{name}"),
                )?))
            }
            BackendSpec::Http { config } => Ok(Arc::new(HttpBackend::new(config.clone())?)),
        }
    }
}

/// Load a standalone backend profile file (one [`BackendSpec`] in TOML).
pub fn load_backend_spec(path: &Path) -> Result<BackendSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn default_parallelism() -> usize {
    1
}

fn default_deadline_secs() -> f64 {
    60.0
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_metrics() -> Vec<MetricSelect> {
    vec![MetricSelect::Det]
}

/// Full run description, normally parsed from a TOML file.
#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    pub ground_truth: PathBuf,
    /// Where artifacts land; a CLI flag may override it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSelect>,
    /// Sidecar with context-caption references per image.
    #[serde(default)]
    pub caption_references: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_deadline_secs")]
    pub deadline_secs: f64,
    #[serde(rename = "variant")]
    pub variants: Vec<VariantProfile>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.variants.is_empty() {
            return Err(HarnessError::Config(
                "at least one [[variant]] is required".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        for v in &self.variants {
            if !labels.insert(v.label.as_str()) {
                return Err(HarnessError::Config(format!(
                    "duplicate variant label {:?}",
                    v.label
                )));
            }
            if !self.backends.contains_key(&v.backend) {
                return Err(HarnessError::Config(format!(
                    "variant {:?} names unknown backend profile {:?}",
                    v.label, v.backend
                )));
            }
        }
        if self.metrics.is_empty() {
            return Err(HarnessError::Config("empty metric selection".into()));
        }
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be >= 1".into()));
        }
        if !(self.deadline_secs > 0.0) {
            return Err(HarnessError::Config(
                "deadline_secs must be positive".into(),
            ));
        }
        Ok(())
    }

    fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            deadline: Duration::from_secs_f64(self.deadline_secs),
            parallelism: self.parallelism,
        }
    }

    fn wants(&self, m: MetricSelect) -> bool {
        self.metrics.contains(&m)
    }
}

/// Caption scores for one caption task. `bleu4` is absent with no entries;
/// `cider` additionally needs at least two entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionScores {
    pub entries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopkScores {
    pub items: usize,
    pub top1: f64,
    pub top5: f64,
}

/// Everything measured for one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub label: String,
    pub mode: InferenceMode,
    pub backend_tag: String,
    pub scenes: usize,
    pub failed_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionEvaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_captions: Option<CaptionScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_captions: Option<CaptionScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<TopkScores>,
}

/// Provenance pinned into every report: dataset and prompt hashes, seed,
/// and the backend tag behind each variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub dataset_sha256: String,
    pub seed: u64,
    pub prompts: PromptHashes,
    pub backend_tags: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metadata: RunMetadata,
    pub variants: Vec<VariantMetrics>,
}

fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRefRecord {
    image_id: String,
    references: Vec<String>,
}

/// Sidecar file: one record per line with `image_id` and reference strings.
pub fn read_caption_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut refs = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionRefRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        if record.references.is_empty() {
            return Err(HarnessError::Config(format!(
                "{}:{}: empty reference list for {:?}",
                path.display(),
                idx + 1,
                record.image_id
            )));
        }
        refs.insert(record.image_id, record.references);
    }
    Ok(refs)
}

/// One line of a caption evaluation file: a raw candidate string and its
/// raw reference strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionEvalRecord {
    pub candidate: String,
    pub references: Vec<String>,
}

/// Read a caption evaluation file (one [`CaptionEvalRecord`] per line).
pub fn read_caption_eval_file(path: &Path) -> Result<Vec<CaptionEvalRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionEvalRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        if record.references.is_empty() {
            return Err(HarnessError::Config(format!(
                "{}:{}: empty reference list",
                path.display(),
                idx + 1
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_caption_eval_file(
    path: &Path,
    records: &[CaptionEvalRecord],
) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("caption record serializes");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn corpus_from_records(records: &[CaptionEvalRecord]) -> Result<CaptionCorpus, CaptionError> {
    CaptionCorpus::new(
        records
            .iter()
            .map(|r| CorpusEntry {
                candidate: TokenizedCaption::tokenize(&r.candidate),
                references: r
                    .references
                    .iter()
                    .map(|s| TokenizedCaption::tokenize(s))
                    .collect(),
            })
            .collect(),
    )
}

/// Object-level caption pairing: every matched prediction/truth pair at
/// IoU threshold 0.5 contributes (predicted caption, [truth caption]).
pub fn object_caption_records(pairs: &[ScenePair]) -> Vec<CaptionEvalRecord> {
    let mut records = Vec::new();
    for pair in pairs {
        let m = match_greedy(&pair.pred, &pair.truth, 0.5);
        for p in &m.pairs {
            records.push(CaptionEvalRecord {
                candidate: pair.pred.object_captions[p.pred_index].clone(),
                references: vec![pair.truth.object_captions[p.truth_index].clone()],
            });
        }
    }
    records
}

pub fn object_caption_corpus(pairs: &[ScenePair]) -> Result<CaptionCorpus, CaptionError> {
    corpus_from_records(&object_caption_records(pairs))
}

/// Score a standalone caption evaluation file.
pub fn caption_file_scores(path: &Path) -> Result<CaptionScores, HarnessError> {
    let records = read_caption_eval_file(path)?;
    Ok(caption_scores(&corpus_from_records(&records)?)?)
}

fn caption_scores(corpus: &CaptionCorpus) -> Result<CaptionScores, CaptionError> {
    let entries = corpus.len();
    let bleu = if entries == 0 {
        None
    } else {
        Some(bleu4(corpus)?)
    };
    let cid = if entries >= 2 {
        Some(cider(corpus)?)
    } else {
        None
    };
    Ok(CaptionScores {
        entries,
        bleu4: bleu,
        cider: cid,
    })
}

/// Context-level caption pairing against the sidecar references.
fn context_caption_corpus(
    pairs: &[ScenePair],
    refs: &BTreeMap<String, Vec<String>>,
) -> Result<CaptionCorpus, CaptionError> {
    let mut entries = Vec::new();
    for pair in pairs {
        if let Some(reference_texts) = refs.get(&pair.image_id) {
            entries.push(CorpusEntry {
                candidate: TokenizedCaption::tokenize(&pair.pred.context_caption),
                references: reference_texts
                    .iter()
                    .map(|r| TokenizedCaption::tokenize(r))
                    .collect(),
            });
        }
    }
    CaptionCorpus::new(entries)
}

/// Classification view of detection output: predicted classes ranked by
/// score (deduplicated, best first) against the scene's first truth class.
/// Scenes with empty truth are skipped.
fn classification_lists(pairs: &[ScenePair]) -> (Vec<Vec<String>>, Vec<String>) {
    let mut ranked = Vec::new();
    let mut truths = Vec::new();
    for pair in pairs {
        if pair.truth.is_empty() || pair.pred.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..pair.pred.len()).collect();
        order.sort_by(|&a, &b| {
            pair.pred
                .score(b)
                .partial_cmp(&pair.pred.score(a))
                .expect("finite")
                .then(a.cmp(&b))
        });
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        for i in order {
            if seen.insert(class_key(&pair.pred.classes[i])) {
                list.push(pair.pred.classes[i].clone());
            }
        }
        ranked.push(list);
        truths.push(pair.truth.classes[0].clone());
    }
    (ranked, truths)
}

fn topk_scores(pairs: &[ScenePair]) -> Result<Option<TopkScores>, MetricsError> {
    let (ranked, truths) = classification_lists(pairs);
    if ranked.is_empty() {
        return Ok(None);
    }
    Ok(Some(TopkScores {
        items: ranked.len(),
        top1: topk_accuracy(&ranked, &truths, 1)?,
        top5: topk_accuracy(&ranked, &truths, 5)?,
    }))
}

/// Run the whole grid described by `config`, writing per-variant
/// prediction and transcript files plus the rendered report under
/// `out_dir`, and returning the report. Identical config and seed with
/// mock backends reproduce identical artifacts byte for byte.
pub fn run_eval(config: &RunConfig, out_dir: &Path) -> Result<MetricReport, HarnessError> {
    config.validate()?;

    // Everything that can fail is resolved before any output is written:
    // dataset, caption sidecar, backend construction, reachability.
    let scenes = crate::dataset::read_scenes(&config.ground_truth)?;
    let dataset_sha256 = sha256_file(&config.ground_truth)?;
    let caption_refs = match &config.caption_references {
        Some(path) => Some(read_caption_references(path)?),
        None => None,
    };
    let mut backends: BTreeMap<&str, Arc<dyn Backend>> = BTreeMap::new();
    for variant in &config.variants {
        if !backends.contains_key(variant.backend.as_str()) {
            let spec = &config.backends[&variant.backend];
            let backend = spec.build(&variant.backend, &scenes, config.seed)?;
            backend.preflight()?;
            backends.insert(variant.backend.as_str(), backend);
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut variants_out = Vec::new();
    let mut backend_tags = Vec::new();
    for variant in &config.variants {
        let backend = Arc::clone(&backends[variant.backend.as_str()]);
        let engine = RethinkEngine::new(backend, config.engine_options());
        let run = engine.run_dataset(&scenes, variant.mode);

        let variant_dir = out_dir.join(format!("variant-{}", variant.label));
        std::fs::create_dir_all(&variant_dir).map_err(|e| io_err(&variant_dir, e))?;
        let predictions = run.prediction_records();
        write_predictions(&variant_dir.join("predictions.jsonl"), &predictions)?;
        run.write_transcripts(&variant_dir.join("transcripts.jsonl"))
            .map_err(|e| io_err(&variant_dir.join("transcripts.jsonl"), e))?;

        let pairs = pair_for_eval(&scenes, &predictions)?;
        let detection = if config.wants(MetricSelect::Det) {
            Some(detection_report(&pairs)?)
        } else {
            None
        };
        let (object_captions, context_captions) = if config.wants(MetricSelect::Cap) {
            let records = object_caption_records(&pairs);
            write_caption_eval_file(&variant_dir.join("object_captions.jsonl"), &records)?;
            let object = caption_scores(&corpus_from_records(&records)?)?;
            let context = match &caption_refs {
                Some(refs) => Some(caption_scores(&context_caption_corpus(&pairs, refs)?)?),
                None => None,
            };
            (Some(object), context)
        } else {
            (None, None)
        };
        let classification = if config.wants(MetricSelect::Top) {
            topk_scores(&pairs)?
        } else {
            None
        };

        backend_tags.push((variant.label.clone(), engine.backend_tag().to_string()));
        variants_out.push(VariantMetrics {
            label: variant.label.clone(),
            mode: variant.mode,
            backend_tag: engine.backend_tag().to_string(),
            scenes: scenes.len(),
            failed_scenes: run.failures().len(),
            detection,
            object_captions,
            context_captions,
            classification,
        });
    }

    let report = MetricReport {
        metadata: RunMetadata {
            dataset_sha256,
            seed: config.seed,
            prompts: prompt_hashes(),
            backend_tags,
        },
        variants: variants_out,
    };

    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join("report.json"), json)
        .map_err(|e| io_err(&out_dir.join("report.json"), e))?;
    std::fs::write(
        out_dir.join("report.md"),
        render_report(&report, ReportFormat::Markdown),
    )
    .map_err(|e| io_err(&out_dir.join("report.md"), e))?;
    std::fs::write(
        out_dir.join("report.csv"),
        render_report(&report, ReportFormat::Csv),
    )
    .map_err(|e| io_err(&out_dir.join("report.csv"), e))?;

    Ok(report)
}

/// Compute the selected metrics for an existing prediction file against a
/// ground-truth file, without running any backend.
pub fn metrics_only(
    ground_truth: &Path,
    predictions: &Path,
    metrics: &[MetricSelect],
    caption_references: Option<&Path>,
) -> Result<MetricReport, HarnessError> {
    let scenes = crate::dataset::read_scenes(ground_truth)?;
    let preds = crate::dataset::read_predictions(predictions)?;
    let pairs = pair_for_eval(&scenes, &preds)?;
    let caption_refs = match caption_references {
        Some(path) => Some(read_caption_references(path)?),
        None => None,
    };

    let wants = |m: MetricSelect| metrics.contains(&m);
    let detection = if wants(MetricSelect::Det) {
        Some(detection_report(&pairs)?)
    } else {
        None
    };
    let (object_captions, context_captions) = if wants(MetricSelect::Cap) {
        let object = caption_scores(&object_caption_corpus(&pairs)?)?;
        let context = match &caption_refs {
            Some(refs) => Some(caption_scores(&context_caption_corpus(&pairs, refs)?)?),
            None => None,
        };
        (Some(object), context)
    } else {
        (None, None)
    };
    let classification = if wants(MetricSelect::Top) {
        topk_scores(&pairs)?
    } else {
        None
    };

    Ok(MetricReport {
        metadata: RunMetadata {
            dataset_sha256: sha256_file(ground_truth)?,
            seed: 0,
            prompts: prompt_hashes(),
            backend_tags: vec![("pred".into(), "offline".into())],
        },
        variants: vec![VariantMetrics {
            label: "pred".into(),
            mode: InferenceMode::SinglePass,
            backend_tag: "offline".into(),
            scenes: scenes.len(),
            failed_scenes: 0,
            detection,
            object_captions,
            context_captions,
            classification,
        }],
    })
}
