//! Deterministic stand-in model.
//!
//! Stage 1 starts from a scene's ground truth and corrupts it object by
//! object under seeded draws: drop, box jitter, class swap, caption noise.
//! Stage 2 restores corrupted or missing objects to truth with probability
//! `repair_rate`, leaving correct objects untouched. Both stages are pure
//! functions of (scene, config), keyed per scene so results are independent
//! of execution order; the four corruption knobs map onto the usual
//! domain-shift failure shapes (drop for occlusion, jitter for viewpoint
//! and covariate shift, class swap for confusion, caption noise for
//! covariate shift).

use super::{Backend, BackendError, ImageData, RequestLedger, VisionRequest, VisionResponse};
use crate::clue::{class_key, serialize_clueset, BoundingBox, ClueSet, SceneRecord};
use crate::detect::iou;
use crate::prompts::{first_prompt, rethink_preamble};
use crate::repair::parse_clueset_lenient;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::time::Instant;

/// Narrowest extent a sanitized box may have, in pixels.
const MIN_BOX_EXTENT: f64 = 1e-3;
/// Marker prepended to captions hit by caption noise.
const GARBLE_PREFIX: &str = "[unclear] ";

/// Seeded corruption and repair knobs; every rate lives in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub drop_rate: f64,
    pub box_jitter_fraction: f64,
    pub class_swap_rate: f64,
    pub caption_noise_rate: f64,
    pub repair_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            drop_rate: 0.0,
            box_jitter_fraction: 0.0,
            class_swap_rate: 0.0,
            caption_noise_rate: 0.0,
            repair_rate: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, rate) in [
            ("drop_rate", self.drop_rate),
            ("box_jitter_fraction", self.box_jitter_fraction),
            ("class_swap_rate", self.class_swap_rate),
            ("caption_noise_rate", self.caption_noise_rate),
            ("repair_rate", self.repair_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
                return Err(BackendError::Config {
                    detail: format!("{name} {rate} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }
}

/// Uniform in [0, 1) from the raw 64-bit stream; pinned here so outputs
/// stay stable across library versions.
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Per-scene, per-stage generator: draws depend only on (seed, image_id,
/// stream), never on evaluation order.
fn scene_rng(seed: u64, image_id: &str, stream: u64) -> ChaCha8Rng {
    let digest = Sha256::digest(image_id.as_bytes());
    let mut id_hash = [0u8; 8];
    id_hash.copy_from_slice(&digest[..8]);
    let mixed = seed ^ u64::from_le_bytes(id_hash) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Clamp into bounds and repair any degenerate extent the jitter produced.
fn sanitize_box(mut b: BoundingBox, width: f64, height: f64) -> BoundingBox {
    b = b.clamped(width, height);
    if b.x_max - b.x_min < MIN_BOX_EXTENT {
        b.x_min = (b.x_min.min(width - MIN_BOX_EXTENT)).max(0.0);
        b.x_max = b.x_min + MIN_BOX_EXTENT;
    }
    if b.y_max - b.y_min < MIN_BOX_EXTENT {
        b.y_min = (b.y_min.min(height - MIN_BOX_EXTENT)).max(0.0);
        b.y_max = b.y_min + MIN_BOX_EXTENT;
    }
    b
}

/// Stage-1 output: the scene's truth corrupted under `cfg`, serialized
/// canonically. `vocab` supplies swap targets for class confusion.
/// Deterministic in (scene, cfg); all rates zero reproduces the truth
/// byte-for-byte.
pub fn mock_stage1(scene: &SceneRecord, cfg: &CorruptionConfig, vocab: &[String]) -> String {
    let mut rng = scene_rng(cfg.seed, &scene.image_id, 1);
    let (width, height) = scene.bounds();
    let truth = &scene.truth;
    let mut out = ClueSet::empty(truth.context_caption.clone());

    for i in 0..truth.len() {
        // Fixed draw schedule per object, consumed whether or not each
        // corruption fires, so one knob never shifts another's stream.
        let u_drop = unit_f64(&mut rng);
        let jitter = [
            unit_f64(&mut rng),
            unit_f64(&mut rng),
            unit_f64(&mut rng),
            unit_f64(&mut rng),
        ];
        let u_swap = unit_f64(&mut rng);
        let swap_pick = rng.next_u64();
        let u_caption = unit_f64(&mut rng);

        if u_drop < cfg.drop_rate {
            continue;
        }

        let mut bx = truth.boxes[i];
        if cfg.box_jitter_fraction > 0.0 {
            let w = bx.width();
            let h = bx.height();
            let f = cfg.box_jitter_fraction;
            bx = sanitize_box(
                BoundingBox::new(
                    bx.x_min + (2.0 * jitter[0] - 1.0) * f * w,
                    bx.y_min + (2.0 * jitter[1] - 1.0) * f * h,
                    bx.x_max + (2.0 * jitter[2] - 1.0) * f * w,
                    bx.y_max + (2.0 * jitter[3] - 1.0) * f * h,
                ),
                width,
                height,
            );
        }

        let mut class = truth.classes[i].clone();
        if u_swap < cfg.class_swap_rate {
            let current = class_key(&class);
            let others: Vec<&String> = vocab.iter().filter(|v| class_key(v) != current).collect();
            if !others.is_empty() {
                class = others[(swap_pick % others.len() as u64) as usize].clone();
            }
        }

        let mut caption = truth.object_captions[i].clone();
        if u_caption < cfg.caption_noise_rate {
            caption = format!("{GARBLE_PREFIX}{caption}");
        }

        out.boxes.push(bx);
        out.classes.push(class);
        out.object_captions.push(caption);
    }
    serialize_clueset(&out).expect("mock stage-1 output is valid by construction")
}

/// Stage-2 output: an idealized corrector over the given stage-1 record.
///
/// Truth objects exactly present in `stage1` are kept as-is; each missing
/// or corrupted truth object is independently restored with probability
/// `repair_rate` (corrupted entries are located by best IoU and replaced
/// on restore, kept verbatim otherwise). Truth-derived entries come out in
/// truth order, which reproduces `stage1` exactly at `repair_rate = 0` for
/// any stage-1 record this mock produced itself, and reproduces the truth
/// exactly at `repair_rate = 1`; entries with no counterpart in the truth
/// are appended unchanged.
pub fn mock_stage2(scene: &SceneRecord, stage1: &ClueSet, cfg: &CorruptionConfig) -> String {
    let mut rng = scene_rng(cfg.seed, &scene.image_id, 2);
    let truth = &scene.truth;
    let n_truth = truth.len();
    let n_stage1 = stage1.len();

    let object = |c: &ClueSet, i: usize| {
        (
            c.boxes[i],
            c.classes[i].clone(),
            c.object_captions[i].clone(),
        )
    };

    // Pass 1: exact matches are "correctly inferred" and never touched.
    let mut stage1_used = vec![false; n_stage1];
    let mut exact = vec![false; n_truth];
    for ti in 0..n_truth {
        for si in 0..n_stage1 {
            if !stage1_used[si] && object(stage1, si) == object(truth, ti) {
                stage1_used[si] = true;
                exact[ti] = true;
                break;
            }
        }
    }

    // Pass 2: pair each remaining truth object with its most overlapping
    // remaining stage-1 entry, the presumed corrupted counterpart.
    let mut paired: Vec<Option<usize>> = vec![None; n_truth];
    for ti in 0..n_truth {
        if exact[ti] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for si in 0..n_stage1 {
            if stage1_used[si] {
                continue;
            }
            let v = iou(&stage1.boxes[si], &truth.boxes[ti]);
            if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((si, v));
            }
        }
        if let Some((si, _)) = best {
            stage1_used[si] = true;
            paired[ti] = Some(si);
        }
    }

    let mut out = ClueSet::empty(String::new());
    let mut push = |(bx, class, caption): (BoundingBox, String, String)| {
        out.boxes.push(bx);
        out.classes.push(class);
        out.object_captions.push(caption);
    };
    for ti in 0..n_truth {
        if exact[ti] {
            push(object(truth, ti));
            continue;
        }
        let repaired = unit_f64(&mut rng) < cfg.repair_rate;
        if repaired {
            push(object(truth, ti));
        } else if let Some(si) = paired[ti] {
            push(object(stage1, si));
        }
    }
    for si in 0..n_stage1 {
        if !stage1_used[si] {
            push(object(stage1, si));
        }
    }

    // A matching context caption consumes no repair draw.
    let context_matches = stage1.context_caption == truth.context_caption;
    out.context_caption = if context_matches || unit_f64(&mut rng) < cfg.repair_rate {
        truth.context_caption.clone()
    } else {
        stage1.context_caption.clone()
    };

    serialize_clueset(&out).expect("mock stage-2 output is valid by construction")
}

/// Backend wrapper around the two mock stages. Scenes are looked up by the
/// request's image path; the stage is recognized from the prompt (the
/// stage-2 prompt carries its evidence block, which is parsed back out).
pub struct MockBackend {
    scenes: BTreeMap<String, SceneRecord>,
    vocab: Vec<String>,
    cfg: CorruptionConfig,
    tag: String,
    ledger: RequestLedger,
}

impl MockBackend {
    pub fn new(
        scenes: &[SceneRecord],
        cfg: CorruptionConfig,
        tag: impl Into<String>,
    ) -> Result<Self, BackendError> {
        cfg.validate()?;
        let mut by_path = BTreeMap::new();
        let mut vocab_map: BTreeMap<String, String> = BTreeMap::new();
        for scene in scenes {
            if by_path
                .insert(scene.image_path.clone(), scene.clone())
                .is_some()
            {
                return Err(BackendError::Config {
                    detail: format!("duplicate image path {}", scene.image_path),
                });
            }
            for class in &scene.truth.classes {
                vocab_map
                    .entry(class_key(class))
                    .or_insert_with(|| class.clone());
            }
        }
        Ok(Self {
            scenes: by_path,
            vocab: vocab_map.into_values().collect(),
            cfg,
            tag: tag.into(),
            ledger: RequestLedger::default(),
        })
    }

    /// Class vocabulary collected from the scenes, in deterministic order.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &VisionRequest) -> Result<VisionResponse, BackendError> {
        request.validate()?;
        self.ledger.register(&request.request_id)?;
        let started = Instant::now();

        let ImageData::PathRef(path) = &request.image else {
            return Err(BackendError::InvalidRequest {
                detail: "mock backend needs path-referenced images".into(),
            });
        };
        let scene = self
            .scenes
            .get(path)
            .ok_or_else(|| BackendError::InvalidRequest {
                detail: format!("mock backend has no scene for image {path}"),
            })?;

        let text = if request.prompt == first_prompt() {
            mock_stage1(scene, &self.cfg, &self.vocab)
        } else if request.prompt.starts_with(rethink_preamble()) {
            let (stage1, _) = parse_clueset_lenient(&request.prompt, None).map_err(|e| {
                BackendError::InvalidRequest {
                    detail: format!("no evidence block in prompt: {e}"),
                }
            })?;
            mock_stage2(scene, &stage1, &self.cfg)
        } else {
            return Err(BackendError::InvalidRequest {
                detail: "unrecognized prompt".into(),
            });
        };

        Ok(VisionResponse {
            request_id: request.request_id.clone(),
            text,
            latency: started.elapsed(),
            backend_tag: self.tag.clone(),
        })
    }

    fn tag(&self) -> &str {
        &self.tag
    }
}
