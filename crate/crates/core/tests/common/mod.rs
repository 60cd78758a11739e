//! Shared generators for the acceptance suite, plus the independent
//! oracles it checks the implementation against.

#![allow(dead_code)]

pub mod oracle;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtvlm_core::clue::{BoundingBox, ClueSet, SceneRecord};
use rtvlm_core::dataset::ScenePair;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + unit(rng) * (hi - lo)
}

pub fn upto(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

pub const CLASS_NAMES: [&str; 3] = ["dog", "cat", "bird"];

const CAPTION_WORDS: [&str; 12] = [
    "small", "large", "red", "blue", "drowsy", "alert", "spotted", "striped", "young", "old",
    "quiet", "quick",
];

pub fn random_caption(rng: &mut ChaCha8Rng, noun: &str) -> String {
    let a = CAPTION_WORDS[upto(rng, CAPTION_WORDS.len())];
    let b = CAPTION_WORDS[upto(rng, CAPTION_WORDS.len())];
    format!("a {a} {b} {noun} in view")
}

/// Random valid box inside `width x height` with extent at least 2.
pub fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BoundingBox {
    let w = range(rng, 2.0, width * 0.45);
    let h = range(rng, 2.0, height * 0.45);
    let x = range(rng, 0.0, width - w);
    let y = range(rng, 0.0, height - h);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Random valid truth record with up to `max_objects` objects drawn from
/// `classes`.
pub fn random_truth(
    rng: &mut ChaCha8Rng,
    max_objects: usize,
    classes: &[&str],
    width: f64,
    height: f64,
) -> ClueSet {
    let n = upto(rng, max_objects + 1);
    let mut truth = ClueSet::empty("a synthetic scene for checks");
    for _ in 0..n {
        let class = classes[upto(rng, classes.len())];
        truth.boxes.push(random_box(rng, width, height));
        truth.classes.push(class.to_string());
        truth.object_captions.push(random_caption(rng, class));
    }
    truth
}

/// Random predictions against a truth record: a mix of jittered truth
/// boxes (often overlapping) and fresh boxes, each with a random class and
/// score; sometimes the whole record carries no scores.
pub fn random_predictions(
    rng: &mut ChaCha8Rng,
    truth: &ClueSet,
    max_objects: usize,
    classes: &[&str],
    width: f64,
    height: f64,
) -> ClueSet {
    let n = upto(rng, max_objects + 1);
    let mut pred = ClueSet::empty("predicted scene");
    let mut scores = Vec::new();
    for _ in 0..n {
        let bx = if !truth.is_empty() && unit(rng) < 0.6 {
            let t = truth.boxes[upto(rng, truth.len())];
            let jx = range(rng, -4.0, 4.0);
            let jy = range(rng, -4.0, 4.0);
            let grow = range(rng, -2.0, 4.0);
            BoundingBox::new(
                (t.x_min + jx).clamp(0.0, width - 1.0),
                (t.y_min + jy).clamp(0.0, height - 1.0),
                (t.x_max + jx + grow).clamp(1.0, width),
                (t.y_max + jy + grow).clamp(1.0, height),
            )
        } else {
            random_box(rng, width, height)
        };
        if !bx.is_valid() {
            continue;
        }
        let class = classes[upto(rng, classes.len())];
        pred.boxes.push(bx);
        pred.classes.push(class.to_string());
        pred.object_captions.push(random_caption(rng, class));
        scores.push((unit(rng) * 1000.0).round() / 1000.0);
    }
    if unit(rng) < 0.8 {
        pred.scores = Some(scores);
    }
    pred
}

/// Random paired instance for the metric-oracle comparison: up to
/// `max_scenes` scenes, `max_objects` boxes per side per scene, classes
/// drawn from `classes`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_scenes: usize,
    max_objects: usize,
    classes: &[&str],
) -> Vec<ScenePair> {
    let scenes = 1 + upto(rng, max_scenes);
    (0..scenes)
        .map(|i| {
            let truth = random_truth(rng, max_objects, classes, 100.0, 100.0);
            let pred = random_predictions(rng, &truth, max_objects, classes, 100.0, 100.0);
            ScenePair {
                image_id: format!("scene-{i}"),
                pred,
                truth,
            }
        })
        .collect()
}

/// Synthetic ground-truth scenes, each with at least one object.
pub fn random_scenes(rng: &mut ChaCha8Rng, count: usize) -> Vec<SceneRecord> {
    (0..count)
        .map(|i| {
            let mut truth = random_truth(rng, 5, &CLASS_NAMES, 640.0, 480.0);
            if truth.is_empty() {
                let class = CLASS_NAMES[upto(rng, CLASS_NAMES.len())];
                truth.boxes.push(random_box(rng, 640.0, 480.0));
                truth.classes.push(class.to_string());
                truth.object_captions.push(random_caption(rng, class));
            }
            SceneRecord {
                image_id: format!("synthetic-{i:04}"),
                image_path: format!("synthetic/{i:04}.png"),
                width: 640,
                height: 480,
                truth,
            }
        })
        .collect()
}

/// A box pair away from every kink of the SIoU surface: centers off both
/// axes, unequal widths and heights, no pair of equal edges, and no
/// touching intersection boundary, all by margin 0.5 (probe steps are
/// 1e-5).
pub fn generic_box_pair(rng: &mut ChaCha8Rng) -> (BoundingBox, BoundingBox) {
    loop {
        let pred = random_box(rng, 100.0, 100.0);
        let truth = random_box(rng, 100.0, 100.0);
        let (pcx, pcy) = pred.center();
        let (tcx, tcy) = truth.center();
        let margin = 0.5;
        let away = |a: f64, b: f64| (a - b).abs() >= margin;
        let iw = pred.x_max.min(truth.x_max) - pred.x_min.max(truth.x_min);
        let ih = pred.y_max.min(truth.y_max) - pred.y_min.max(truth.y_min);
        if away(pcx, tcx)
            && away(pcy, tcy)
            && away(pred.width(), truth.width())
            && away(pred.height(), truth.height())
            && away(pred.x_min, truth.x_min)
            && away(pred.x_max, truth.x_max)
            && away(pred.y_min, truth.y_min)
            && away(pred.y_max, truth.y_max)
            && iw.abs() >= margin
            && ih.abs() >= margin
        {
            return (pred, truth);
        }
    }
}
