//! Importer for COCO-style detection annotations (`images`, `annotations`
//! with `bbox [x, y, w, h]`, `categories`) into the ground-truth scene
//! format.
//!
//! Corner boxes come from `x, y, x+w, y+h`. Category names become classes;
//! detection annotations carry no captions, so object captions get the
//! class name as a placeholder and the context caption is left empty.
//! Boxes are clamped into the image bounds (counted) and annotations with
//! non-positive extent are skipped (counted); dangling image or category
//! references are errors.

use super::HarnessError;
use crate::clue::{BoundingBox, ClueSet, SceneRecord};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

/// What the importer did, for the run log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ImportStats {
    pub images: usize,
    pub objects: usize,
    pub skipped_degenerate: usize,
    pub clamped: usize,
}

/// Convert a COCO annotation file into scene records, one per image (in
/// file order), with `image_path` rooted at `images_dir`.
pub fn import_coco_truth(
    annotation_file: &Path,
    images_dir: &str,
) -> Result<(Vec<SceneRecord>, ImportStats), HarnessError> {
    let text = std::fs::read_to_string(annotation_file).map_err(|e| HarnessError::Io {
        path: annotation_file.display().to_string(),
        source: e,
    })?;
    let file: CocoFile = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", annotation_file.display())))?;

    let mut categories = BTreeMap::new();
    for c in &file.categories {
        if categories.insert(c.id, c.name.as_str()).is_some() {
            return Err(HarnessError::Config(format!(
                "duplicate category id {}",
                c.id
            )));
        }
    }

    let mut scenes = BTreeMap::new();
    let mut order = Vec::with_capacity(file.images.len());
    for image in &file.images {
        if image.width == 0 || image.height == 0 {
            return Err(HarnessError::Config(format!(
                "image {} has zero dimension {}x{}",
                image.id, image.width, image.height
            )));
        }
        let path = if images_dir.is_empty() {
            image.file_name.clone()
        } else {
            format!("{}/{}", images_dir.trim_end_matches('/'), image.file_name)
        };
        let record = SceneRecord {
            image_id: image.id.to_string(),
            image_path: path,
            width: image.width,
            height: image.height,
            truth: ClueSet::empty(""),
        };
        if scenes.insert(image.id, record).is_some() {
            return Err(HarnessError::Config(format!(
                "duplicate image id {}",
                image.id
            )));
        }
        order.push(image.id);
    }

    let mut stats = ImportStats {
        images: order.len(),
        ..Default::default()
    };
    for (i, ann) in file.annotations.iter().enumerate() {
        let scene = scenes.get_mut(&ann.image_id).ok_or_else(|| {
            HarnessError::Config(format!(
                "annotation {i} references unknown image id {}",
                ann.image_id
            ))
        })?;
        let class = *categories.get(&ann.category_id).ok_or_else(|| {
            HarnessError::Config(format!(
                "annotation {i} references unknown category id {}",
                ann.category_id
            ))
        })?;
        let [x, y, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            stats.skipped_degenerate += 1;
            continue;
        }
        let raw = BoundingBox::new(x, y, x + w, y + h);
        let clamped = raw.clamped(f64::from(scene.width), f64::from(scene.height));
        if clamped != raw {
            stats.clamped += 1;
        }
        if !clamped.is_valid() {
            stats.skipped_degenerate += 1;
            continue;
        }
        scene.truth.boxes.push(clamped);
        scene.truth.classes.push(class.to_string());
        scene.truth.object_captions.push(class.to_string());
        stats.objects += 1;
    }

    let records: Vec<SceneRecord> = order
        .into_iter()
        .map(|id| scenes.remove(&id).expect("ordered id present"))
        .collect();
    debug_assert!(records.iter().all(|s| s.is_well_formed()));
    Ok((records, stats))
}
