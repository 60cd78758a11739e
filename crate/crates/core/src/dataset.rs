//! Line-delimited dataset files: ground-truth scenes and predictions.
//!
//! Both files carry one JSON record per line. Ground truth uses the
//! [`SceneRecord`] fields (`image_id`, `image_path`, `width`, `height`,
//! `truth`); predictions mirror it with `image_id` and a `pred` record.

use crate::clue::{ClueSet, SceneRecord, Violation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// One prediction line: the scene it belongs to and the predicted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub pred: ClueSet,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Record {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: duplicate image_id {image_id:?}")]
    DuplicateImageId {
        path: String,
        line: usize,
        image_id: String,
    },
    #[error("{path}:{line}: invalid record for {image_id:?}: {detail}")]
    InvalidRecord {
        path: String,
        line: usize,
        image_id: String,
        detail: String,
    },
    #[error("prediction references unknown image_id {image_id:?}")]
    UnknownImageId { image_id: String },
    #[error("dataset file {path} contains no records")]
    Empty { path: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn violations_detail(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Read and validate a ground-truth file. Every record must be well formed
/// and `image_id` must be unique within the file. Blank lines are skipped.
pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut seen = BTreeSet::new();
    let mut scenes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let scene: SceneRecord = serde_json::from_str(line).map_err(|e| DataError::Record {
            path: display.clone(),
            line: lineno,
            detail: e.to_string(),
        })?;
        if !seen.insert(scene.image_id.clone()) {
            return Err(DataError::DuplicateImageId {
                path: display,
                line: lineno,
                image_id: scene.image_id,
            });
        }
        if !scene.is_well_formed() {
            return Err(DataError::InvalidRecord {
                path: display,
                line: lineno,
                image_id: scene.image_id.clone(),
                detail: violations_detail(&scene.validate()),
            });
        }
        scenes.push(scene);
    }
    if scenes.is_empty() {
        return Err(DataError::Empty { path: display });
    }
    Ok(scenes)
}

pub fn write_scenes(path: &Path, scenes: &[SceneRecord]) -> Result<(), DataError> {
    let mut out = Vec::new();
    for s in scenes {
        serde_json::to_writer(&mut out, s).expect("scene serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read a prediction file. Structural `ClueSet` invariants are enforced;
/// bounds are not (predictions may overshoot the image).
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| DataError::Record {
            path: display.clone(),
            line: lineno,
            detail: e.to_string(),
        })?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(DataError::DuplicateImageId {
                path: display,
                line: lineno,
                image_id: rec.image_id,
            });
        }
        let violations = rec.pred.validate(None);
        if !violations.is_empty() {
            return Err(DataError::InvalidRecord {
                path: display,
                line: lineno,
                image_id: rec.image_id.clone(),
                detail: violations_detail(&violations),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for r in records {
        serde_json::to_writer(&mut file, r).expect("prediction serializes");
        file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Prediction/truth pair for one scene, the unit the metric modules consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub image_id: String,
    pub pred: ClueSet,
    pub truth: ClueSet,
}

/// Join predictions onto scenes by `image_id`, in scene order. Scenes with
/// no prediction record evaluate against an empty prediction (they count
/// fully as misses); predictions naming an unknown scene are an error.
pub fn pair_for_eval(
    scenes: &[SceneRecord],
    predictions: &[PredictionRecord],
) -> Result<Vec<ScenePair>, DataError> {
    let known: BTreeSet<&str> = scenes.iter().map(|s| s.image_id.as_str()).collect();
    for p in predictions {
        if !known.contains(p.image_id.as_str()) {
            return Err(DataError::UnknownImageId {
                image_id: p.image_id.clone(),
            });
        }
    }
    let by_id: std::collections::BTreeMap<&str, &ClueSet> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), &p.pred))
        .collect();
    Ok(scenes
        .iter()
        .map(|s| ScenePair {
            image_id: s.image_id.clone(),
            pred: by_id
                .get(s.image_id.as_str())
                .map(|c| (*c).clone())
                .unwrap_or_else(|| ClueSet::empty("")),
            truth: s.truth.clone(),
        })
        .collect())
}
