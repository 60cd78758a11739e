//! The 4-clues record: bounding boxes, class names, per-object captions, and a
//! scene-level context caption, stored as parallel arrays.
//!
//! A [`ClueSet`] is the unit every other module consumes: the canonical wire
//! format produced by [`serialize_clueset`], the ground-truth payload inside a
//! [`SceneRecord`], and the prediction payload scored by the metric modules.
//! Validation returns violations as data rather than failing fast, so callers
//! can report every problem in one pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis-aligned box in absolute pixel coordinates, corner format.
///
/// Serialized as the 4-element array `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
    }

    /// Positive extent on both axes and all coordinates finite.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x_min < self.x_max && self.y_min < self.y_max
    }

    /// Clamp all coordinates into `[0, width] x [0, height]`. May produce a
    /// zero-area box when the input lies entirely outside the bounds.
    pub fn clamped(&self, width: f64, height: f64) -> Self {
        Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    pub fn fits_within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x_min, self.y_min, self.x_max, self.y_max].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[f64; 4]>::deserialize(deserializer)?;
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

/// Canonical case/whitespace-insensitive key for a class name.
///
/// Class names are compared case-insensitively after trimming everywhere in
/// this crate; free-text model output varies in casing.
pub fn class_key(name: &str) -> String {
    name.trim().to_lowercase()
}

pub fn class_eq(a: &str, b: &str) -> bool {
    class_key(a) == class_key(b)
}

/// One image's structured annotation: parallel `boxes` / `classes` /
/// `object_captions` arrays, optional per-object confidence `scores`, and a
/// single `context_caption` for the whole scene.
///
/// Field order here is the canonical serialization order; see
/// [`serialize_clueset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClueSet {
    pub boxes: Vec<BoundingBox>,
    pub classes: Vec<String>,
    pub object_captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub context_caption: String,
}

impl ClueSet {
    /// A scene with no objects and the given context caption.
    pub fn empty(context_caption: impl Into<String>) -> Self {
        Self {
            boxes: Vec::new(),
            classes: Vec::new(),
            object_captions: Vec::new(),
            scores: None,
            context_caption: context_caption.into(),
        }
    }

    /// Number of annotated objects.
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Confidence of object `i`; objects without explicit scores default to
    /// 1.0 so ranked metrics degrade to input-order ranking.
    pub fn score(&self, i: usize) -> f64 {
        self.scores
            .as_ref()
            .and_then(|s| s.get(i).copied())
            .unwrap_or(1.0)
    }

    pub fn validate(&self, bounds: Option<(f64, f64)>) -> Vec<Violation> {
        validate_clueset(self, bounds)
    }

    pub fn is_valid(&self) -> bool {
        self.validate(None).is_empty()
    }
}

/// A single violated invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// `|boxes| = |classes| = |object_captions|` does not hold.
    ParallelArrayMismatch {
        boxes: usize,
        classes: usize,
        captions: usize,
    },
    /// `scores` is present but its length differs from `boxes`.
    ScoreLengthMismatch {
        scores: usize,
        boxes: usize,
    },
    NonFiniteBox {
        index: usize,
    },
    ZeroWidthBox {
        index: usize,
    },
    ZeroHeightBox {
        index: usize,
    },
    /// Score is non-finite or outside `[0, 1]`.
    InvalidScore {
        index: usize,
        value: f64,
    },
    EmptyClassName {
        index: usize,
    },
    BoxOutOfBounds {
        index: usize,
        width: f64,
        height: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::ParallelArrayMismatch {
                boxes,
                classes,
                captions,
            } => write!(
                f,
                "parallel-array mismatch: {boxes} boxes, {classes} classes, {captions} captions"
            ),
            Violation::ScoreLengthMismatch { scores, boxes } => {
                write!(
                    f,
                    "score length mismatch: {scores} scores for {boxes} boxes"
                )
            }
            Violation::NonFiniteBox { index } => write!(f, "non-finite box at index {index}"),
            Violation::ZeroWidthBox { index } => write!(f, "zero-width box at index {index}"),
            Violation::ZeroHeightBox { index } => write!(f, "zero-height box at index {index}"),
            Violation::InvalidScore { index, value } => {
                write!(f, "invalid score {value} at index {index}")
            }
            Violation::EmptyClassName { index } => write!(f, "empty class name at index {index}"),
            Violation::BoxOutOfBounds {
                index,
                width,
                height,
            } => {
                write!(f, "box at index {index} outside bounds {width}x{height}")
            }
        }
    }
}

/// Check every `ClueSet` invariant and, when `bounds = (width, height)` is
/// given, that each box fits inside `[0, width] x [0, height]` with zero
/// tolerance. Returns all violations, not just the first; an empty vector
/// means the record is valid.
pub fn validate_clueset(c: &ClueSet, bounds: Option<(f64, f64)>) -> Vec<Violation> {
    let mut out = Vec::new();
    let (nb, nc, np) = (c.boxes.len(), c.classes.len(), c.object_captions.len());
    if nb != nc || nb != np {
        out.push(Violation::ParallelArrayMismatch {
            boxes: nb,
            classes: nc,
            captions: np,
        });
    }
    if let Some(scores) = &c.scores {
        if scores.len() != nb {
            out.push(Violation::ScoreLengthMismatch {
                scores: scores.len(),
                boxes: nb,
            });
        }
        for (i, &s) in scores.iter().enumerate() {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                out.push(Violation::InvalidScore { index: i, value: s });
            }
        }
    }
    for (i, b) in c.boxes.iter().enumerate() {
        if !b.is_finite() {
            out.push(Violation::NonFiniteBox { index: i });
            continue;
        }
        if b.x_min >= b.x_max {
            out.push(Violation::ZeroWidthBox { index: i });
        }
        if b.y_min >= b.y_max {
            out.push(Violation::ZeroHeightBox { index: i });
        }
        if let Some((w, h)) = bounds {
            if b.is_valid() && !b.fits_within(w, h) {
                out.push(Violation::BoxOutOfBounds {
                    index: i,
                    width: w,
                    height: h,
                });
            }
        }
    }
    for (i, name) in c.classes.iter().enumerate() {
        if name.trim().is_empty() {
            out.push(Violation::EmptyClassName { index: i });
        }
    }
    out
}

/// Ground-truth unit: image identity, pixel dimensions, and the truth record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub image_id: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    pub truth: ClueSet,
}

impl SceneRecord {
    pub fn bounds(&self) -> (f64, f64) {
        (f64::from(self.width), f64::from(self.height))
    }

    /// Truth must satisfy all `ClueSet` invariants within the image bounds,
    /// and the identity fields must be nonempty with positive dimensions.
    pub fn validate(&self) -> Vec<Violation> {
        self.truth.validate(Some(self.bounds()))
    }

    pub fn is_well_formed(&self) -> bool {
        !self.image_id.is_empty() && self.width > 0 && self.height > 0 && self.validate().is_empty()
    }
}

/// Tag for one repair the lenient parser applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairKind {
    /// A code fence wrapped the payload and was stripped.
    FenceStrip,
    /// Prose surrounded the first balanced object and was discarded.
    ProseStrip,
    /// Trailing commas were removed before parsing.
    TrailingComma,
    /// Single-quoted strings were rewritten to double-quoted.
    SingleQuotes,
    /// A numeric string was coerced to a number.
    NumericCoercion,
    /// Parallel arrays had unequal lengths and were truncated to the shortest.
    ArrayTruncation,
    /// A box was clamped into the known image bounds.
    BoxClamp,
    /// One or more objects were dropped for irreparable invariant violations.
    ObjectDrop,
    /// A required field was missing or mistyped and replaced by its empty default.
    FieldDefault,
    /// Keys outside the schema were present and ignored.
    UnknownKeyIgnored,
    /// No parseable object existed; an empty record was substituted.
    /// Emitted by the inference engine, never by the parser itself.
    UnparseableOutput,
}

impl std::fmt::Display for RepairKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RepairKind::FenceStrip => "fence-strip",
            RepairKind::ProseStrip => "prose-strip",
            RepairKind::TrailingComma => "trailing-comma",
            RepairKind::SingleQuotes => "single-quotes",
            RepairKind::NumericCoercion => "numeric-coercion",
            RepairKind::ArrayTruncation => "array-truncation",
            RepairKind::BoxClamp => "box-clamp",
            RepairKind::ObjectDrop => "object-drop",
            RepairKind::FieldDefault => "field-default",
            RepairKind::UnknownKeyIgnored => "unknown-key-ignored",
            RepairKind::UnparseableOutput => "unparseable-output",
        };
        f.write_str(s)
    }
}

/// What the lenient parser had to do to recover a record.
///
/// `repairs_applied` holds each distinct repair kind once, in the order first
/// applied. `dropped_objects` counts only objects discarded at the final
/// per-object validation step; entries lost to array truncation are visible
/// through the `ArrayTruncation` tag instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub repairs_applied: Vec<RepairKind>,
    pub was_strict: bool,
    pub dropped_objects: usize,
}

impl ParseDiagnostics {
    pub fn strict() -> Self {
        Self {
            repairs_applied: Vec::new(),
            was_strict: true,
            dropped_objects: 0,
        }
    }

    /// Record a repair kind, keeping the list deduplicated and insertion-ordered.
    pub(crate) fn record(&mut self, kind: RepairKind) {
        if !self.repairs_applied.contains(&kind) {
            self.repairs_applied.push(kind);
        }
    }

    /// `was_strict` implies no repairs and no drops.
    pub fn is_consistent(&self) -> bool {
        !self.was_strict || (self.repairs_applied.is_empty() && self.dropped_objects == 0)
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violations: {}", format_violations(.0))]
    Invariant(Vec<Violation>),
    #[error("no parseable object in input")]
    Unrecoverable,
    #[error("cannot serialize invalid record: {}", format_violations(.0))]
    InvalidClueSet(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Strict parse: the input must be exactly one object with the four
/// required keys (`scores` optional), no unknown keys, no surrounding text,
/// and every invariant holding.
pub fn parse_clueset_strict(text: &str) -> Result<ClueSet, ParseError> {
    let c: ClueSet = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => ParseError::Schema(e.to_string()),
            _ => ParseError::Syntax(e.to_string()),
        }
    })?;
    let violations = c.validate(None);
    if violations.is_empty() {
        Ok(c)
    } else {
        Err(ParseError::Invariant(violations))
    }
}

/// Canonical serialization: compact, key order fixed as `boxes`, `classes`,
/// `object_captions`, `scores` (only when present), `context_caption`.
/// Coordinates round-trip exactly through [`parse_clueset_strict`]; two
/// serializations of equal records are byte-identical.
pub fn serialize_clueset(c: &ClueSet) -> Result<String, ParseError> {
    let violations = c.validate(None);
    if !violations.is_empty() {
        return Err(ParseError::InvalidClueSet(violations));
    }
    Ok(serde_json::to_string(c).expect("valid clue set serializes"))
}
