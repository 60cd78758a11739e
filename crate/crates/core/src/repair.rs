//! Lenient recovery of 4-clues records from noisy model output.
//!
//! Real model output wraps the payload in code fences, surrounds it with
//! prose, leaves trailing commas, single-quotes strings, or emits numbers as
//! strings. [`parse_clueset_lenient`] applies a fixed, ordered repair
//! pipeline and records every repair it performs:
//!
//! 1. strip code fences and surrounding prose
//! 2. extract the first balanced object
//! 3. tolerate trailing commas and single-quoted strings
//! 4. coerce numeric strings to numbers
//! 5. truncate parallel arrays to the shortest length
//! 6. clamp boxes to image bounds when bounds are known
//! 7. drop individual objects that remain invalid
//!
//! Repairs are capped at this list: missing fields default to empty values,
//! unknown keys are ignored, and nothing more speculative (no key renaming,
//! no box-format guessing) is attempted. The pipeline never invents objects
//! and is deterministic for fixed input.

use crate::clue::{
    parse_clueset_strict, BoundingBox, ClueSet, ParseDiagnostics, ParseError, RepairKind,
};
use serde_json::Value;

/// Minimum extent a clamped box must keep to count as recoverable.
const MIN_EXTENT: f64 = 0.0;

/// Parse `text` leniently, returning the recovered record and a diagnostic
/// trail. When `bounds = (width, height)` is known, boxes are clamped into
/// it. Fails only when no balanced object can be found or the one found is
/// beyond repair.
///
/// Strict-valid input passes through unchanged with `was_strict = true`.
pub fn parse_clueset_lenient(
    text: &str,
    bounds: Option<(f64, f64)>,
) -> Result<(ClueSet, ParseDiagnostics), ParseError> {
    if let Ok(c) = parse_clueset_strict(text) {
        let in_bounds = match bounds {
            Some((w, h)) => c.boxes.iter().all(|b| b.fits_within(w, h)),
            None => true,
        };
        if in_bounds {
            return Ok((c, ParseDiagnostics::strict()));
        }
    }

    let mut diag = ParseDiagnostics {
        repairs_applied: Vec::new(),
        was_strict: false,
        dropped_objects: 0,
    };

    // Steps 1-2: isolate the candidate object text.
    let mut candidate = text;
    if let Some(inner) = extract_fenced_block(candidate) {
        diag.record(RepairKind::FenceStrip);
        candidate = inner;
    }
    let object_text = match extract_balanced_object(candidate) {
        Some(obj) => {
            if obj.trim() != candidate.trim() {
                diag.record(RepairKind::ProseStrip);
            }
            obj
        }
        None => return Err(ParseError::Unrecoverable),
    };

    // Step 3: plain parse first, then the tolerant rewrite.
    let value: Value = match serde_json::from_str(object_text) {
        Ok(v) => v,
        Err(_) => {
            let (rewritten, singles, trailing) = relax_json(object_text);
            if singles {
                diag.record(RepairKind::SingleQuotes);
            }
            if trailing {
                diag.record(RepairKind::TrailingComma);
            }
            serde_json::from_str(&rewritten).map_err(|_| ParseError::Unrecoverable)?
        }
    };
    let Value::Object(map) = value else {
        return Err(ParseError::Unrecoverable);
    };

    // Steps 4-7: field extraction with coercions, truncation, clamping, drops.
    let known = [
        "boxes",
        "classes",
        "object_captions",
        "scores",
        "context_caption",
    ];
    if map.keys().any(|k| !known.contains(&k.as_str())) {
        diag.record(RepairKind::UnknownKeyIgnored);
    }

    let raw_boxes = take_array(&map, "boxes", &mut diag);
    let raw_classes = take_array(&map, "classes", &mut diag);
    let raw_captions = take_array(&map, "object_captions", &mut diag);
    let raw_scores: Option<Vec<Value>> = match map.get("scores") {
        None | Some(Value::Null) => None,
        Some(Value::Array(a)) => Some(a.clone()),
        Some(_) => {
            diag.record(RepairKind::FieldDefault);
            None
        }
    };
    let context_caption = match map.get("context_caption") {
        Some(Value::String(s)) => s.clone(),
        _ => {
            diag.record(RepairKind::FieldDefault);
            String::new()
        }
    };

    // Step 5: truncate every parallel array (scores included when present).
    let mut n = raw_boxes
        .len()
        .min(raw_classes.len())
        .min(raw_captions.len());
    if let Some(s) = &raw_scores {
        n = n.min(s.len());
    }
    let truncated = raw_boxes.len() > n
        || raw_classes.len() > n
        || raw_captions.len() > n
        || raw_scores.as_ref().is_some_and(|s| s.len() > n);
    if truncated {
        diag.record(RepairKind::ArrayTruncation);
    }

    let mut boxes = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut captions = Vec::with_capacity(n);
    let mut scores = raw_scores.as_ref().map(|_| Vec::with_capacity(n));

    for i in 0..n {
        let parsed_box = coerce_box(&raw_boxes[i], &mut diag);
        let class = match &raw_classes[i] {
            Value::String(s) => Some(s.clone()),
            _ => None,
        };
        let caption = match &raw_captions[i] {
            Value::String(s) => Some(s.clone()),
            _ => None,
        };
        let score = match &raw_scores {
            Some(vals) => match coerce_number(&vals[i], &mut diag) {
                Some(s) if s.is_finite() && (0.0..=1.0).contains(&s) => Some(Some(s)),
                _ => None,
            },
            None => Some(None),
        };

        let (Some(mut bx), Some(class), Some(caption), Some(score)) =
            (parsed_box, class, caption, score)
        else {
            diag.record(RepairKind::ObjectDrop);
            diag.dropped_objects += 1;
            continue;
        };

        // Step 6: clamp to bounds when known.
        if let Some((w, h)) = bounds {
            if bx.is_valid() && !bx.fits_within(w, h) {
                bx = bx.clamped(w, h);
                diag.record(RepairKind::BoxClamp);
            }
        }

        // Step 7: drop anything still invalid.
        if !bx.is_finite()
            || bx.width() <= MIN_EXTENT
            || bx.height() <= MIN_EXTENT
            || class.trim().is_empty()
        {
            diag.record(RepairKind::ObjectDrop);
            diag.dropped_objects += 1;
            continue;
        }

        boxes.push(bx);
        classes.push(class);
        captions.push(caption);
        if let Some(s) = scores.as_mut() {
            s.push(score.expect("score present when scores array present"));
        }
    }

    let clues = ClueSet {
        boxes,
        classes,
        object_captions: captions,
        scores,
        context_caption,
    };
    debug_assert!(
        clues.is_valid(),
        "lenient pipeline must produce a valid record"
    );
    Ok((clues, diag))
}

fn take_array(
    map: &serde_json::Map<String, Value>,
    key: &str,
    diag: &mut ParseDiagnostics,
) -> Vec<Value> {
    match map.get(key) {
        Some(Value::Array(a)) => a.clone(),
        _ => {
            diag.record(RepairKind::FieldDefault);
            Vec::new()
        }
    }
}

fn coerce_number(v: &Value, diag: &mut ParseDiagnostics) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => {
            let parsed = s.trim().parse::<f64>().ok()?;
            diag.record(RepairKind::NumericCoercion);
            Some(parsed)
        }
        _ => None,
    }
}

/// A box entry must be an array of exactly four numbers (numeric strings
/// tolerated). Anything else marks the object invalid.
fn coerce_box(v: &Value, diag: &mut ParseDiagnostics) -> Option<BoundingBox> {
    let Value::Array(parts) = v else { return None };
    if parts.len() != 4 {
        return None;
    }
    let mut coords = [0.0; 4];
    for (slot, part) in coords.iter_mut().zip(parts) {
        *slot = coerce_number(part, diag)?;
    }
    Some(BoundingBox::new(coords[0], coords[1], coords[2], coords[3]))
}

/// Return the body of the first code fence that contains an object opener,
/// skipping an optional language tag after the opening backticks.
fn extract_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let mut body = &text[open + 3..];
    let tag_len = body
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .map(char::len_utf8)
        .sum();
    body = &body[tag_len..];
    if let Some(stripped) = body.strip_prefix('\n') {
        body = stripped;
    }
    let inner = match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    };
    inner.contains('{').then_some(inner)
}

/// Find the first `{ ... }` such that braces balance, honoring both
/// double- and single-quoted strings with backslash escapes.
fn extract_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut start = None;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' if depth > 0 => quote = Some(b),
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start.unwrap()..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrite single-quoted strings to double-quoted and drop trailing commas.
/// Returns the rewritten text and which of the two rewrites actually fired.
fn relax_json(text: &str) -> (String, bool, bool) {
    let mut out = String::with_capacity(text.len());
    let mut singles = false;
    let mut trailing = false;
    let mut quote: Option<char> = None;
    let mut escaped = false;

    for (i, c) in text.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
                // Inside a single-quoted string, \' means a literal quote.
                if q == '\'' && c == '\'' {
                    out.pop();
                    out.push('\'');
                } else {
                    out.push(c);
                }
                continue;
            }
            match c {
                '\\' => {
                    escaped = true;
                    out.push(c);
                }
                '"' if q == '\'' => out.push_str("\\\""),
                c if c == q => {
                    quote = None;
                    out.push('"');
                }
                c => out.push(c),
            }
            continue;
        }
        match c {
            '"' => {
                quote = Some('"');
                out.push('"');
            }
            '\'' => {
                quote = Some('\'');
                singles = true;
                out.push('"');
            }
            ',' => {
                let mut rest = text[i + 1..].chars();
                let next_significant = loop {
                    match rest.next() {
                        Some(ws) if ws.is_whitespace() => continue,
                        other => break other,
                    }
                };
                if matches!(next_significant, Some('}') | Some(']')) {
                    trailing = true;
                } else {
                    out.push(',');
                }
            }
            c => out.push(c),
        }
    }
    (out, singles, trailing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clue::serialize_clueset;

    fn valid_text() -> String {
        r#"{"boxes":[[0,0,10,10],[5,5,20,25]],"classes":["dog","cat"],"object_captions":["a dog","a cat"],"context_caption":"a yard"}"#
            .to_string()
    }

    #[test]
    fn strict_input_is_identity_with_empty_diagnostics() {
        let (c, d) = parse_clueset_lenient(&valid_text(), None).unwrap();
        assert!(d.was_strict);
        assert!(d.repairs_applied.is_empty());
        assert_eq!(d.dropped_objects, 0);
        assert_eq!(c, crate::clue::parse_clueset_strict(&valid_text()).unwrap());
        // Canonical form round-trips byte-identically.
        let canon = serialize_clueset(&c).unwrap();
        let (c2, d2) = parse_clueset_lenient(&canon, None).unwrap();
        assert!(d2.was_strict);
        assert_eq!(serialize_clueset(&c2).unwrap(), canon);
    }

    #[test]
    fn fenced_input_strips_fence_only() {
        let fenced = format!("```json\n{}\n```", valid_text());
        let (c, d) = parse_clueset_lenient(&fenced, None).unwrap();
        let (plain, _) = parse_clueset_lenient(&valid_text(), None).unwrap();
        assert_eq!(c, plain);
        assert_eq!(d.repairs_applied, vec![RepairKind::FenceStrip]);
        assert!(!d.was_strict);
    }

    #[test]
    fn prose_wrapped_input_recovers() {
        let noisy = format!(
            "Sure! Here is the annotation:\n{}\nHope this helps.",
            valid_text()
        );
        let (c, d) = parse_clueset_lenient(&noisy, None).unwrap();
        assert_eq!(c.len(), 2);
        assert!(d.repairs_applied.contains(&RepairKind::ProseStrip));
    }

    #[test]
    fn array_truncation_keeps_shortest_length() {
        // Three boxes, two classes: the documented repair order truncates to
        // two objects and both survive per-object validation.
        let text = r#"{"boxes":[[0,0,10,10],[1,1,11,11],[2,2,12,12]],"classes":["a","b"],"object_captions":["x","y","z"],"context_caption":"c"}"#;
        let (c, d) = parse_clueset_lenient(text, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.boxes[1], BoundingBox::new(1.0, 1.0, 11.0, 11.0));
        assert!(d.repairs_applied.contains(&RepairKind::ArrayTruncation));
        assert_eq!(d.dropped_objects, 0);
    }

    #[test]
    fn trailing_commas_and_single_quotes_repair() {
        let text = r#"{'boxes':[[0,0,10,10],],'classes':['dog',],'object_captions':['a dog',],'context_caption':'park',}"#;
        let (c, d) = parse_clueset_lenient(text, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.classes[0], "dog");
        assert_eq!(c.context_caption, "park");
        assert!(d.repairs_applied.contains(&RepairKind::SingleQuotes));
        assert!(d.repairs_applied.contains(&RepairKind::TrailingComma));
    }

    #[test]
    fn numeric_strings_coerced() {
        let text = r#"{"boxes":[["0","0","10","10"]],"classes":["dog"],"object_captions":["a dog"],"scores":["0.5"],"context_caption":""}"#;
        let (c, d) = parse_clueset_lenient(text, None).unwrap();
        assert_eq!(c.boxes[0], BoundingBox::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(c.scores, Some(vec![0.5]));
        assert!(d.repairs_applied.contains(&RepairKind::NumericCoercion));
    }

    #[test]
    fn boxes_clamped_to_bounds() {
        let text = r#"{"boxes":[[-5,-5,10,10]],"classes":["dog"],"object_captions":["a dog"],"context_caption":""}"#;
        let (c, d) = parse_clueset_lenient(text, Some((20.0, 20.0))).unwrap();
        assert_eq!(c.boxes[0], BoundingBox::new(0.0, 0.0, 10.0, 10.0));
        assert!(d.repairs_applied.contains(&RepairKind::BoxClamp));
    }

    #[test]
    fn fully_out_of_bounds_box_dropped_after_clamp() {
        let text = r#"{"boxes":[[30,30,40,40],[0,0,5,5]],"classes":["dog","cat"],"object_captions":["a","b"],"context_caption":""}"#;
        let (c, d) = parse_clueset_lenient(text, Some((20.0, 20.0))).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.classes[0], "cat");
        assert_eq!(d.dropped_objects, 1);
        assert!(d.repairs_applied.contains(&RepairKind::ObjectDrop));
    }

    #[test]
    fn invalid_objects_dropped_individually() {
        let text = r#"{"boxes":[[0,0,0,10],[0,0,5,5],[0,0,1,1]],"classes":["a","","c"],"object_captions":["x","y","z"],"context_caption":""}"#;
        let (c, d) = parse_clueset_lenient(text, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.classes[0], "c");
        assert_eq!(d.dropped_objects, 2);
    }

    #[test]
    fn missing_fields_default_empty() {
        let (c, d) = parse_clueset_lenient(r#"{"boxes":[],"classes":[]}"#, None).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.context_caption, "");
        assert!(d.repairs_applied.contains(&RepairKind::FieldDefault));
    }

    #[test]
    fn unknown_keys_ignored() {
        let text =
            r#"{"boxes":[],"classes":[],"object_captions":[],"context_caption":"","note":"hi"}"#;
        let (_, d) = parse_clueset_lenient(text, None).unwrap();
        assert!(d.repairs_applied.contains(&RepairKind::UnknownKeyIgnored));
    }

    #[test]
    fn no_object_is_unrecoverable() {
        assert!(matches!(
            parse_clueset_lenient("no json here at all", None),
            Err(ParseError::Unrecoverable)
        ));
        assert!(matches!(
            parse_clueset_lenient("", None),
            Err(ParseError::Unrecoverable)
        ));
    }

    #[test]
    fn braces_inside_strings_do_not_break_balance() {
        let text = r#"prefix {"boxes":[[0,0,1,1]],"classes":["curly } brace"],"object_captions":["{x}"],"context_caption":"a {scene}"} suffix"#;
        let (c, _) = parse_clueset_lenient(text, None).unwrap();
        assert_eq!(c.classes[0], "curly } brace");
        assert_eq!(c.context_caption, "a {scene}");
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let noisy = format!(
            "```\n{}",
            r#"{'boxes':[[0,0,'3',3],],'classes':['a'],'object_captions':['b'],'context_caption':'c'}"#
        );
        let a = parse_clueset_lenient(&noisy, None).unwrap();
        let b = parse_clueset_lenient(&noisy, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn never_invents_objects() {
        // Candidate entries: 2 boxes. Output can only shrink.
        let text = r#"{"boxes":[[0,0,1,1],[0,0,2,2]],"classes":["a","b","c","d"],"object_captions":["p","q","r"],"context_caption":""}"#;
        let (c, _) = parse_clueset_lenient(text, None).unwrap();
        assert!(c.len() <= 2);
    }
}
