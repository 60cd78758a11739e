//! Independent brute-force oracles.
//!
//! These re-derive the metric definitions from scratch with the plainest
//! possible arithmetic (quadratic scans, prefix enumeration, direct
//! grid maxima) and deliberately share no code with the implementation
//! they check. Matching semantics are the documented ones: predictions in
//! descending score with input-order ties, each claiming the unclaimed
//! same-class truth of highest IoU at or above the threshold.

use rtvlm_core::clue::{BoundingBox, ClueSet};
use rtvlm_core::dataset::ScenePair;
use std::collections::BTreeMap;

fn key(name: &str) -> String {
    name.trim().to_lowercase()
}

pub fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let overlap_w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let overlap_h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if overlap_w <= 0.0 || overlap_h <= 0.0 {
        return 0.0;
    }
    let inter = overlap_w * overlap_h;
    let area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
    let area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    inter / (area_a + area_b - inter)
}

fn score_of(c: &ClueSet, i: usize) -> f64 {
    match &c.scores {
        Some(s) => s[i],
        None => 1.0,
    }
}

/// Visit order: descending score, ties by input order (selection scan).
fn visit_order(pred: &ClueSet) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..pred.len()).collect();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for j in 1..remaining.len() {
            if score_of(pred, remaining[j]) > score_of(pred, remaining[best]) {
                best = j;
            }
        }
        order.push(remaining.remove(best));
    }
    order
}

/// Greedy TP labels for one scene's predictions of one class.
fn label_scene(pred: &ClueSet, truth: &ClueSet, class: &str, threshold: f64) -> Vec<(usize, bool)> {
    let mut claimed = vec![false; truth.len()];
    let mut labels = Vec::new();
    for pi in visit_order(pred) {
        if key(&pred.classes[pi]) != key(class) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for ti in 0..truth.len() {
            if claimed[ti] || key(&truth.classes[ti]) != key(class) {
                continue;
            }
            let v = oracle_iou(&pred.boxes[pi], &truth.boxes[ti]);
            if v >= threshold {
                let better = match best {
                    None => true,
                    Some((_, bv)) => v > bv,
                };
                if better {
                    best = Some((ti, v));
                }
            }
        }
        if let Some((ti, _)) = best {
            claimed[ti] = true;
            labels.push((pi, true));
        } else {
            labels.push((pi, false));
        }
    }
    labels
}

/// AP for one class at one threshold: enumerate every prefix of the
/// globally ranked detection list, then take the 101-point grid of
/// interpolated precision maxima.
pub fn oracle_ap(scenes: &[ScenePair], class: &str, threshold: f64) -> Option<f64> {
    let mut total_truth = 0usize;
    let mut detections: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (si, pair) in scenes.iter().enumerate() {
        for c in &pair.truth.classes {
            if key(c) == key(class) {
                total_truth += 1;
            }
        }
        for (pi, tp) in label_scene(&pair.pred, &pair.truth, class, threshold) {
            detections.push((score_of(&pair.pred, pi), si, pi, tp));
        }
    }
    if total_truth == 0 {
        return None;
    }
    detections.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut points = Vec::new();
    let mut tp_count = 0usize;
    for (rank, d) in detections.iter().enumerate() {
        if d.3 {
            tp_count += 1;
        }
        points.push((
            tp_count as f64 / total_truth as f64,
            tp_count as f64 / (rank + 1) as f64,
        ));
    }

    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let mut best = 0.0f64;
        let mut found = false;
        for &(recall, precision) in &points {
            if recall >= r && (!found || precision > best) {
                best = precision;
                found = true;
            }
        }
        if found {
            sum += best;
        }
    }
    Some(sum / 101.0)
}

/// Mean AP over classes with ground truth.
pub fn oracle_map(scenes: &[ScenePair], threshold: f64) -> f64 {
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for pair in scenes {
        for c in &pair.truth.classes {
            *classes.entry(key(c)).or_insert(0) += 1;
        }
    }
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for class in classes.keys() {
        sum += oracle_ap(scenes, class, threshold).expect("class has truth");
    }
    sum / classes.len() as f64
}

/// Mean of [`oracle_map`] over thresholds 0.50, 0.55, ..., 0.95.
pub fn oracle_map_sweep(scenes: &[ScenePair]) -> f64 {
    let mut sum = 0.0;
    for i in 0..10 {
        sum += oracle_map(scenes, (50 + 5 * i) as f64 / 100.0);
    }
    sum / 10.0
}

fn oracle_tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn count_ngrams(tokens: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Direct-counting BLEU-4 on raw strings.
pub fn oracle_bleu4(entries: &[(String, Vec<String>)]) -> f64 {
    let mut clipped = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in entries {
        let c = oracle_tokenize(cand);
        let rs: Vec<Vec<String>> = refs.iter().map(|r| oracle_tokenize(r)).collect();
        cand_len += c.len();
        let mut best = (usize::MAX, 0usize);
        for r in &rs {
            let d = r.len().abs_diff(c.len());
            if d < best.0 || (d == best.0 && r.len() < best.1) {
                best = (d, r.len());
            }
        }
        ref_len += best.1;
        for n in 1..=4 {
            let cc = count_ngrams(&c, n);
            let mut max_ref: BTreeMap<Vec<String>, usize> = BTreeMap::new();
            for r in &rs {
                for (g, k) in count_ngrams(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    if k > *slot {
                        *slot = k;
                    }
                }
            }
            for (g, k) in cc {
                total[n - 1] += k;
                clipped[n - 1] += k.min(max_ref.get(&g).copied().unwrap_or(0));
            }
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        if clipped[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_sum += (clipped[n] as f64 / total[n] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * (log_sum / 4.0).exp()
}

/// Direct TF-IDF CIDEr on raw strings: corpus score and per-entry scores.
pub fn oracle_cider(entries: &[(String, Vec<String>)]) -> (f64, Vec<f64>) {
    let n_docs = entries.len() as f64;
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = entries
        .iter()
        .map(|(c, rs)| {
            (
                oracle_tokenize(c),
                rs.iter().map(|r| oracle_tokenize(r)).collect(),
            )
        })
        .collect();

    let mut idf: Vec<BTreeMap<Vec<String>, f64>> = Vec::new();
    for n in 1..=4 {
        let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (_, refs) in &tokenized {
            let mut seen: std::collections::BTreeSet<Vec<String>> = Default::default();
            for r in refs {
                seen.extend(count_ngrams(r, n).into_keys());
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        idf.push(
            df.into_iter()
                .map(|(g, d)| (g, (n_docs / d.max(1) as f64).ln()))
                .collect(),
        );
    }

    let vec_for = |tokens: &[String], n: usize| -> BTreeMap<Vec<String>, f64> {
        count_ngrams(tokens, n)
            .into_iter()
            .map(|(g, k)| {
                let w = idf[n - 1].get(&g).copied().unwrap_or(n_docs.ln());
                (g, k as f64 * w)
            })
            .collect()
    };
    let cosine = |a: &BTreeMap<Vec<String>, f64>, b: &BTreeMap<Vec<String>, f64>| -> f64 {
        let mut dot = 0.0;
        for (g, va) in a {
            if let Some(vb) = b.get(g) {
                dot += va * vb;
            }
        }
        let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };

    let mut per_entry = Vec::new();
    for (cand, refs) in &tokenized {
        let mut total = 0.0;
        for n in 1..=4 {
            let cv = vec_for(cand, n);
            let mut s = 0.0;
            for r in refs {
                s += cosine(&cv, &vec_for(r, n));
            }
            total += s / refs.len() as f64;
        }
        per_entry.push(10.0 * total / 4.0);
    }
    let corpus = per_entry.iter().sum::<f64>() / per_entry.len() as f64;
    (corpus, per_entry)
}
