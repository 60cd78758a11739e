//! Report rendering: one table per task with variants as columns, in
//! markdown (2-decimal presentation) or CSV (full precision, long form).

use super::{MetricReport, VariantMetrics};
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub fn render_report(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn opt2(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_else(|| "-".into())
}

fn detection_rows(v: &VariantMetrics) -> [Option<f64>; 6] {
    match &v.detection {
        Some(d) => [
            Some(d.report.map50),
            Some(d.report.map5095),
            Some(d.report.iou_mean),
            Some(d.report.precision),
            Some(d.report.recall),
            Some(d.report.f1),
        ],
        None => [None; 6],
    }
}

const DETECTION_METRICS: [&str; 6] = [
    "mAP@0.5",
    "mAP@0.5:0.95",
    "IoU Mean",
    "Precision",
    "Recall",
    "F1 Score",
];

fn table_header(out: &mut String, variants: &[VariantMetrics]) {
    out.push_str("| Metric |");
    for v in variants {
        let _ = write!(out, " {} |", v.label);
    }
    out.push('\n');
    out.push_str("| --- |");
    for _ in variants {
        out.push_str(" --- |");
    }
    out.push('\n');
}

fn caption_table(
    out: &mut String,
    title: &str,
    variants: &[VariantMetrics],
    pick: impl Fn(&VariantMetrics) -> Option<&super::CaptionScores>,
) {
    if variants.iter().all(|v| pick(v).is_none()) {
        return;
    }
    let _ = writeln!(out, "## {title}\n");
    table_header(out, variants);
    let rows: [(&str, Box<dyn Fn(&super::CaptionScores) -> String>); 5] = [
        ("BLEU-4", Box::new(|c: &super::CaptionScores| opt2(c.bleu4))),
        (
            "BLEU-4 (x100)",
            Box::new(|c| opt2(c.bleu4.map(|b| b * 100.0))),
        ),
        ("CIDEr", Box::new(|c| opt2(c.cider))),
        ("CIDEr (x10)", Box::new(|c| opt2(c.cider.map(|x| x * 10.0)))),
        ("entries", Box::new(|c| c.entries.to_string())),
    ];
    for (name, cell) in rows {
        let _ = write!(out, "| {name} |");
        for v in variants {
            let text = pick(v).map(&cell).unwrap_or_else(|| "-".into());
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

fn render_markdown(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    let variants = &report.variants;

    if variants.iter().any(|v| v.detection.is_some()) {
        out.push_str("## Detection\n\n");
        table_header(&mut out, variants);
        for (row, name) in DETECTION_METRICS.iter().enumerate() {
            let _ = write!(out, "| {name} |");
            for v in variants {
                let _ = write!(out, " {} |", opt2(detection_rows(v)[row]));
            }
            out.push('\n');
        }
        out.push('\n');
    }

    caption_table(&mut out, "Object-level captions", variants, |v| {
        v.object_captions.as_ref()
    });
    caption_table(&mut out, "Context-level captions", variants, |v| {
        v.context_captions.as_ref()
    });

    if variants.iter().any(|v| v.classification.is_some()) {
        out.push_str("## Classification\n\n");
        table_header(&mut out, variants);
        for (name, pick) in [
            (
                "Top-1",
                Box::new(|t: &super::TopkScores| opt2(Some(t.top1)))
                    as Box<dyn Fn(&super::TopkScores) -> String>,
            ),
            ("Top-5", Box::new(|t| opt2(Some(t.top5)))),
            ("items", Box::new(|t| t.items.to_string())),
        ] {
            let _ = write!(out, "| {name} |");
            for v in variants {
                let text = v
                    .classification
                    .as_ref()
                    .map(&pick)
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("## Appendix\n\n");
    for v in variants {
        let excluded = v
            .detection
            .as_ref()
            .map(|d| {
                if d.excluded_classes.is_empty() {
                    "none".to_string()
                } else {
                    d.excluded_classes.join(", ")
                }
            })
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "- variant {}: {} ({} scenes, {} failed); prediction-only classes excluded from mAP: {excluded}",
            v.label, v.mode, v.scenes, v.failed_scenes
        );
    }
    out.push('\n');

    out.push_str("Notes:\n\n");
    out.push_str("1. IoU Mean is the mean IoU over matched prediction/truth pairs at threshold 0.5; it is 0 when nothing matches.\n");
    out.push_str("2. Predictions without confidence scores rank in input order with score 1.0.\n");
    out.push_str("3. CIDEr's native per-entry scale is 0-10; the (x10) row rescales it for percent-style comparison, as does BLEU-4 (x100).\n");
    out.push_str("4. Classes with no ground truth anywhere in the dataset are excluded from the mAP mean and listed in the appendix.\n");
    out.push_str(
        "5. Values are rounded to 2 decimals here; the CSV report carries full precision.\n\n",
    );

    out.push_str("## Run metadata\n\n");
    let m = &report.metadata;
    let _ = writeln!(out, "- dataset sha256: `{}`", m.dataset_sha256);
    let _ = writeln!(out, "- seed: {}", m.seed);
    let _ = writeln!(
        out,
        "- first prompt sha256: `{}`",
        m.prompts.first_prompt_sha256
    );
    let _ = writeln!(
        out,
        "- re-thinking prompt sha256: `{}`",
        m.prompts.rethink_prompt_sha256
    );
    for (label, tag) in &m.backend_tags {
        let _ = writeln!(out, "- variant {label} backend: {tag}");
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(report: &MetricReport) -> String {
    let mut out = String::from("section,metric,variant,value\n");
    let mut push = |section: &str, metric: &str, variant: &str, value: String| {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(section),
            csv_field(metric),
            csv_field(variant),
            csv_field(&value)
        );
    };

    for v in &report.variants {
        if let Some(d) = &v.detection {
            let values = [
                d.report.map50,
                d.report.map5095,
                d.report.iou_mean,
                d.report.precision,
                d.report.recall,
                d.report.f1,
            ];
            for (name, value) in DETECTION_METRICS.iter().zip(values) {
                push("detection", name, &v.label, format!("{value}"));
            }
            push(
                "detection",
                "tp",
                &v.label,
                d.counts.true_positives.to_string(),
            );
            push(
                "detection",
                "fp",
                &v.label,
                d.counts.false_positives.to_string(),
            );
            push(
                "detection",
                "fn",
                &v.label,
                d.counts.false_negatives.to_string(),
            );
        }
        for (section, scores) in [
            ("captions_object", &v.object_captions),
            ("captions_context", &v.context_captions),
        ] {
            if let Some(c) = scores {
                push(section, "entries", &v.label, c.entries.to_string());
                if let Some(b) = c.bleu4 {
                    push(section, "bleu4", &v.label, format!("{b}"));
                }
                if let Some(x) = c.cider {
                    push(section, "cider", &v.label, format!("{x}"));
                }
            }
        }
        if let Some(t) = &v.classification {
            push("classification", "top1", &v.label, format!("{}", t.top1));
            push("classification", "top5", &v.label, format!("{}", t.top5));
            push("classification", "items", &v.label, t.items.to_string());
        }
        push(
            "run",
            "failed_scenes",
            &v.label,
            v.failed_scenes.to_string(),
        );
        push("run", "backend_tag", &v.label, v.backend_tag.clone());
    }
    let m = &report.metadata;
    push("meta", "dataset_sha256", "", m.dataset_sha256.clone());
    push("meta", "seed", "", m.seed.to_string());
    push(
        "meta",
        "first_prompt_sha256",
        "",
        m.prompts.first_prompt_sha256.clone(),
    );
    push(
        "meta",
        "rethink_prompt_sha256",
        "",
        m.prompts.rethink_prompt_sha256.clone(),
    );
    out
}
