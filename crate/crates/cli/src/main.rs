//! `rt`: scene-record tooling on the command line.
//!
//! Subcommands: `eval` (variant grid from a run config), `infer` (one
//! backend over a ground-truth file), `metrics` (score stored predictions),
//! `validate` (check a clues file), `compose-prompts` (render manifest),
//! `losses check` (kernel fixtures and gradient verification), and
//! `import coco` (annotation conversion).
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 backend error.

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtvlm_core::backend::BackendError;
use rtvlm_core::clue::{parse_clueset_strict, BoundingBox, ParseError};
use rtvlm_core::dataset::{read_scenes, write_predictions, write_scenes, DataError};
use rtvlm_core::engine::{EngineOptions, InferenceMode, RethinkEngine};
use rtvlm_core::harness::{
    import_coco_truth, load_backend_spec, metrics_only, render_report, run_eval, HarnessError,
    MetricSelect, ReportFormat, RunConfig,
};
use rtvlm_core::losses::{
    ce_label_smoothing, ce_label_smoothing_grad, class_balanced_focal, class_balanced_focal_grad,
    detection_total_loss, dfl_grad, dfl_objective, focal_loss, focal_loss_grad, grad_check,
    siou_grad_pred, siou_loss, vlm_total_from_components, DetectionLossWeights, DflBins,
    FocalParams,
};
use rtvlm_core::prompts::{compose_triplets, load_inventory, render_plan, PromptError};
use rtvlm_core::repair::parse_clueset_lenient;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "rt",
    version,
    about = "4-clues records, two-stage inference, metrics, and loss verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// One inference pass.
    Single,
    /// Two passes with the re-thinking prompt.
    Rethink,
}

impl From<ModeArg> for InferenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Single => InferenceMode::SinglePass,
            ModeArg::Rethink => InferenceMode::TwoStage,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the variant grid described by a TOML config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one backend over a ground-truth file and write predictions.
    Infer {
        /// Backend profile file (TOML, `kind = "mock"` or `kind = "http"`).
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-scene transcripts here.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// Scenes in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Seed for mock profiles that do not pin one.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2048)]
        max_tokens: u32,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        /// Per-request deadline in seconds (HTTP profiles default to
        /// their own timeout_secs).
        #[arg(long)]
        deadline_secs: Option<f64>,
    },
    /// Score a stored prediction file against ground truth, or a
    /// standalone caption evaluation file.
    Metrics {
        #[arg(long, required_unless_present = "cap_file")]
        gt: Option<PathBuf>,
        #[arg(long, required_unless_present = "cap_file")]
        pred: Option<PathBuf>,
        /// Comma-separated: det, cap, top.
        #[arg(long, default_value = "det")]
        select: String,
        /// Context-caption reference sidecar (JSONL).
        #[arg(long)]
        cap_refs: Option<PathBuf>,
        /// Score this caption evaluation file (candidate + references per
        /// line) instead of a prediction file.
        #[arg(long, conflicts_with_all = ["gt", "pred"])]
        cap_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
    },
    /// Check a clues file (one record per line).
    Validate {
        #[arg(long)]
        clues: PathBuf,
        /// Accept lenient recoveries as passing.
        #[arg(long)]
        lenient: bool,
        /// Image bounds for box checks.
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        height: Option<f64>,
    },
    /// Compose prompt triplets and write a render manifest.
    ComposePrompts {
        #[arg(long)]
        pinned: PathBuf,
        #[arg(long)]
        bases: PathBuf,
        #[arg(long)]
        modifiers: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        renders: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss-kernel verification.
    Losses {
        #[command(subcommand)]
        action: LossesAction,
    },
    /// Dataset importers.
    Import {
        #[command(subcommand)]
        source: ImportSource,
    },
}

#[derive(Subcommand)]
enum LossesAction {
    /// Run the fixture and gradient suite and print a pass/fail table.
    Check {
        #[arg(long, default_value_t = 120)]
        points: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ImportSource {
    /// Convert COCO-style detection annotations to a ground-truth file.
    Coco {
        #[arg(long)]
        ann: PathBuf,
        /// Directory the image file names are rooted at.
        #[arg(long, default_value = "")]
        images: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error with its process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Config(_) => 1,
            HarnessError::Backend(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        let code = if matches!(e, BackendError::Config { .. }) {
            1
        } else {
            3
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        Self::data(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are success, not usage errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eval { config, out } => cmd_eval(&config, out.as_deref()),
        Command::Infer {
            backend,
            mode,
            gt,
            out,
            transcripts,
            jobs,
            seed,
            max_tokens,
            temperature,
            deadline_secs,
        } => cmd_infer(
            &backend,
            mode.into(),
            &gt,
            &out,
            transcripts.as_deref(),
            jobs,
            seed,
            max_tokens,
            temperature,
            deadline_secs,
        ),
        Command::Metrics {
            gt,
            pred,
            select,
            cap_refs,
            cap_file,
            format,
        } => match cap_file {
            Some(path) => cmd_caption_file(&path),
            None => cmd_metrics(
                gt.as_deref().expect("clap enforces --gt"),
                pred.as_deref().expect("clap enforces --pred"),
                &select,
                cap_refs.as_deref(),
                format,
            ),
        },
        Command::Validate {
            clues,
            lenient,
            width,
            height,
        } => cmd_validate(&clues, lenient, width, height),
        Command::ComposePrompts {
            pinned,
            bases,
            modifiers,
            seed,
            renders,
            out,
        } => cmd_compose(&pinned, &bases, &modifiers, seed, renders, &out),
        Command::Losses {
            action: LossesAction::Check { points, seed },
        } => cmd_losses_check(points, seed),
        Command::Import {
            source: ImportSource::Coco { ann, images, out },
        } => cmd_import_coco(&ann, &images, &out),
    }
}

fn cmd_eval(config_path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let out_dir = out_flag
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| {
            CliError::usage("no output directory: set out_dir in the config or pass --out")
        })?;
    let report = run_eval(&config, &out_dir)?;
    print!("{}", render_report(&report, ReportFormat::Markdown));
    eprintln!("artifacts written to {}", out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    backend_path: &Path,
    mode: InferenceMode,
    gt: &Path,
    out: &Path,
    transcripts: Option<&Path>,
    jobs: usize,
    seed: u64,
    max_tokens: u32,
    temperature: f64,
    deadline_secs: Option<f64>,
) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be >= 1"));
    }
    let scenes = read_scenes(gt)?;
    let spec = load_backend_spec(backend_path)?;
    let deadline = deadline_secs
        .or(match &spec {
            rtvlm_core::harness::BackendSpec::Http { config } => Some(config.timeout_secs),
            rtvlm_core::harness::BackendSpec::Mock { .. } => None,
        })
        .unwrap_or(60.0);
    if !(deadline > 0.0) {
        return Err(CliError::usage("--deadline-secs must be positive"));
    }
    let backend = spec.build("profile", &scenes, seed)?;
    backend.preflight()?;

    let engine = RethinkEngine::new(
        Arc::clone(&backend),
        EngineOptions {
            max_tokens,
            temperature,
            deadline: Duration::from_secs_f64(deadline),
            parallelism: jobs,
        },
    );
    let run = engine.run_dataset(&scenes, mode);
    let predictions = run.prediction_records();
    write_predictions(out, &predictions)?;
    if let Some(path) = transcripts {
        run.write_transcripts(path).map_err(|e| io_error(path, e))?;
    }

    let failures = run.failures();
    for f in &failures {
        eprintln!("scene {} failed: {}", f.image_id, f.error);
    }
    eprintln!(
        "{} predictions written to {} ({} scenes failed)",
        predictions.len(),
        out.display(),
        failures.len()
    );
    if !failures.is_empty() && predictions.is_empty() {
        return Err(CliError {
            code: 3,
            message: "every scene failed".into(),
        });
    }
    Ok(())
}

fn parse_selection(select: &str) -> Result<Vec<MetricSelect>, CliError> {
    let mut out = Vec::new();
    for part in select.split(',') {
        let m: MetricSelect = part.parse().map_err(CliError::usage)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("empty metric selection"));
    }
    Ok(out)
}

fn cmd_metrics(
    gt: &Path,
    pred: &Path,
    select: &str,
    cap_refs: Option<&Path>,
    format: FormatArg,
) -> Result<(), CliError> {
    let selection = parse_selection(select)?;
    let report = metrics_only(gt, pred, &selection, cap_refs)?;
    let format = match format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Csv => ReportFormat::Csv,
    };
    print!("{}", render_report(&report, format));
    Ok(())
}

fn cmd_caption_file(path: &Path) -> Result<(), CliError> {
    let scores = rtvlm_core::harness::caption_file_scores(path)?;
    println!("entries: {}", scores.entries);
    match scores.bleu4 {
        Some(b) => println!("BLEU-4: {b} (x100: {:.2})", b * 100.0),
        None => println!("BLEU-4: undefined (no entries)"),
    }
    match scores.cider {
        Some(c) => println!("CIDEr: {c} (x10: {:.2})", c * 10.0),
        None => println!("CIDEr: undefined (needs >= 2 entries)"),
    }
    Ok(())
}

fn cmd_validate(
    clues: &Path,
    lenient: bool,
    width: Option<f64>,
    height: Option<f64>,
) -> Result<(), CliError> {
    let bounds = match (width, height) {
        (Some(w), Some(h)) => Some((w, h)),
        (None, None) => None,
        _ => {
            return Err(CliError::usage(
                "--width and --height must be given together",
            ))
        }
    };
    let text = std::fs::read_to_string(clues).map_err(|e| io_error(clues, e))?;
    let mut strict_ok = 0usize;
    let mut recovered = 0usize;
    let mut unrecoverable = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let strict = parse_clueset_strict(line);
        let in_bounds = |c: &rtvlm_core::ClueSet| match bounds {
            Some((w, h)) => c.validate(Some((w, h))).is_empty(),
            None => true,
        };
        match strict {
            Ok(c) if in_bounds(&c) => {
                println!("line {lineno}: ok ({} objects)", c.len());
                strict_ok += 1;
            }
            _ => match parse_clueset_lenient(line, bounds) {
                Ok((c, d)) => {
                    let repairs: Vec<String> =
                        d.repairs_applied.iter().map(|r| r.to_string()).collect();
                    println!(
                        "line {lineno}: recovered ({} objects; repairs: {}; dropped {})",
                        c.len(),
                        repairs.join(", "),
                        d.dropped_objects
                    );
                    recovered += 1;
                }
                Err(e) => {
                    println!("line {lineno}: unrecoverable ({e})");
                    unrecoverable += 1;
                }
            },
        }
    }
    let total = strict_ok + recovered + unrecoverable;
    if total == 0 {
        return Err(CliError::data(format!("{}: no records", clues.display())));
    }
    println!(
        "{total} records: {strict_ok} ok, {recovered} recovered, {unrecoverable} unrecoverable"
    );
    let passing = if lenient {
        strict_ok + recovered
    } else {
        strict_ok
    };
    if passing == total {
        Ok(())
    } else {
        Err(CliError::data("validation failed"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn cmd_compose(
    pinned_path: &Path,
    bases_path: &Path,
    modifiers_path: &Path,
    seed: u64,
    renders: u32,
    out: &Path,
) -> Result<(), CliError> {
    let pinned_lines = load_inventory(pinned_path)?;
    let pinned = pinned_lines.join("\n");
    let bases = load_inventory(bases_path)?;
    let modifiers = load_inventory(modifiers_path)?;
    let triplets = compose_triplets(&pinned, &bases, &modifiers, seed)?;
    let plan = render_plan(triplets, renders)?;

    let mut manifest = Vec::new();
    for line in plan.manifest_lines() {
        serde_json::to_writer(&mut manifest, &line).expect("manifest line serializes");
        manifest.push(b'\n');
    }
    std::fs::write(out, manifest).map_err(|e| io_error(out, e))?;

    // Sidecar pins exactly which inventories and seed produced the manifest.
    let meta = serde_json::json!({
        "seed": seed,
        "renders_per_triplet": plan.renders_per_triplet,
        "triplets": plan.triplets.len(),
        "total": plan.total,
        "pinned_sha256": sha256_hex(pinned.as_bytes()),
        "bases_sha256": sha256_hex(bases.join("\n").as_bytes()),
        "modifiers_sha256": sha256_hex(modifiers.join("\n").as_bytes()),
    });
    let meta_path = out.with_extension("meta.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| io_error(&meta_path, e))?;

    eprintln!(
        "{} triplets x {} renders = {} manifest lines -> {}",
        plan.triplets.len(),
        plan.renders_per_triplet,
        plan.total,
        out.display()
    );
    Ok(())
}

fn cmd_import_coco(ann: &Path, images: &str, out: &Path) -> Result<(), CliError> {
    let (scenes, stats) = import_coco_truth(ann, images)?;
    write_scenes(out, &scenes)?;
    eprintln!(
        "{} scenes, {} objects ({} degenerate boxes skipped, {} clamped) -> {}",
        stats.images,
        stats.objects,
        stats.skipped_degenerate,
        stats.clamped,
        out.display()
    );
    Ok(())
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + unit(rng) * (hi - lo)
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = range(rng, 2.0, 45.0);
    let h = range(rng, 2.0, 45.0);
    let x = range(rng, 0.0, 100.0 - w);
    let y = range(rng, 0.0, 100.0 - h);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Box pair away from the kinks of the box-regression surface (aligned
/// centers, equal extents, equal edges, touching boundaries).
fn generic_box_pair(rng: &mut ChaCha8Rng) -> (BoundingBox, BoundingBox) {
    loop {
        let pred = random_box(rng);
        let truth = random_box(rng);
        let margin = 0.5;
        let away = |a: f64, b: f64| (a - b).abs() >= margin;
        let (pcx, pcy) = pred.center();
        let (tcx, tcy) = truth.center();
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

struct CheckRow {
    name: &'static str,
    detail: String,
    tolerance: f64,
    observed: f64,
}

impl CheckRow {
    fn passed(&self) -> bool {
        self.observed <= self.tolerance
    }
}

fn cmd_losses_check(points: usize, seed: u64) -> Result<(), CliError> {
    if points == 0 {
        return Err(CliError::usage("--points must be >= 1"));
    }
    let mut rows: Vec<CheckRow> = Vec::new();

    // Fixture checks: observed is the absolute error against the pinned value.
    let w = DetectionLossWeights::default();
    let fixture = |name: &'static str, detail: String, observed: f64, tolerance: f64| CheckRow {
        name,
        detail,
        tolerance,
        observed,
    };
    let rounds_to = |v: f64, s: &str| if format!("{v:.2}") == s { 0.0 } else { 1.0 };
    rows.push(fixture(
        "detection total 0.28",
        "7.5*0.03 + 1.5*0.02 + 0.5*0.05".into(),
        rounds_to(detection_total_loss(0.03, 0.02, 0.05, &w), "0.28"),
        0.0,
    ));
    rows.push(fixture(
        "detection total 11.01",
        "7.5*1.40 + 1.5*0.27 + 0.5*0.21".into(),
        rounds_to(detection_total_loss(1.40, 0.27, 0.21, &w), "11.01"),
        0.0,
    ));
    rows.push(fixture(
        "detection total 0.46",
        "7.5*0.05 + 1.5*0.04 + 0.5*0.05".into(),
        rounds_to(detection_total_loss(0.05, 0.04, 0.05, &w), "0.46"),
        0.0,
    ));
    rows.push(fixture(
        "language total ~1.00",
        "0.93 + 0.2*(0.14 + 0.19)".into(),
        (vlm_total_from_components(0.93, 0.14, 0.19) - 1.00).abs(),
        0.005,
    ));
    rows.push(fixture(
        "focal at p=0.5",
        "alpha 0.25, gamma 1.5".into(),
        (focal_loss(0.5, &FocalParams::default()).unwrap() - 0.061_266_133_966_784_2).abs(),
        1e-12,
    ));
    rows.push(fixture(
        "dfl midpoint",
        "uniform two bins, target 0.5".into(),
        (dfl_objective(&[0.5, 0.5], 0.5).unwrap() - std::f64::consts::LN_2).abs(),
        1e-12,
    ));
    let ident = BoundingBox::new(3.0, 4.0, 13.0, 20.0);
    rows.push(fixture(
        "box loss at identity",
        "pred == truth".into(),
        siou_loss(&ident, &ident).unwrap().0.abs(),
        0.0,
    ));
    rows.push(fixture(
        "box loss pinned pair",
        "(1,2,11,9) vs (4,6,15,14)".into(),
        (siou_loss(
            &BoundingBox::new(1.0, 2.0, 11.0, 9.0),
            &BoundingBox::new(4.0, 6.0, 15.0, 14.0),
        )
        .unwrap()
        .0 - 1.430_118_483_409_024_1)
            .abs(),
        1e-12,
    ));
    rows.push(fixture(
        "smoothed ce uniform",
        "uniform logits, eps 0 -> ln K".into(),
        (ce_label_smoothing(&[0.3; 7], 2, 0.0).unwrap() - 7f64.ln()).abs(),
        1e-12,
    ));

    // Gradient checks: observed is the worst relative error over the points.
    let step = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst = 0.0f64;
    for _ in 0..points {
        let p = range(&mut rng, 0.02, 0.98);
        let params = FocalParams::new(range(&mut rng, 0.05, 0.95), range(&mut rng, 0.0, 3.0))
            .expect("sampled parameters valid");
        let analytic = [focal_loss_grad(p, &params).expect("valid point")];
        let err = grad_check(
            |x| (x[0] > 1e-9 && x[0] < 1.0).then(|| focal_loss(x[0], &params).unwrap()),
            &analytic,
            &[p],
            step,
        )
        .expect("probes stay in domain");
        worst = worst.max(err);
    }
    rows.push(CheckRow {
        name: "focal gradient",
        detail: format!("{points} points"),
        tolerance: 1e-5,
        observed: worst,
    });

    let mut worst = 0.0f64;
    for _ in 0..points {
        let k = 2 + (rng.next_u64() % 7) as usize;
        let logits: Vec<f64> = (0..k).map(|_| range(&mut rng, -4.0, 4.0)).collect();
        let gold = (rng.next_u64() % k as u64) as usize;
        let eps = [0.0, 0.1, 0.3][(rng.next_u64() % 3) as usize];
        let analytic = ce_label_smoothing_grad(&logits, gold, eps).expect("valid inputs");
        let err = grad_check(
            |x| ce_label_smoothing(x, gold, eps).ok(),
            &analytic,
            &logits,
            step,
        )
        .expect("probes stay in domain");
        worst = worst.max(err);
    }
    rows.push(CheckRow {
        name: "smoothed ce gradient",
        detail: format!("{points} points"),
        tolerance: 1e-5,
        observed: worst,
    });

    let mut worst = 0.0f64;
    for _ in 0..points {
        let p = range(&mut rng, 0.02, 0.98);
        let wy = range(&mut rng, 0.25, 3.0);
        let gamma = range(&mut rng, 0.0, 3.0);
        let analytic = [class_balanced_focal_grad(p, wy, gamma).expect("valid point")];
        let err = grad_check(
            |x| (x[0] > 1e-9 && x[0] < 1.0).then(|| class_balanced_focal(x[0], wy, gamma).unwrap()),
            &analytic,
            &[p],
            step,
        )
        .expect("probes stay in domain");
        worst = worst.max(err);
    }
    rows.push(CheckRow {
        name: "class-balanced focal gradient",
        detail: format!("{points} points"),
        tolerance: 1e-5,
        observed: worst,
    });

    let mut worst = 0.0f64;
    for _ in 0..points {
        let k = 2 + (rng.next_u64() % 8) as usize;
        let raw: Vec<f64> = (0..k).map(|_| range(&mut rng, 0.05, 1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let target = range(&mut rng, 0.05, (k - 1) as f64 - 0.05);
        let bins = DflBins::new(q.clone(), target).expect("sampled bins valid");
        let analytic = dfl_grad(&bins);
        let err = grad_check(
            |x| {
                x.iter()
                    .all(|&v| v > 1e-9)
                    .then(|| dfl_objective(x, target).unwrap())
            },
            &analytic,
            &q,
            step,
        )
        .expect("probes stay in domain");
        worst = worst.max(err);
    }
    rows.push(CheckRow {
        name: "distribution focal gradient",
        detail: format!("{points} points"),
        tolerance: 1e-5,
        observed: worst,
    });

    let mut worst = 0.0f64;
    for _ in 0..points {
        let (pred, truth) = generic_box_pair(&mut rng);
        let analytic = siou_grad_pred(&pred, &truth).expect("valid boxes");
        let point = [pred.x_min, pred.y_min, pred.x_max, pred.y_max];
        let err = grad_check(
            |x| {
                siou_loss(&BoundingBox::new(x[0], x[1], x[2], x[3]), &truth)
                    .ok()
                    .map(|(loss, _)| loss)
            },
            &analytic,
            &point,
            1e-5,
        )
        .expect("probes stay in domain");
        worst = worst.max(err);
    }
    rows.push(CheckRow {
        name: "box-regression gradient",
        detail: format!("{points} points, generic pairs"),
        tolerance: 1e-4,
        observed: worst,
    });

    let name_width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let detail_width = rows.iter().map(|r| r.detail.len()).max().unwrap_or(0);
    println!(
        "{:<name_width$}  {:<detail_width$}  {:>12}  {:>9}  result",
        "check", "detail", "observed", "tolerance"
    );
    let mut failures = 0;
    for row in &rows {
        let status = if row.passed() { "PASS" } else { "FAIL" };
        if !row.passed() {
            failures += 1;
        }
        println!(
            "{:<name_width$}  {:<detail_width$}  {:>12.3e}  {:>9.0e}  {status}",
            row.name, row.detail, row.observed, row.tolerance
        );
    }
    println!("{} checks, {} failed", rows.len(), failures);
    if failures > 0 {
        return Err(CliError::data(format!("{failures} loss checks failed")));
    }
    Ok(())
}
