//! Batch evaluation over a manifest and the report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use optdialog_core::orchestrator::DialogueInput;
use optdialog_core::{
    confusion_counts, macro_metrics, normalize_box, run_dialogue, ChatBackend, DatasetManifest, DialogueError,
    LabelSpace, ManifestEntry, MetricsError, MetricsReport, PerceptionTokenSet, Prediction, RunConfig, ScoredBox,
    TemplateSet, Transcript,
};
use serde::Serialize;
use thiserror::Error;

use crate::detections::DetectionsMap;
use crate::image_input::ImageLoader;
use crate::pool::map_ordered;

pub const DEFAULT_DETECTOR_ID: &str = "external";

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Config(#[from] optdialog_core::orchestrator::InvalidRunConfig),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvaluationError + '_ {
    move |source| EvaluationError::Io { path: path.display().to_string(), source }
}

/// Everything an evaluation reads besides the backend.
pub struct EvalInputs<'a> {
    pub manifest: &'a DatasetManifest,
    pub detections: &'a DetectionsMap,
    pub templates: &'a TemplateSet,
    pub loader: ImageLoader,
    pub detector_id: &'a str,
}

/// Result for one image. `transcript` is partial when the backend failed
/// and absent when the image could not be loaded.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub prediction: Prediction,
    pub transcript: Option<Transcript>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvaluationResult {
    /// In manifest order.
    pub outcomes: Vec<ImageOutcome>,
    pub report: MetricsReport,
}

impl EvaluationResult {
    pub fn predictions(&self) -> Vec<Prediction> {
        self.outcomes.iter().map(|o| o.prediction.clone()).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.outcomes.iter().filter_map(|o| o.failure.as_deref().map(|f| (o.prediction.image_id.as_str(), f)))
    }
}

/// Normalizes and suppresses an image's raw detections. Boxes that do not
/// survive normalization are dropped with a warning.
pub fn perception_tokens(
    image_id: &str,
    detector_id: &str,
    detections: &DetectionsMap,
    width: u32,
    height: u32,
    nms: &optdialog_core::NmsConfig,
) -> PerceptionTokenSet {
    let scored: Vec<ScoredBox> = detections
        .get(image_id)
        .iter()
        .filter_map(|raw| match normalize_box(raw, width, height) {
            Ok(bbox) => Some(ScoredBox { bbox, score: raw.score, class_hint: raw.class_hint.clone() }),
            Err(e) => {
                log::warn!("{image_id}: dropping detection {:?}: {e}", raw.coords);
                None
            }
        })
        .collect();
    PerceptionTokenSet::from_detections(image_id, detector_id, &scored, nms)
}

/// Runs one image end to end. Never fails: problems become an abstention
/// with a failure note.
pub fn evaluate_image(
    entry: &ManifestEntry,
    inputs: &EvalInputs<'_>,
    cfg: &RunConfig,
    backend: &dyn ChatBackend,
) -> ImageOutcome {
    let id = entry.image_id.as_str();
    let failed = |transcript, reason: String| {
        log::warn!("{id}: {reason}");
        ImageOutcome { prediction: Prediction::abstain(id), transcript, failure: Some(reason) }
    };
    let image = match inputs.loader.load(Path::new(&entry.image_path)) {
        Ok(i) => i,
        Err(e) => return failed(None, e.to_string()),
    };
    if !inputs.detections.contains(id) {
        log::debug!("{id}: no detections on record");
    }
    let tokens = perception_tokens(id, inputs.detector_id, inputs.detections, image.width, image.height, &cfg.nms);
    let input = DialogueInput { image_id: id, image: &image.attachment, tokens: &tokens, labels: inputs.manifest.labels() };
    match run_dialogue(input, cfg, inputs.templates, backend) {
        Ok((prediction, transcript)) => ImageOutcome { prediction, transcript: Some(transcript), failure: None },
        Err(DialogueError::BackendUnavailable { error, partial, .. }) => failed(Some(*partial), error.to_string()),
        Err(e) => failed(None, e.to_string()),
    }
}

/// Runs the dialogue over every manifest entry and scores the predictions.
pub fn run_evaluation(
    inputs: &EvalInputs<'_>,
    cfg: &RunConfig,
    backend: &dyn ChatBackend,
) -> Result<EvaluationResult, EvaluationError> {
    cfg.validate()?;
    let entries = inputs.manifest.entries();
    let started = Instant::now();
    let step = (entries.len() / 10).max(1);
    let done = std::sync::atomic::AtomicUsize::new(0);
    let outcomes = map_ordered(entries, cfg.parallelism, |_, entry| {
        let out = evaluate_image(entry, inputs, cfg, backend);
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if n.is_multiple_of(step) || n == entries.len() {
            log::info!("setting {}: {n}/{} images", cfg.setting, entries.len());
        }
        out
    });
    let predictions: Vec<Prediction> = outcomes.iter().map(|o| o.prediction.clone()).collect();
    let report = macro_metrics(&confusion_counts(&predictions, inputs.manifest)?, Some(cfg.setting))?;
    let failures = outcomes.iter().filter(|o| o.failure.is_some()).count();
    log::info!(
        "setting {}: {} images in {:.1?}, {} failed, {} abstained, acc_standard {:.4}",
        cfg.setting,
        entries.len(),
        started.elapsed(),
        failures,
        report.abstentions,
        report.acc_standard
    );
    Ok(EvaluationResult { outcomes, report })
}

/// Relative path of an image's transcript inside a run directory.
pub fn transcript_rel_path(image_id: &str) -> PathBuf {
    Path::new("transcripts").join(format!("{image_id}.transcript.json"))
}

pub fn transcript_json(t: &Transcript) -> String {
    let mut s = serde_json::to_string_pretty(t).expect("transcripts serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    image_id: &'a str,
    label: Option<&'a str>,
    source: &'a str,
    transcript_path: Option<String>,
}

/// Writes transcripts, `predictions.jsonl` and the reports into `out`.
pub fn write_run_outputs(result: &EvaluationResult, labels: &LabelSpace, out: &Path) -> Result<(), EvaluationError> {
    let tdir = out.join("transcripts");
    fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
    let mut lines = String::new();
    for o in &result.outcomes {
        let p = &o.prediction;
        let rel = o.transcript.as_ref().map(|t| {
            let rel = transcript_rel_path(&p.image_id);
            (rel.clone(), transcript_json(t))
        });
        if let Some((rel, json)) = &rel {
            let path = out.join(rel);
            fs::write(&path, json).map_err(io_err(&path))?;
        }
        let line = PredictionLine {
            image_id: &p.image_id,
            label: p.label_index.and_then(|i| labels.name(i)),
            source: p.source.as_str(),
            transcript_path: rel.map(|(r, _)| r.to_string_lossy().replace('\\', "/")),
        };
        lines.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        lines.push('\n');
    }
    let path = out.join("predictions.jsonl");
    fs::write(&path, lines).map_err(io_err(&path))?;
    let failures: Vec<(&str, &str)> = result.failures().collect();
    emit_reports(&result.report, &failures, out)
}

pub fn per_class_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "support", "precision", "recall", "f1", "zero_support"]).unwrap();
    for c in &report.per_class {
        w.write_record([
            c.class.clone(),
            c.support.to_string(),
            format!("{:.6}", c.precision),
            format!("{:.6}", c.recall),
            format!("{:.6}", c.f1),
            c.zero_support.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn pr_scatter_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "precision", "recall", "support", "f1"]).unwrap();
    for c in &report.per_class {
        w.write_record([
            c.class.clone(),
            format!("{:.6}", c.precision),
            format!("{:.6}", c.recall),
            c.support.to_string(),
            format!("{:.6}", c.f1),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[derive(Serialize)]
struct Failure<'a> {
    image_id: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct Summary<'a> {
    setting: Option<&'a str>,
    total: u64,
    abstentions: u64,
    failed: usize,
    acc_paper: f64,
    acc_standard: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
    zero_support_classes: Vec<&'a str>,
    failures: Vec<Failure<'a>>,
}

pub fn summary_json(report: &MetricsReport, failures: &[(&str, &str)]) -> String {
    let summary = Summary {
        setting: report.setting.map(|s| s.as_str()),
        total: report.total,
        abstentions: report.abstentions,
        failed: failures.len(),
        acc_paper: report.acc_paper,
        acc_standard: report.acc_standard,
        macro_precision: report.macro_precision,
        macro_recall: report.macro_recall,
        macro_f1: report.macro_f1,
        zero_support_classes: report.zero_support_classes().collect(),
        failures: failures.iter().map(|&(image_id, reason)| Failure { image_id, reason }).collect(),
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `per_class.csv`, `pr_scatter.csv` and `summary.json`.
pub fn emit_reports(report: &MetricsReport, failures: &[(&str, &str)], out: &Path) -> Result<(), EvaluationError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    for (name, body) in [
        ("per_class.csv", per_class_csv(report)),
        ("pr_scatter.csv", pr_scatter_csv(report)),
        ("summary.json", summary_json(report, failures)),
    ] {
        let path = out.join(name);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(body.as_bytes()).map_err(io_err(&path))?;
    }
    Ok(())
}
