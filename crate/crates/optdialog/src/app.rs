//! Command implementations behind the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use optdialog_core::orchestrator::DialogueInput;
use optdialog_core::{
    resolve_fallback, run_dialogue, AblationSetting, ChatBackend, DatasetManifest, DialogueError, LabelSpace,
    MetricsReport, MockBackend, TemplateSet, Transcript, TurnOutcome,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{BackendSpec, ConfigError, ConfigFile, ResolvedConfig};
use crate::detections::{load_detections, DetectionsMap};
use crate::evaluation::{perception_tokens, run_evaluation, transcript_json, write_run_outputs, EvalInputs, EvaluationResult};
use crate::http::{HttpBackend, HttpOptions};
use crate::image_input::ImageLoader;
use crate::manifest::load_manifest;
use crate::mock_script::load_mock_script;
use crate::template_dir::load_template_dir;

#[derive(Debug, Error)]
pub enum AppError {
    /// Bad configuration or input files. Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Failure while running. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

fn config_err(e: impl std::fmt::Display) -> AppError {
    AppError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(e.to_string())
}

pub fn build_backend(cfg: &ResolvedConfig) -> Result<Box<dyn ChatBackend>, AppError> {
    match cfg.backend_spec()? {
        None => Err(AppError::Config("no backend given (use --backend <url|mock:path>)".into())),
        Some(BackendSpec::Mock(path)) => {
            let script = load_mock_script(&path).map_err(config_err)?;
            Ok(Box::new(MockBackend::new(format!("mock:{}", path.display()), script)))
        }
        Some(BackendSpec::Http(url)) => {
            let options = HttpOptions { timeout: Duration::from_secs(cfg.timeout_secs), ..HttpOptions::from_env() };
            Ok(Box::new(HttpBackend::new(url, cfg.model.clone(), options).map_err(config_err)?))
        }
    }
}

pub fn load_templates(cfg: &ResolvedConfig) -> Result<TemplateSet, AppError> {
    match &cfg.template_dir {
        Some(dir) => load_template_dir(dir).map_err(config_err),
        None => Ok(TemplateSet::builtin()),
    }
}

fn load_detections_opt(cfg: &ResolvedConfig) -> Result<DetectionsMap, AppError> {
    match &cfg.detections {
        Some(p) => load_detections(p).map_err(config_err),
        None => {
            if cfg.setting.opt_enabled() {
                log::warn!("no detections file; every image gets an empty object list");
            }
            Ok(DetectionsMap::default())
        }
    }
}

fn load_manifest_req(cfg: &ResolvedConfig) -> Result<DatasetManifest, AppError> {
    let path = cfg.manifest.as_deref().ok_or_else(|| AppError::Config("no manifest given (use --manifest)".into()))?;
    load_manifest(path, cfg.label_space()?).map_err(config_err)
}

/// Default run directory `runs/<timestamp>-<tag>`.
pub fn default_out_dir(tag: &str) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{tag}", chrono::Local::now().format("%Y%m%d-%H%M%S")))
}

fn prepare_out(out: &Path, cfg: &ResolvedConfig) -> Result<(), AppError> {
    fs::create_dir_all(out).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
    cfg.write(out).map_err(runtime_err)?;
    Ok(())
}

/// Batch evaluation of the manifest into `out`.
pub fn evaluate(cfg: &ResolvedConfig, out: &Path) -> Result<EvaluationResult, AppError> {
    let manifest = load_manifest_req(cfg)?;
    let detections = load_detections_opt(cfg)?;
    let templates = load_templates(cfg)?;
    let backend = build_backend(cfg)?;
    cfg.run_config().validate().map_err(config_err)?;
    prepare_out(out, cfg)?;
    let inputs = EvalInputs {
        manifest: &manifest,
        detections: &detections,
        templates: &templates,
        loader: ImageLoader { resize_longest: cfg.resize() },
        detector_id: &cfg.detector_id,
    };
    let result = run_evaluation(&inputs, &cfg.run_config(), backend.as_ref()).map_err(runtime_err)?;
    write_run_outputs(&result, manifest.labels(), out).map_err(runtime_err)?;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub report: Option<MetricsReport>,
    pub failed_images: usize,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn status(&self) -> &'static str {
        match (&self.error, self.failed_images) {
            (Some(_), _) => "failed",
            (None, 0) => "ok",
            (None, _) => "partial",
        }
    }
}

/// Runs settings a to d in order into `<out>/setting-<x>/` and writes
/// `<out>/ablation.csv`. A setting that fails is recorded and the sweep
/// goes on. `rounds` applies to the multi-turn settings only.
pub fn ablate(base: &ResolvedConfig, rounds: Option<u32>, out: &Path) -> Result<Vec<AblationRow>, AppError> {
    fs::create_dir_all(out).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
    let mut rows = Vec::new();
    for setting in AblationSetting::ALL {
        let mut cfg = base.with_setting(setting, false);
        if let (Some(r), true) = (rounds, setting.multi_turn()) {
            cfg.rounds = r;
        }
        let dir = out.join(format!("setting-{setting}"));
        let row = match evaluate(&cfg, &dir) {
            Ok(result) => AblationRow {
                setting,
                failed_images: result.failures().count(),
                report: Some(result.report),
                error: None,
            },
            Err(e) => {
                log::error!("setting {setting} failed: {e}");
                AblationRow { setting, report: None, failed_images: 0, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    let path = out.join("ablation.csv");
    fs::write(&path, ablation_csv(&rows)).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "acc_standard", "acc_paper", "macro_recall", "macro_f1", "status"]).unwrap();
    for row in rows {
        let f = |g: fn(&MetricsReport) -> f64| row.report.as_ref().map_or(String::new(), |r| format!("{:.6}", g(r)));
        w.write_record([
            row.setting.as_str().to_string(),
            f(|r| r.acc_standard),
            f(|r| r.acc_paper),
            f(|r| r.macro_recall),
            f(|r| r.macro_f1),
            row.status().to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[derive(Serialize)]
struct SinglePrediction<'a> {
    image_id: &'a str,
    label: Option<&'a str>,
    source: &'a str,
    transcript_path: &'a str,
}

/// One image through the dialogue. Labels come from the config or, failing
/// that, from the manifest. Returns the printed summary line.
pub fn run_single(cfg: &ResolvedConfig, image: &Path, image_id: Option<&str>, out: &Path) -> Result<String, AppError> {
    let labels = match cfg.label_space()? {
        Some(l) => l,
        None => load_manifest_req(cfg)
            .map_err(|e| AppError::Config(format!("labels needed: set `labels` in the config or give --manifest ({e})")))?
            .labels()
            .clone(),
    };
    let id = match image_id {
        Some(id) => id.to_string(),
        None => image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string(),
    };
    let detections = load_detections_opt(cfg)?;
    let templates = load_templates(cfg)?;
    let backend = build_backend(cfg)?;
    let run = cfg.run_config();
    run.validate().map_err(config_err)?;
    let loaded = ImageLoader { resize_longest: cfg.resize() }.load(image).map_err(config_err)?;
    let tokens = perception_tokens(&id, &cfg.detector_id, &detections, loaded.width, loaded.height, &run.nms);
    prepare_out(out, cfg)?;
    let input = DialogueInput { image_id: &id, image: &loaded.attachment, tokens: &tokens, labels: &labels };
    let (prediction, transcript, failure) = match run_dialogue(input, &run, &templates, backend.as_ref()) {
        Ok((p, t)) => (p, t, None),
        Err(DialogueError::BackendUnavailable { error, partial, .. }) => {
            (optdialog_core::Prediction::abstain(id.clone()), *partial, Some(error.to_string()))
        }
        Err(e) => return Err(runtime_err(e)),
    };
    let rel = crate::evaluation::transcript_rel_path(&id);
    let tpath = out.join(&rel);
    fs::create_dir_all(tpath.parent().unwrap()).map_err(runtime_err)?;
    fs::write(&tpath, transcript_json(&transcript)).map_err(runtime_err)?;
    let label = prediction.label_index.and_then(|i| labels.name(i));
    let rel_s = rel.to_string_lossy().replace('\\', "/");
    let line = SinglePrediction { image_id: &id, label, source: prediction.source.as_str(), transcript_path: &rel_s };
    let mut json = serde_json::to_string_pretty(&line).unwrap();
    json.push('\n');
    fs::write(out.join("prediction.json"), json).map_err(runtime_err)?;
    if let Some(f) = failure {
        return Err(AppError::Runtime(format!("{id}: {f} (partial transcript in {})", tpath.display())));
    }
    Ok(format!("{id}: {} ({})", label.unwrap_or("<abstain>"), prediction.source.as_str()))
}

/// Human-readable rendering of a transcript file.
pub fn inspect(path: &Path) -> Result<String, AppError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let t: Transcript = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Ok(render_transcript(&t))
}

pub fn render_transcript(t: &Transcript) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image {}  setting {}  rounds {}", t.image_id, t.setting, t.final_round);
    for turn in &t.turns {
        let _ = writeln!(s, "\n[round {}] {}  digest {}", turn.round, turn.role.display_name(), &turn.prompt_digest[..12.min(turn.prompt_digest.len())]);
        for r in &turn.rejected {
            let _ = writeln!(s, "  rejected ({}): {}", r.error, one_line(&r.response));
        }
        match &turn.outcome {
            TurnOutcome::Parsed { hypothesis: h } => {
                if let Some(v) = h.verdict {
                    let _ = writeln!(s, "  verdict:   {}", v.as_str());
                }
                let _ = writeln!(s, "  category:  {} (class #{})", h.raw_label_text, h.label_index);
                let _ = writeln!(s, "  reasoning: {}", h.rationale);
            }
            TurnOutcome::Failed { error } => {
                let _ = writeln!(s, "  failed: {error}");
                let _ = writeln!(s, "  response: {}", one_line(&turn.raw_response));
            }
        }
        if turn.retries_used > 0 {
            let _ = writeln!(s, "  retries: {}", turn.retries_used);
        }
        if turn.truncated {
            let _ = writeln!(s, "  (reply hit the token limit)");
        }
    }
    let p = resolve_fallback(t);
    let label = p.label_index.map_or("<abstain>".to_string(), |i| format!("class #{i}"));
    let _ = writeln!(s, "\nprediction: {label} ({})", p.source.as_str());
    s
}

fn one_line(text: &str) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > 120 {
        format!("{}...", flat.chars().take(117).collect::<String>())
    } else {
        flat
    }
}

/// Files to lint. Every field is optional.
#[derive(Debug, Clone, Default)]
pub struct ValidateTargets {
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

/// Checks every given file. Returns one report line per file and whether
/// all of them passed.
pub fn validate(targets: &ValidateTargets) -> (Vec<String>, bool) {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut report = |kind: &str, path: &Path, result: Result<String, String>| match result {
        Ok(note) => lines.push(format!("ok    {kind} {}{note}", path.display())),
        Err(e) => {
            ok = false;
            lines.push(format!("FAIL  {kind} {}: {e}", path.display()));
        }
    };
    let mut labels: Option<LabelSpace> = None;
    if let Some(p) = &targets.config {
        let r = ConfigFile::load(p)
            .and_then(|f| crate::config::resolve(f, Default::default()))
            .map_err(|e| e.to_string())
            .and_then(|c| {
                labels = c.label_space().map_err(|e| e.to_string())?;
                Ok(String::new())
            });
        report("config", p, r);
    }
    let mut manifest_ids: Option<Vec<String>> = None;
    if let Some(p) = &targets.manifest {
        let r = load_manifest(p, labels.clone()).map_err(|e| e.to_string()).map(|m| {
            let missing = m.entries().iter().filter(|e| !Path::new(&e.image_path).is_file()).count();
            manifest_ids = Some(m.entries().iter().map(|e| e.image_id.clone()).collect());
            let mut note = format!(" ({} images, {} classes)", m.len(), m.labels().len());
            if missing > 0 {
                note.push_str(&format!("; warning: {missing} image file(s) not found"));
            }
            note
        });
        report("manifest", p, r);
    }
    if let Some(p) = &targets.detections {
        let r = load_detections(p).map_err(|e| e.to_string()).map(|d| {
            let mut note = format!(" ({} images)", d.len());
            if let Some(ids) = &manifest_ids {
                let stray = d.image_ids().filter(|id| !ids.iter().any(|m| m == id)).count();
                if stray > 0 {
                    note.push_str(&format!("; warning: {stray} image id(s) not in the manifest"));
                }
            }
            note
        });
        report("detections", p, r);
    }
    if let Some(p) = &targets.script {
        let r = load_mock_script(p).map_err(|e| e.to_string()).map(|s| format!(" ({} entries)", s.len()));
        report("mock-script", p, r);
    }
    if let Some(p) = &targets.templates {
        let r = load_template_dir(p).map_err(|e| e.to_string()).map(|t| format!(" (version {})", t.version()));
        report("templates", p, r);
    }
    (lines, ok)
}
