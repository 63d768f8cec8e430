#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use optdialog::detections::{load_detections, DetectionsMap};
use optdialog::evaluation::{run_evaluation, EvalInputs, EvaluationResult};
use optdialog::image_input::ImageLoader;
use optdialog::manifest::load_manifest;
use optdialog::mock_script::load_mock_script;
use optdialog_core::{
    AblationSetting, BackendError, ChatBackend, ChatReply, ChatRequest, DatasetManifest, MockBackend, MockScript,
    RunConfig, TemplateSet,
};

pub const CLASSES: [&str; 5] = ["apple", "banana", "grape", "orange", "strawberry"];

/// Post-suppression box count per corpus image, worked out from the
/// detections fixture by hand.
pub const EXPECTED_BOXES: [(&str, usize); 10] = [
    ("img01", 1),
    ("img02", 2),
    ("img03", 1),
    ("img04", 2),
    ("img05", 0),
    ("img06", 1),
    ("img07", 3),
    ("img08", 0),
    ("img09", 1),
    ("img10", 2),
];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

pub struct Corpus {
    pub manifest: DatasetManifest,
    pub detections: DetectionsMap,
    pub templates: TemplateSet,
}

impl Corpus {
    pub fn load() -> Self {
        let dir = corpus_dir();
        Self {
            manifest: load_manifest(&dir.join("manifest.csv"), None).unwrap(),
            detections: load_detections(&dir.join("detections.jsonl")).unwrap(),
            templates: TemplateSet::builtin(),
        }
    }

    pub fn inputs(&self) -> EvalInputs<'_> {
        EvalInputs {
            manifest: &self.manifest,
            detections: &self.detections,
            templates: &self.templates,
            loader: ImageLoader::default(),
            detector_id: "fixture",
        }
    }

    pub fn evaluate(&self, cfg: &RunConfig, backend: &dyn ChatBackend) -> EvaluationResult {
        run_evaluation(&self.inputs(), cfg, backend).unwrap()
    }
}

pub fn script(name: &str) -> MockScript {
    load_mock_script(&corpus_dir().join(name)).unwrap()
}

pub fn mock(name: &str) -> MockBackend {
    MockBackend::new(name, script(name))
}

pub fn config(setting: AblationSetting, rounds: u32, parallelism: usize) -> RunConfig {
    RunConfig { rounds, parallelism, ..RunConfig::new(setting) }
}

/// Wraps a backend and keeps every request it sees.
pub struct Recording<B> {
    pub inner: B,
    pub requests: Mutex<Vec<ChatRequest>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, requests: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<ChatRequest> {
        std::mem::take(&mut *self.requests.lock().unwrap())
    }
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.chat(request)
    }
}
