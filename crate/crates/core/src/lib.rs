//! Core of the optdialog pipeline.
//!
//! Detector outputs are reduced to normalized foreground boxes, serialized
//! into role prompts, and fed to a fixed-order multi-agent dialogue over an
//! abstract chat backend. Predictions are scored with per-class and
//! macro-averaged metrics.
//!
//! This crate is `no_std` and only needs `alloc`. File formats, the HTTP
//! client, the worker pool and the CLI live in the `optdialog` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod dataset;
pub mod detection;
pub mod labels;
pub mod metrics;
pub mod orchestrator;
pub mod prompt;
pub mod setting;
pub mod transcript;

pub use backend::{
    BackendError, ChatBackend, ChatMessage, ChatReply, ChatRequest, Decoding, ImageAttachment,
    MessageRole, MockBackend, MockKey, MockScript, RequestContext,
};
pub use dataset::{DatasetError, DatasetManifest, ManifestEntry};
pub use detection::{
    iou, nms, normalize_box, BoundingBox, BoxFormat, DetectionError, NmsConfig,
    PerceptionTokenSet, RawDetection, ScoredBox,
};
pub use labels::{match_label, LabelError, LabelSpace};
pub use metrics::{confusion_counts, macro_metrics, ClassMetrics, ConfusionCounts, MetricsError, MetricsReport};
pub use orchestrator::{
    apply_retry, resolve_fallback, run_dialogue, DialogueError, RetryDecision, RunConfig,
};
pub use prompt::{
    build_opt_block, build_system_prompt, build_turn_prompt, format_hypothesis,
    parse_agent_output, AgentRole, Hypothesis, ParseError, PromptBundle, PromptError,
    TemplateSet, Verdict,
};
pub use setting::AblationSetting;
pub use transcript::{DialogueTurn, Prediction, PredictionSource, RejectedAttempt, Transcript, TurnOutcome};
