//! Dialogue records: turns, transcripts and final predictions.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::prompt::{AgentRole, Hypothesis, ParseError};
use crate::setting::AblationSetting;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TurnOutcome {
    Parsed { hypothesis: Hypothesis },
    Failed { error: ParseError },
}

/// A response that failed to parse and triggered a retry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedAttempt {
    pub response: String,
    pub error: ParseError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub round: u32,
    pub role: AgentRole,
    /// SHA-256 of the turn's prompt bundle, before any retry messages.
    pub prompt_digest: String,
    /// Response of the last attempt.
    pub raw_response: String,
    pub outcome: TurnOutcome,
    pub retries_used: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<RejectedAttempt>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub truncated: bool,
}

impl DialogueTurn {
    pub fn hypothesis(&self) -> Option<&Hypothesis> {
        match &self.outcome {
            TurnOutcome::Parsed { hypothesis } => Some(hypothesis),
            TurnOutcome::Failed { .. } => None,
        }
    }
}

/// Ordered record of every turn for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub image_id: String,
    pub setting: AblationSetting,
    pub turns: Vec<DialogueTurn>,
    pub final_round: u32,
}

impl Transcript {
    pub fn new(image_id: impl Into<String>, setting: AblationSetting) -> Self {
        Self { image_id: image_id.into(), setting, turns: Vec::new(), final_round: 0 }
    }

    pub fn roles(&self) -> impl Iterator<Item = AgentRole> + '_ {
        self.turns.iter().map(|t| t.role)
    }

    /// Most recent turn of `role` that parsed cleanly.
    pub fn last_clean(&self, role: AgentRole) -> Option<&Hypothesis> {
        self.turns.iter().rev().filter(|t| t.role == role).find_map(DialogueTurn::hypothesis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// Final decision-maker turn parsed cleanly (setting d).
    Decider,
    /// Final generalist turn parsed cleanly (settings a to c).
    Generalist,
    FallbackVision,
    FallbackFood,
    FallbackGeneralist,
    Abstain,
}

impl PredictionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Decider => "decider",
            Self::Generalist => "generalist",
            Self::FallbackVision => "fallback_vision",
            Self::FallbackFood => "fallback_food",
            Self::FallbackGeneralist => "fallback_generalist",
            Self::Abstain => "abstain",
        }
    }
}

/// Final label for one image. The transcript is keyed by the same image id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub label_index: Option<usize>,
    pub source: PredictionSource,
}

impl Prediction {
    pub fn abstain(image_id: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), label_index: None, source: PredictionSource::Abstain }
    }
}
