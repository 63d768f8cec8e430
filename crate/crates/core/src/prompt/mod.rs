//! Role prompts, perception-token serialization and output parsing.

mod parse;
pub mod templates;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::{format_hypothesis, parse_agent_output};
pub use templates::{TemplateError, TemplateSet};

use crate::backend::{ChatMessage, ImageAttachment, MessageRole};
use crate::detection::PerceptionTokenSet;
use crate::labels::LabelSpace;
use crate::setting::AblationSetting;
use crate::transcript::{Transcript, TurnOutcome};

/// Literal OPT block for an image with no surviving boxes.
pub const NO_OBJECTS_LINE: &str = "no detected foreground objects";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    FoodScientist,
    VisionAnalyst,
    DecisionMaker,
    /// Single persona-less agent of ablation settings a to c.
    Generalist,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [Self::FoodScientist, Self::VisionAnalyst, Self::DecisionMaker, Self::Generalist];

    /// Roles speaking in one round, in protocol order.
    pub fn for_setting(setting: AblationSetting) -> &'static [AgentRole] {
        if setting.ira_enabled() {
            &[Self::FoodScientist, Self::VisionAnalyst, Self::DecisionMaker]
        } else {
            &[Self::Generalist]
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FoodScientist => "food_scientist",
            Self::VisionAnalyst => "vision_analyst",
            Self::DecisionMaker => "decision_maker",
            Self::Generalist => "generalist",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::FoodScientist => "Food Scientist",
            Self::VisionAnalyst => "Vision Analyst",
            Self::DecisionMaker => "Decision Maker",
            Self::Generalist => "Assistant",
        }
    }

    fn instructions(self) -> &'static str {
        match self {
            Self::FoodScientist => "You are the Food Scientist, a domain expert in food nutrition and taxonomy. \
                You propose a candidate category and a rationale, drawing on food knowledge and on the cues \
                visible inside the detected foreground regions.",
            Self::VisionAnalyst => "You are the Vision Analyst, a computer-vision specialist. You verify the \
                low-level evidence (texture, shape, color) and the spatial plausibility of the Food Scientist's \
                latest judgment, then agree with it, disagree with it, or refine it.",
            Self::DecisionMaker => "You are the Decision Maker, the final arbiter of the team. You synthesize \
                the Food Scientist's and the Vision Analyst's perspectives with the image itself and issue \
                the final category.",
            Self::Generalist => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Agree,
    Disagree,
    Refine,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Agree => "AGREE",
            Self::Disagree => "DISAGREE",
            Self::Refine => "REFINE",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        match word.to_ascii_uppercase().as_str() {
            "AGREE" => Some(Self::Agree),
            "DISAGREE" => Some(Self::Disagree),
            "REFINE" => Some(Self::Refine),
            _ => None,
        }
    }
}

/// One agent's answer: a class, why, and (vision analyst only) a verdict on
/// the previous judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub label_index: usize,
    pub raw_label_text: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no `Category:` field")]
    MissingCategory,
    #[error("no `Reasoning:` field")]
    MissingReasoning,
    #[error("category {text:?} is not one of the listed classes")]
    UnknownLabel { text: String },
    #[error("category {text:?} matches several classes: {options:?}")]
    AmbiguousLabel { text: String, options: Vec<String> },
    #[error("no valid `Verdict:` field (expected AGREE, DISAGREE or REFINE)")]
    MissingVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("turn order violation for {role:?} in round {round}: {detail}")]
    OrderViolation { role: AgentRole, round: u32, detail: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Everything sent to the backend for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// System message first, then the user turn.
    pub messages: Vec<ChatMessage>,
    pub image: ImageAttachment,
}

impl PromptBundle {
    pub fn system_text(&self) -> &str {
        self.messages.iter().find(|m| m.role == MessageRole::System).map_or("", |m| m.content.as_str())
    }

    /// Hex SHA-256 over a length-prefixed encoding of messages and image.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        for m in &self.messages {
            field(m.role.as_str().as_bytes());
            field(m.content.as_bytes());
        }
        match &self.image {
            ImageAttachment::Inline { media_type, data_base64 } => {
                field(b"inline");
                field(media_type.as_bytes());
                field(data_base64.as_bytes());
            }
            ImageAttachment::Uri { uri } => {
                field(b"uri");
                field(uri.as_bytes());
            }
        }
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in out.iter() {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}

fn class_list(labels: &LabelSpace) -> String {
    let mut s = String::new();
    for name in labels.names() {
        let _ = writeln!(s, "- {name}");
    }
    String::from(s.trim_end())
}

/// Renders the system prompt for a role under a setting.
pub fn build_system_prompt(
    templates: &TemplateSet,
    role: AgentRole,
    labels: &LabelSpace,
    setting: AblationSetting,
) -> Result<String, PromptError> {
    let t = templates.get(role, setting)?;
    Ok(templates::render(
        &t.system,
        &[("role_instructions", role.instructions()), ("class_list", &class_list(labels))],
    ))
}

/// One `object <i>: center=(cx,cy) size=(w,h)` line per box, three decimals.
pub fn build_opt_block(tokens: &PerceptionTokenSet) -> String {
    if tokens.is_empty() {
        return NO_OBJECTS_LINE.into();
    }
    let mut s = String::new();
    for (i, t) in tokens.boxes.iter().enumerate() {
        let b = &t.bbox;
        let _ = writeln!(s, "object {}: center=({:.3},{:.3}) size=({:.3},{:.3})", i + 1, b.cx, b.cy, b.w, b.h);
    }
    String::from(s.trim_end())
}

fn history_block(transcript: &Transcript, labels: &LabelSpace) -> String {
    if transcript.turns.is_empty() {
        return String::new();
    }
    let mut s = String::from("Dialogue so far:\n");
    for turn in &transcript.turns {
        let line = match &turn.outcome {
            TurnOutcome::Parsed { hypothesis } => format_hypothesis(hypothesis, labels),
            TurnOutcome::Failed { .. } => String::from("(no valid answer)"),
        };
        let _ = writeln!(s, "[round {}] {}: {}", turn.round, turn.role.display_name(), line);
    }
    String::from(s.trim_end())
}

/// The (round, role) sequence that must precede `role` in `round`.
fn expected_prefix(setting: AblationSetting, role: AgentRole, round: u32) -> Option<Vec<(u32, AgentRole)>> {
    let order = AgentRole::for_setting(setting);
    let pos = order.iter().position(|&r| r == role)?;
    let mut prefix = Vec::new();
    for r in 1..round {
        prefix.extend(order.iter().map(|&o| (r, o)));
    }
    prefix.extend(order[..pos].iter().map(|&o| (round, o)));
    Some(prefix)
}

/// Assembles the prompt bundle for one turn.
///
/// The transcript must hold exactly the turns that precede this one in the
/// fixed protocol order. Prior turns are replayed as canonical contract
/// lines, never as raw model output.
#[allow(clippy::too_many_arguments)]
pub fn build_turn_prompt(
    templates: &TemplateSet,
    role: AgentRole,
    round: u32,
    transcript: &Transcript,
    tokens: &PerceptionTokenSet,
    labels: &LabelSpace,
    image: &ImageAttachment,
    setting: AblationSetting,
) -> Result<PromptBundle, PromptError> {
    let violation = |detail: String| PromptError::OrderViolation { role, round, detail };
    if round == 0 {
        return Err(violation("rounds are 1-based".into()));
    }
    if transcript.setting != setting {
        return Err(violation(format!("transcript belongs to setting {}", transcript.setting)));
    }
    let prefix = expected_prefix(setting, role, round)
        .ok_or_else(|| violation(format!("role does not take part in setting {setting}")))?;
    let actual: Vec<(u32, AgentRole)> = transcript.turns.iter().map(|t| (t.round, t.role)).collect();
    if actual != prefix {
        let detail = match prefix.iter().zip(&actual).position(|(a, b)| a != b) {
            Some(i) => format!("expected {:?} at turn {}, found {:?}", prefix[i], i + 1, actual[i]),
            None if actual.len() < prefix.len() => format!("missing prior turn {:?}", prefix[actual.len()]),
            None => format!("transcript already has {} turns, expected {}", actual.len(), prefix.len()),
        };
        return Err(violation(detail));
    }

    let system = build_system_prompt(templates, role, labels, setting)?;
    let opt = if setting.opt_enabled() { build_opt_block(tokens) } else { String::new() };
    let history = history_block(transcript, labels);
    let t = templates.get(role, setting)?;
    let user = templates::render(&t.user, &[("opt_block", &opt), ("history", &history)]);

    Ok(PromptBundle {
        messages: alloc::vec![ChatMessage::new(MessageRole::System, system), ChatMessage::new(MessageRole::User, user)],
        image: image.clone(),
    })
}
