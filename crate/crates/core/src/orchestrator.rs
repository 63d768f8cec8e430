//! The per-image dialogue protocol.
//!
//! Setting d runs Food Scientist, Vision Analyst and Decision Maker in that
//! order for each of T rounds, every agent seeing the full history so far.
//! Settings a to c run one Generalist turn per round; under c each round
//! sees the agent's own earlier answers.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, Decoding, ImageAttachment, MessageRole, RequestContext};
use crate::detection::{NmsConfig, PerceptionTokenSet};
use crate::labels::LabelSpace;
use crate::prompt::templates::{CATEGORY_CONTRACT, VERDICT_CONTRACT};
use crate::prompt::{build_turn_prompt, parse_agent_output, AgentRole, ParseError, PromptError, TemplateSet};
use crate::setting::AblationSetting;
use crate::transcript::{DialogueTurn, Prediction, PredictionSource, RejectedAttempt, Transcript, TurnOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub setting: AblationSetting,
    pub rounds: u32,
    pub decoding: Decoding,
    pub nms: NmsConfig,
    pub retry_limit: u32,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid run config field `{field}`: {reason}")]
pub struct InvalidRunConfig {
    pub field: &'static str,
    pub reason: String,
}

impl RunConfig {
    pub fn new(setting: AblationSetting) -> Self {
        Self {
            setting,
            rounds: setting.default_rounds(),
            decoding: Decoding::default(),
            nms: NmsConfig::default(),
            retry_limit: 2,
            parallelism: 1,
        }
    }

    /// Every problem found, one entry per field.
    pub fn problems(&self) -> Vec<InvalidRunConfig> {
        let mut out = Vec::new();
        let mut bad = |field, reason: &str| out.push(InvalidRunConfig { field, reason: reason.into() });
        if self.rounds == 0 {
            bad("rounds", "must be at least 1");
        } else if self.rounds > 1 && !self.setting.multi_turn() {
            bad("rounds", "settings a and b are single-turn; rounds must be 1");
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            bad("decoding.temperature", "must be finite and non-negative");
        }
        if self.decoding.max_new_tokens == 0 {
            bad("decoding.max_new_tokens", "must be at least 1");
        }
        if let Err(e) = self.nms.validate() {
            bad("nms", &format!("{e}"));
        }
        if self.parallelism == 0 {
            bad("parallelism", "must be at least 1");
        }
        out
    }

    pub fn validate(&self) -> Result<(), InvalidRunConfig> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new(AblationSetting::D)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("image {image_id}: {error}")]
    BackendUnavailable { image_id: String, error: BackendError, partial: Box<Transcript> },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    InvalidConfig(#[from] InvalidRunConfig),
}

/// What to do after a response failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryDecision {
    /// Re-send with these messages.
    Retry(Vec<ChatMessage>),
    GiveUp,
}

/// Appends the rejected reply and a format reminder, or gives up once
/// `retry_limit` retries have been spent.
pub fn apply_retry(
    role: AgentRole,
    messages: &[ChatMessage],
    rejected_response: &str,
    error: &ParseError,
    retries_used: u32,
    retry_limit: u32,
) -> RetryDecision {
    if retries_used >= retry_limit {
        return RetryDecision::GiveUp;
    }
    let contract = if role == AgentRole::VisionAnalyst {
        format!("{VERDICT_CONTRACT}\n{CATEGORY_CONTRACT}")
    } else {
        String::from(CATEGORY_CONTRACT)
    };
    let reminder = format!(
        "Your previous reply could not be used ({error}). Reply again using exactly this format:\n{contract}\n\
         The category must be one of the listed classes, written exactly as listed."
    );
    let mut next = messages.to_vec();
    next.push(ChatMessage::new(MessageRole::Assistant, rejected_response));
    next.push(ChatMessage::new(MessageRole::User, reminder));
    RetryDecision::Retry(next)
}

/// Derives the final prediction from a finished transcript.
///
/// Setting d: the last round's Decision Maker if it parsed, else the latest
/// clean Vision Analyst, else the latest clean Food Scientist, else abstain.
/// Settings a to c: the last round's Generalist if it parsed, else the latest
/// clean earlier Generalist, else abstain.
pub fn resolve_fallback(transcript: &Transcript) -> Prediction {
    let pick = |h: Option<&crate::prompt::Hypothesis>, source| {
        h.map(|h| Prediction { image_id: transcript.image_id.clone(), label_index: Some(h.label_index), source })
    };
    let final_turn = transcript.turns.last().filter(|t| t.round == transcript.final_round);
    let final_clean = final_turn.and_then(DialogueTurn::hypothesis);
    let found = if transcript.setting.ira_enabled() {
        let decider = final_turn.filter(|t| t.role == AgentRole::DecisionMaker).and(final_clean);
        pick(decider, PredictionSource::Decider)
            .or_else(|| pick(transcript.last_clean(AgentRole::VisionAnalyst), PredictionSource::FallbackVision))
            .or_else(|| pick(transcript.last_clean(AgentRole::FoodScientist), PredictionSource::FallbackFood))
    } else {
        pick(final_clean, PredictionSource::Generalist)
            .or_else(|| pick(transcript.last_clean(AgentRole::Generalist), PredictionSource::FallbackGeneralist))
    };
    found.unwrap_or_else(|| Prediction::abstain(transcript.image_id.clone()))
}

/// Inputs describing one image.
#[derive(Debug, Clone, Copy)]
pub struct DialogueInput<'a> {
    pub image_id: &'a str,
    pub image: &'a ImageAttachment,
    pub tokens: &'a PerceptionTokenSet,
    pub labels: &'a LabelSpace,
}

/// Runs the full dialogue for one image.
///
/// Parse failures are retried with a reminder and then resolved through the
/// fallback chain, so they never surface as errors. Transport failures do,
/// carrying the transcript recorded up to that point.
pub fn run_dialogue(
    input: DialogueInput<'_>,
    cfg: &RunConfig,
    templates: &TemplateSet,
    backend: &dyn ChatBackend,
) -> Result<(Prediction, Transcript), DialogueError> {
    cfg.validate()?;
    let setting = cfg.setting;
    let mut transcript = Transcript::new(input.image_id, setting);

    for round in 1..=cfg.rounds {
        for &role in AgentRole::for_setting(setting) {
            let bundle = build_turn_prompt(
                templates,
                role,
                round,
                &transcript,
                input.tokens,
                input.labels,
                input.image,
                setting,
            )?;
            let turn = match run_turn(&input, cfg, backend, role, round, bundle) {
                Ok(turn) => turn,
                Err(error) => {
                    transcript.final_round = round;
                    return Err(DialogueError::BackendUnavailable {
                        image_id: input.image_id.into(),
                        error,
                        partial: Box::new(transcript),
                    });
                }
            };
            transcript.turns.push(turn);
        }
        transcript.final_round = round;
    }

    Ok((resolve_fallback(&transcript), transcript))
}

fn run_turn(
    input: &DialogueInput<'_>,
    cfg: &RunConfig,
    backend: &dyn ChatBackend,
    role: AgentRole,
    round: u32,
    bundle: crate::prompt::PromptBundle,
) -> Result<DialogueTurn, BackendError> {
    let prompt_digest = bundle.digest();
    let mut messages = bundle.messages;
    let mut rejected = Vec::new();
    let mut retries_used = 0;
    loop {
        let request = ChatRequest {
            messages,
            image: bundle.image.clone(),
            decoding: cfg.decoding,
            context: RequestContext {
                image_id: input.image_id.into(),
                setting: cfg.setting,
                role,
                round,
                attempt: retries_used + 1,
            },
        };
        let reply = backend.chat(&request)?;
        if reply.truncated {
            log::warn!("{}: {:?} reply in round {round} hit the token limit", input.image_id, role);
        }
        let parsed = parse_agent_output(role, &reply.text, input.labels);
        let error = match parsed {
            Ok(hypothesis) => {
                return Ok(DialogueTurn {
                    round,
                    role,
                    prompt_digest,
                    raw_response: reply.text,
                    outcome: TurnOutcome::Parsed { hypothesis },
                    retries_used,
                    rejected,
                    truncated: reply.truncated,
                })
            }
            Err(e) => e,
        };
        match apply_retry(role, &request.messages, &reply.text, &error, retries_used, cfg.retry_limit) {
            RetryDecision::Retry(next) => {
                rejected.push(RejectedAttempt { response: reply.text, error });
                messages = next;
                retries_used += 1;
            }
            RetryDecision::GiveUp => {
                return Ok(DialogueTurn {
                    round,
                    role,
                    prompt_digest,
                    raw_response: reply.text,
                    outcome: TurnOutcome::Failed { error },
                    retries_used,
                    rejected,
                    truncated: reply.truncated,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockScript};
    use crate::prompt::Hypothesis;
    use alloc::vec;

    const FS: AgentRole = AgentRole::FoodScientist;
    const VA: AgentRole = AgentRole::VisionAnalyst;
    const DM: AgentRole = AgentRole::DecisionMaker;
    const GN: AgentRole = AgentRole::Generalist;

    fn labels() -> LabelSpace {
        LabelSpace::new(["apple", "banana", "cherry"]).unwrap()
    }

    fn run(script: MockScript, cfg: &RunConfig) -> Result<(Prediction, Transcript), DialogueError> {
        let backend = MockBackend::new("mock", script);
        let image = ImageAttachment::Uri { uri: "file:///img1.png".into() };
        let tokens = PerceptionTokenSet::empty("img1", "test");
        let labels = labels();
        let input = DialogueInput { image_id: "img1", image: &image, tokens: &tokens, labels: &labels };
        run_dialogue(input, cfg, &TemplateSet::builtin(), &backend)
    }

    fn clean_d_script() -> MockScript {
        MockScript::new("Category: apple; Reasoning: red")
            .with("img1", VA, 1, 1, None, "Verdict: AGREE\nCategory: apple; Reasoning: round")
            .with("img1", VA, 2, 1, None, "Verdict: AGREE\nCategory: apple; Reasoning: round")
    }

    #[test]
    fn setting_d_two_rounds() {
        let (pred, tr) = run(clean_d_script(), &RunConfig::new(AblationSetting::D)).unwrap();
        assert_eq!(pred.source, PredictionSource::Decider);
        assert_eq!(pred.label_index, Some(0));
        let roles: Vec<_> = tr.roles().collect();
        assert_eq!(roles, vec![FS, VA, DM, FS, VA, DM]);
        assert_eq!(tr.final_round, 2);
    }

    #[test]
    fn setting_a_single_turn() {
        let (pred, tr) = run(MockScript::new("Category: banana; Reasoning: yellow"), &RunConfig::new(AblationSetting::A)).unwrap();
        assert_eq!(tr.turns.len(), 1);
        assert_eq!(tr.turns[0].role, GN);
        assert_eq!(pred.source, PredictionSource::Generalist);
        assert_eq!(pred.label_index, Some(1));
    }

    #[test]
    fn decider_unknown_label_falls_back_to_vision() {
        let mut cfg = RunConfig::new(AblationSetting::D);
        cfg.rounds = 1;
        cfg.retry_limit = 1;
        let script = MockScript::new("Category: apple; Reasoning: red")
            .with("img1", VA, 1, 1, None, "Verdict: DISAGREE\nCategory: cherry; Reasoning: small and dark")
            .with("img1", DM, 1, 1, None, "Category: durian; Reasoning: x")
            .with("img1", DM, 1, 2, None, "Category: durian; Reasoning: x");
        let (pred, tr) = run(script, &cfg).unwrap();
        assert_eq!(pred.source, PredictionSource::FallbackVision);
        assert_eq!(pred.label_index, Some(2));
        let dm = &tr.turns[2];
        assert_eq!(dm.retries_used, 1);
        assert!(matches!(dm.outcome, TurnOutcome::Failed { error: ParseError::UnknownLabel { .. } }));
    }

    #[test]
    fn retry_then_success() {
        let mut cfg = RunConfig::new(AblationSetting::A);
        cfg.retry_limit = 2;
        let script = MockScript::new("no idea").with("img1", GN, 1, 2, None, "Category: cherry; Reasoning: stem");
        let (pred, tr) = run(script, &cfg).unwrap();
        assert_eq!(pred.label_index, Some(2));
        assert_eq!(tr.turns[0].retries_used, 1);
        assert_eq!(tr.turns[0].rejected.len(), 1);
        assert_eq!(tr.turns[0].rejected[0].error, ParseError::MissingCategory);
    }

    #[test]
    fn apply_retry_rules() {
        let msgs = vec![ChatMessage::new(MessageRole::User, "q")];
        match apply_retry(GN, &msgs, "junk", &ParseError::MissingCategory, 0, 2) {
            RetryDecision::Retry(next) => {
                assert_eq!(next.len(), 3);
                assert_eq!(next[1], ChatMessage::new(MessageRole::Assistant, "junk"));
                assert!(next[2].content.contains(CATEGORY_CONTRACT));
            }
            RetryDecision::GiveUp => panic!("expected retry"),
        }
        let e = ParseError::UnknownLabel { text: "x".into() };
        assert_eq!(apply_retry(GN, &msgs, "junk", &e, 2, 2), RetryDecision::GiveUp);
        match apply_retry(VA, &msgs, "junk", &ParseError::MissingVerdict, 0, 2) {
            RetryDecision::Retry(next) => assert!(next[2].content.contains(VERDICT_CONTRACT)),
            RetryDecision::GiveUp => panic!("expected retry"),
        }
    }

    fn turn(round: u32, role: AgentRole, label: Option<usize>) -> DialogueTurn {
        DialogueTurn {
            round,
            role,
            prompt_digest: String::new(),
            raw_response: String::new(),
            outcome: match label {
                Some(label_index) => TurnOutcome::Parsed {
                    hypothesis: Hypothesis { label_index, raw_label_text: String::new(), rationale: "r".into(), verdict: None },
                },
                None => TurnOutcome::Failed { error: ParseError::MissingCategory },
            },
            retries_used: 0,
            rejected: vec![],
            truncated: false,
        }
    }

    fn transcript(setting: AblationSetting, turns: Vec<DialogueTurn>) -> Transcript {
        let final_round = turns.last().map_or(0, |t| t.round);
        Transcript { image_id: "img1".into(), setting, turns, final_round }
    }

    #[test]
    fn fallback_chain() {
        let d = |turns| resolve_fallback(&transcript(AblationSetting::D, turns));
        let p = d(vec![turn(1, FS, Some(0)), turn(1, VA, Some(1)), turn(1, DM, None)]);
        assert_eq!((p.source, p.label_index), (PredictionSource::FallbackVision, Some(1)));
        let p = d(vec![turn(1, FS, Some(0)), turn(1, VA, None), turn(1, DM, None)]);
        assert_eq!((p.source, p.label_index), (PredictionSource::FallbackFood, Some(0)));
        let p = d(vec![turn(1, FS, None), turn(1, VA, None), turn(1, DM, None)]);
        assert_eq!((p.source, p.label_index), (PredictionSource::Abstain, None));
        // a clean round-1 decider does not rescue a failed round-2 decider
        let p = d(vec![
            turn(1, FS, Some(0)), turn(1, VA, Some(1)), turn(1, DM, Some(2)),
            turn(2, FS, Some(0)), turn(2, VA, None), turn(2, DM, None),
        ]);
        assert_eq!((p.source, p.label_index), (PredictionSource::FallbackVision, Some(1)));

        let c = resolve_fallback(&transcript(AblationSetting::C, vec![turn(1, GN, Some(2)), turn(2, GN, None)]));
        assert_eq!((c.source, c.label_index), (PredictionSource::FallbackGeneralist, Some(2)));
        let c = resolve_fallback(&transcript(AblationSetting::C, vec![turn(1, GN, None), turn(2, GN, None)]));
        assert_eq!(c.source, PredictionSource::Abstain);
    }

    #[test]
    fn setting_c_round_two_failure_uses_round_one() {
        let mut cfg = RunConfig::new(AblationSetting::C);
        cfg.retry_limit = 0;
        let script = MockScript::new("garbage").with("img1", GN, 1, 1, None, "Category: banana; Reasoning: curved");
        let (pred, tr) = run(script, &cfg).unwrap();
        assert_eq!(tr.turns.len(), 2);
        assert_eq!((pred.source, pred.label_index), (PredictionSource::FallbackGeneralist, Some(1)));
    }

    struct Down;

    impl ChatBackend for Down {
        fn backend_id(&self) -> &str {
            "down"
        }
        fn model(&self) -> &str {
            "none"
        }
        fn chat(&self, _: &ChatRequest) -> Result<crate::backend::ChatReply, BackendError> {
            Err(BackendError::Unavailable { attempts: 3, reason: "connection refused".into() })
        }
    }

    #[test]
    fn transport_failure_surfaces() {
        let image = ImageAttachment::Uri { uri: "x".into() };
        let tokens = PerceptionTokenSet::empty("img1", "t");
        let labels = labels();
        let input = DialogueInput { image_id: "img1", image: &image, tokens: &tokens, labels: &labels };
        let err = run_dialogue(input, &RunConfig::new(AblationSetting::D), &TemplateSet::builtin(), &Down).unwrap_err();
        assert!(matches!(err, DialogueError::BackendUnavailable { .. }));
    }

    #[test]
    fn config_rules() {
        assert!(RunConfig::new(AblationSetting::A).validate().is_ok());
        assert_eq!(RunConfig::new(AblationSetting::A).rounds, 1);
        assert_eq!(RunConfig::new(AblationSetting::C).rounds, 2);
        let mut cfg = RunConfig::new(AblationSetting::B);
        cfg.rounds = 2;
        assert_eq!(cfg.validate().unwrap_err().field, "rounds");
        let mut cfg = RunConfig::new(AblationSetting::D);
        cfg.decoding.temperature = -1.0;
        cfg.parallelism = 0;
        assert_eq!(cfg.problems().len(), 2);
    }
}
