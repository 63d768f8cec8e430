//! Versioned prompt templates, one per (role, setting) pair.
//!
//! A template file has a `[system]` section and a `[user]` section. Named
//! placeholders are `{class_list}`, `{opt_block}`, `{history}` and
//! `{role_instructions}`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use super::AgentRole;
use crate::setting::AblationSetting;

pub const BUILTIN_VERSION: &str = "v1";

pub const CATEGORY_CONTRACT: &str = "Category: <class>; Reasoning: <text>";
pub const VERDICT_CONTRACT: &str = "Verdict: AGREE|DISAGREE|REFINE";

const PLACEHOLDERS: [&str; 4] = ["class_list", "opt_block", "history", "role_instructions"];

const BUILTIN: [(AgentRole, AblationSetting, &str); 6] = [
    (AgentRole::Generalist, AblationSetting::A, include_str!("../../templates/v1/generalist_a.txt")),
    (AgentRole::Generalist, AblationSetting::B, include_str!("../../templates/v1/generalist_b.txt")),
    (AgentRole::Generalist, AblationSetting::C, include_str!("../../templates/v1/generalist_c.txt")),
    (AgentRole::FoodScientist, AblationSetting::D, include_str!("../../templates/v1/food_scientist_d.txt")),
    (AgentRole::VisionAnalyst, AblationSetting::D, include_str!("../../templates/v1/vision_analyst_d.txt")),
    (AgentRole::DecisionMaker, AblationSetting::D, include_str!("../../templates/v1/decision_maker_d.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("{file}: missing `[system]` or `[user]` section")]
    MissingSection { file: String },
    #[error("{file}: unknown placeholder `{{{name}}}`")]
    UnknownPlaceholder { file: String, name: String },
    #[error("{file}: {problem}")]
    Contract { file: String, problem: &'static str },
    #[error("no template for role {role:?} under setting {setting}")]
    Missing { role: AgentRole, setting: AblationSetting },
    #[error("{file}: defined twice")]
    Duplicate { file: String },
    #[error("{file}: not a template file name (expected <role>_<setting>.txt)")]
    BadFileName { file: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTemplate {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<(AgentRole, AblationSetting), RoleTemplate>,
}

/// The (role, setting) pairs a complete template set must cover.
pub fn required_pairs() -> impl Iterator<Item = (AgentRole, AblationSetting)> {
    AblationSetting::ALL.into_iter().flat_map(|s| AgentRole::for_setting(s).iter().map(move |&r| (r, s)))
}

pub fn file_name(role: AgentRole, setting: AblationSetting) -> String {
    format!("{}_{}.txt", role.as_str(), setting.as_str())
}

/// Inverse of [`file_name`].
pub fn parse_file_name(name: &str) -> Option<(AgentRole, AblationSetting)> {
    let stem = name.strip_suffix(".txt")?;
    let (role, setting) = stem.rsplit_once('_')?;
    let role = AgentRole::ALL.into_iter().find(|r| r.as_str() == role)?;
    Some((role, setting.parse().ok()?))
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::from_sources(BUILTIN_VERSION, BUILTIN.iter().map(|&(r, s, t)| (r, s, t)))
            .expect("built-in templates are valid")
    }

    /// Parses and checks a full set. Every pair from [`required_pairs`] must
    /// be present.
    pub fn from_sources<'a, I>(version: &str, sources: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = (AgentRole, AblationSetting, &'a str)>,
    {
        let mut templates = BTreeMap::new();
        for (role, setting, text) in sources {
            let file = file_name(role, setting);
            let template = parse_template(&file, text)?;
            check_contract(&file, role, setting, &template)?;
            if templates.insert((role, setting), template).is_some() {
                return Err(TemplateError::Duplicate { file });
            }
        }
        for (role, setting) in required_pairs() {
            if !templates.contains_key(&(role, setting)) {
                return Err(TemplateError::Missing { role, setting });
            }
        }
        Ok(Self { version: version.into(), templates })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, role: AgentRole, setting: AblationSetting) -> Result<&RoleTemplate, TemplateError> {
        self.templates.get(&(role, setting)).ok_or(TemplateError::Missing { role, setting })
    }
}

fn parse_template(file: &str, text: &str) -> Result<RoleTemplate, TemplateError> {
    let mut system: Option<Vec<&str>> = None;
    let mut user: Option<Vec<&str>> = None;
    let mut in_user = None;
    for line in text.lines() {
        match line.trim_end() {
            "[system]" => {
                system = Some(Vec::new());
                in_user = Some(false);
            }
            "[user]" => {
                user = Some(Vec::new());
                in_user = Some(true);
            }
            _ => match in_user {
                Some(false) => system.get_or_insert_with(Vec::new).push(line),
                Some(true) => user.get_or_insert_with(Vec::new).push(line),
                None => {}
            },
        }
    }
    match (system, user) {
        (Some(s), Some(u)) => {
            let t = RoleTemplate { system: s.join("\n").trim().into(), user: u.join("\n").trim().into() };
            for section in [&t.system, &t.user] {
                for name in placeholders(section) {
                    if !PLACEHOLDERS.contains(&name) {
                        return Err(TemplateError::UnknownPlaceholder { file: file.into(), name: name.into() });
                    }
                }
            }
            Ok(t)
        }
        _ => Err(TemplateError::MissingSection { file: file.into() }),
    }
}

fn check_contract(file: &str, role: AgentRole, setting: AblationSetting, t: &RoleTemplate) -> Result<(), TemplateError> {
    let fail = |problem| Err(TemplateError::Contract { file: file.into(), problem });
    let has = |section: &str, name: &str| placeholders(section).any(|p| p == name);
    if !has(&t.system, "class_list") {
        return fail("system section must contain {class_list}");
    }
    if !t.system.contains(CATEGORY_CONTRACT) {
        return fail("system section must state the `Category: <class>; Reasoning: <text>` contract");
    }
    if role == AgentRole::VisionAnalyst && !t.system.contains(VERDICT_CONTRACT) {
        return fail("vision analyst system section must state the Verdict contract");
    }
    if role != AgentRole::Generalist && !has(&t.system, "role_instructions") {
        return fail("role templates must contain {role_instructions}");
    }
    let opt_anywhere = has(&t.system, "opt_block") || has(&t.user, "opt_block");
    if setting.opt_enabled() && !has(&t.user, "opt_block") {
        return fail("user section must contain {opt_block} for this setting");
    }
    if !setting.opt_enabled() && opt_anywhere {
        return fail("{opt_block} is not allowed for setting a");
    }
    if setting.multi_turn() && !has(&t.user, "history") {
        return fail("user section must contain {history} for multi-turn settings");
    }
    Ok(())
}

/// Names of `{ident}` placeholders in `text`, in order.
fn placeholders(text: &str) -> impl Iterator<Item = &str> {
    text.match_indices('{').filter_map(move |(i, _)| {
        let rest = &text[i + 1..];
        let end = rest.find('}')?;
        let name = &rest[..end];
        (!name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')).then_some(name)
    })
}

/// Single-pass substitution; substituted values are never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let value = after
            .find('}')
            .and_then(|end| vars.iter().find(|(k, _)| *k == &after[..end]).map(|(_, v)| (end, *v)));
        match value {
            Some((end, v)) => {
                out.push_str(v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    tidy(&out)
}

/// Trims trailing spaces, collapses blank-line runs, trims the ends.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blank_run = 0;
    for line in text.trim().lines() {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    String::from(out.trim_end())
}
