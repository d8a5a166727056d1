//! Prompt templates for the three expert roles and the three single-prompt
//! baselines.
//!
//! Template text is data: the defaults are compiled in from `templates/`, and
//! a directory with the same file names can replace any of them at runtime.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{GoldAnnotation, PolicyRecord};
use crate::taxonomy::FoodCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    RoleBased,
    ZeroShot,
    FewShot,
    ChainOfThought,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [
        MethodId::RoleBased,
        MethodId::ZeroShot,
        MethodId::FewShot,
        MethodId::ChainOfThought,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::RoleBased => "RoleBased",
            MethodId::ZeroShot => "ZeroShot",
            MethodId::FewShot => "FewShot",
            MethodId::ChainOfThought => "ChainOfThought",
        }
    }

    /// Row label in reports.
    pub fn label(self) -> &'static str {
        match self {
            MethodId::RoleBased => "Role-Based",
            MethodId::ZeroShot => "Zero-Shot",
            MethodId::FewShot => "Few-Shot",
            MethodId::ChainOfThought => "Chain-of-Thought",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != MethodId::RoleBased
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "rolebased" | "role" => Ok(MethodId::RoleBased),
            "zeroshot" => Ok(MethodId::ZeroShot),
            "fewshot" => Ok(MethodId::FewShot),
            "chainofthought" | "cot" => Ok(MethodId::ChainOfThought),
            _ => Err(format!(
                "unknown method {s:?} (expected role-based, zero-shot, few-shot or chain-of-thought)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleId {
    PolicyAnalyst,
    LegalStrategist,
    FoodExpert,
}

impl RoleId {
    pub const ALL: [RoleId; 3] = [
        RoleId::PolicyAnalyst,
        RoleId::LegalStrategist,
        RoleId::FoodExpert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoleId::PolicyAnalyst => "PolicyAnalyst",
            RoleId::LegalStrategist => "LegalStrategist",
            RoleId::FoodExpert => "FoodExpert",
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which JSON object a template asks the model to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputSchema {
    /// `state`, `effect_year`, `policy_type`
    Analyst,
    /// `strategy_1`, `strategy_2`
    Strategist,
    /// the six food flags
    Food,
    /// all of the above in one object
    Union,
}

impl OutputSchema {
    pub fn keys(self) -> Vec<&'static str> {
        let analyst = ["state", "effect_year", "policy_type"];
        let strategist = ["strategy_1", "strategy_2"];
        let food = FoodCategory::ALL.map(FoodCategory::key);
        match self {
            OutputSchema::Analyst => analyst.to_vec(),
            OutputSchema::Strategist => strategist.to_vec(),
            OutputSchema::Food => food.to_vec(),
            OutputSchema::Union => analyst.into_iter().chain(strategist).chain(food).collect(),
        }
    }
}

/// Identifies one template: a role under `RoleBased`, or a baseline method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateKind {
    Role(RoleId),
    Baseline(MethodId),
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        TemplateKind::Role(RoleId::PolicyAnalyst),
        TemplateKind::Role(RoleId::LegalStrategist),
        TemplateKind::Role(RoleId::FoodExpert),
        TemplateKind::Baseline(MethodId::ZeroShot),
        TemplateKind::Baseline(MethodId::FewShot),
        TemplateKind::Baseline(MethodId::ChainOfThought),
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Role(RoleId::PolicyAnalyst) => "role_policy_analyst.txt",
            TemplateKind::Role(RoleId::LegalStrategist) => "role_legal_strategist.txt",
            TemplateKind::Role(RoleId::FoodExpert) => "role_food_expert.txt",
            TemplateKind::Baseline(MethodId::ZeroShot) => "zero_shot.txt",
            TemplateKind::Baseline(MethodId::FewShot) => "few_shot.txt",
            TemplateKind::Baseline(MethodId::ChainOfThought) => "chain_of_thought.txt",
            TemplateKind::Baseline(MethodId::RoleBased) => unreachable!("not a baseline"),
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::Role(RoleId::PolicyAnalyst) => {
                include_str!("../templates/role_policy_analyst.txt")
            }
            TemplateKind::Role(RoleId::LegalStrategist) => {
                include_str!("../templates/role_legal_strategist.txt")
            }
            TemplateKind::Role(RoleId::FoodExpert) => {
                include_str!("../templates/role_food_expert.txt")
            }
            TemplateKind::Baseline(MethodId::ZeroShot) => {
                include_str!("../templates/zero_shot.txt")
            }
            TemplateKind::Baseline(MethodId::FewShot) => include_str!("../templates/few_shot.txt"),
            TemplateKind::Baseline(MethodId::ChainOfThought) => {
                include_str!("../templates/chain_of_thought.txt")
            }
            TemplateKind::Baseline(MethodId::RoleBased) => unreachable!("not a baseline"),
        }
    }

    pub fn method(self) -> MethodId {
        match self {
            TemplateKind::Role(_) => MethodId::RoleBased,
            TemplateKind::Baseline(m) => m,
        }
    }

    pub fn role(self) -> Option<RoleId> {
        match self {
            TemplateKind::Role(r) => Some(r),
            TemplateKind::Baseline(_) => None,
        }
    }

    pub fn schema(self) -> OutputSchema {
        match self {
            TemplateKind::Role(RoleId::PolicyAnalyst) => OutputSchema::Analyst,
            TemplateKind::Role(RoleId::LegalStrategist) => OutputSchema::Strategist,
            TemplateKind::Role(RoleId::FoodExpert) => OutputSchema::Food,
            TemplateKind::Baseline(_) => OutputSchema::Union,
        }
    }

    /// `RoleName` for roles, `MethodName` for baselines. Used in mock keys.
    pub fn source_name(self) -> &'static str {
        match self {
            TemplateKind::Role(r) => r.name(),
            TemplateKind::Baseline(m) => m.name(),
        }
    }

    fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Baseline(MethodId::FewShot) => &["title", "summary", "examples"],
            _ => &["title", "summary"],
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(
        "template {file}: placeholder {{{name}}} appears {count} times, expected exactly once"
    )]
    PlaceholderCount {
        file: &'static str,
        name: &'static str,
        count: usize,
    },
    #[error("template {file}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { file: &'static str, name: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{method} takes {}exemplars", if *.expected { "" } else { "no " })]
    ExemplarMismatch { method: MethodId, expected: bool },
    #[error("{0} is not a baseline method")]
    NotABaseline(MethodId),
}

/// Spans of `{name}` placeholders, where `name` is `[a-z_]+`.
fn placeholder_spans(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
                .count();
            let end = i + 1 + name_len;
            if name_len > 0 && bytes.get(end) == Some(&b'}') {
                spans.push((i, end + 1, &body[i + 1..end]));
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

fn strip_comments(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.starts_with("%%"))
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    body: String,
}

impl PromptTemplate {
    /// Strips `%%` comment lines and validates placeholders.
    pub fn parse(kind: TemplateKind, raw: &str) -> Result<Self, PromptError> {
        let body = strip_comments(raw);
        let file = kind.file_name();
        let spans = placeholder_spans(&body);
        if let Some((_, _, name)) = spans
            .iter()
            .find(|(_, _, name)| !kind.placeholders().contains(name))
        {
            return Err(PromptError::UnknownPlaceholder {
                file,
                name: name.to_string(),
            });
        }
        for name in kind.placeholders() {
            let count = spans.iter().filter(|(_, _, n)| n == name).count();
            if count != 1 {
                return Err(PromptError::PlaceholderCount { file, name, count });
            }
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn method(&self) -> MethodId {
        self.kind.method()
    }

    pub fn role(&self) -> Option<RoleId> {
        self.kind.role()
    }

    pub fn output_schema(&self) -> OutputSchema {
        self.kind.schema()
    }

    /// Template text with comments removed and placeholders intact.
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    /// Single left-to-right pass, so substituted text is never re-expanded.
    fn substitute(&self, lookup: impl Fn(&str) -> String) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut cursor = 0;
        for (start, end, name) in placeholder_spans(&self.body) {
            out.push_str(&self.body[cursor..start]);
            out.push_str(&lookup(name));
            cursor = end;
        }
        out.push_str(&self.body[cursor..]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub method: MethodId,
    pub role: Option<RoleId>,
    pub text: String,
    pub record_id: String,
    pub content_digest: String,
}

impl RenderedPrompt {
    /// `record_id/RoleName` or `record_id/MethodName`.
    pub fn source_key(&self) -> String {
        let source = self.role.map_or(self.method.name(), RoleId::name);
        format!("{}/{}", self.record_id, source)
    }
}

/// SHA-256 over length-prefixed fields so no two field tuples collide by
/// concatenation.
pub fn content_digest(
    method: MethodId,
    role: Option<RoleId>,
    text: &str,
    model_id: &str,
) -> String {
    let mut hasher = Sha256::new();
    for field in [method.name(), role.map_or("", RoleId::name), text, model_id] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Union-schema JSON for one exemplar, `{"key": value, ...}` in schema order.
pub fn gold_json(gold: &GoldAnnotation) -> String {
    use serde_json::Value;
    let mut strategies = gold.strategies.iter().map(|s| s.display());
    let mut fields: Vec<(&str, Value)> = vec![
        ("state", Value::from(gold.state.as_str())),
        ("effect_year", Value::from(gold.effect_year.to_string())),
        ("policy_type", Value::from(gold.policy_type.display())),
        ("strategy_1", Value::from(strategies.next().unwrap_or(""))),
        ("strategy_2", Value::from(strategies.next().unwrap_or(""))),
    ];
    fields.extend(FoodCategory::ALL.map(|c| (c.key(), Value::from(u8::from(gold.food.get(c))))));
    let body = fields
        .iter()
        .map(|(k, v)| format!("\"{k}\": {v}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{{{body}}}")
}

fn render_examples(exemplars: &[(&PolicyRecord, &GoldAnnotation)]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, (record, gold))| {
            format!(
                "Example {} ({}): Title: \"{}\" → {}",
                i + 1,
                gold.policy_type,
                record.title,
                gold_json(gold)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The six templates, validated.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|k| PromptTemplate::parse(*k, k.builtin()).expect("built-in templates are valid"))
            .collect();
        TemplateSet { templates }
    }

    /// Built-ins, with any same-named file in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let templates = TemplateKind::ALL
            .iter()
            .map(|k| {
                let path = dir.join(k.file_name());
                let raw = if path.exists() {
                    std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })?
                } else {
                    k.builtin().to_string()
                };
                PromptTemplate::parse(*k, &raw)
            })
            .collect::<Result<_, _>>()?;
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.kind == kind)
            .expect("template set is complete")
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn render_role(
        &self,
        role: RoleId,
        record: &PolicyRecord,
        model_id: &str,
    ) -> RenderedPrompt {
        let template = self.get(TemplateKind::Role(role));
        let text = template.substitute(|name| match name {
            "title" => record.title.clone(),
            "summary" => record.summary.clone(),
            _ => unreachable!("validated placeholder"),
        });
        RenderedPrompt {
            method: MethodId::RoleBased,
            role: Some(role),
            content_digest: content_digest(MethodId::RoleBased, Some(role), &text, model_id),
            text,
            record_id: record.id.clone(),
        }
    }

    pub fn render_baseline(
        &self,
        method: MethodId,
        record: &PolicyRecord,
        exemplars: &[(&PolicyRecord, &GoldAnnotation)],
        model_id: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        if !method.is_baseline() {
            return Err(PromptError::NotABaseline(method));
        }
        let wants_exemplars = method == MethodId::FewShot;
        if wants_exemplars == exemplars.is_empty() {
            return Err(PromptError::ExemplarMismatch {
                method,
                expected: wants_exemplars,
            });
        }
        let template = self.get(TemplateKind::Baseline(method));
        let text = template.substitute(|name| match name {
            "title" => record.title.clone(),
            "summary" => record.summary.clone(),
            "examples" => render_examples(exemplars),
            _ => unreachable!("validated placeholder"),
        });
        Ok(RenderedPrompt {
            method,
            role: None,
            content_digest: content_digest(method, None, &text, model_id),
            text,
            record_id: record.id.clone(),
        })
    }
}
