//! Turning model output into validated [`Extraction`]s, and the per-policy
//! flows that produce them: three role calls for the role-based method, one
//! unified call for each baseline.

mod fields;
mod journal;
mod json;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GoldAnnotation, PolicyRecord};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, DEFAULT_MAX_TOKENS};
use crate::par::{self, Execution};
use crate::prompting::{MethodId, PromptError, RenderedPrompt, RoleId, TemplateSet};
use crate::taxonomy::{EffectiveYear, PolicyType, StateName, StrategySet, Taxonomy};

pub use fields::{
    parse_fields, parse_role_output, FieldGroup, FieldSet, FoodPrediction, Hallucination, Slot,
};
pub use journal::{manifest_path, read_journal, JournalError, JournalWriter, RunManifest};
pub use json::{extract_json_snippet, ExtractionMode, NoJsonFound, ParsedJson};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    /// Role or method name.
    pub source: String,
    pub text: String,
}

/// The structured profile recovered for one policy by one method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub record_id: String,
    pub method: MethodId,
    pub state: Slot<StateName>,
    pub effect_year: Slot<EffectiveYear>,
    pub policy_type: Slot<PolicyType>,
    pub strategies: Slot<StrategySet>,
    pub strategy_overflow: bool,
    pub food: FoodPrediction,
    pub hallucinations: Vec<Hallucination>,
    pub raw_responses: Vec<RawResponse>,
}

impl Extraction {
    pub fn empty(record_id: impl Into<String>, method: MethodId) -> Self {
        Extraction {
            record_id: record_id.into(),
            method,
            state: Slot::Missing,
            effect_year: Slot::Missing,
            policy_type: Slot::Missing,
            strategies: Slot::Missing,
            strategy_overflow: false,
            food: FoodPrediction::missing(),
            hallucinations: Vec::new(),
            raw_responses: Vec::new(),
        }
    }

    /// Copies over every field group present in `fields`.
    pub fn merge(&mut self, fields: FieldSet) {
        if let Some(v) = fields.state {
            self.state = v;
        }
        if let Some(v) = fields.effect_year {
            self.effect_year = v;
        }
        if let Some(v) = fields.policy_type {
            self.policy_type = v;
        }
        if let Some(v) = fields.strategies {
            self.strategies = v;
        }
        self.strategy_overflow |= fields.strategy_overflow;
        if let Some(v) = fields.food {
            self.food = v;
        }
        self.hallucinations.extend(fields.hallucinations);
    }

    /// Number of Missing slots (each food category counts separately).
    pub fn missing_count(&self) -> usize {
        [
            self.state.is_missing(),
            self.effect_year.is_missing(),
            self.policy_type.is_missing(),
            self.strategies.is_missing(),
        ]
        .into_iter()
        .chain(self.food.0.iter().map(Slot::is_missing))
        .filter(|m| *m)
        .count()
    }

    pub fn is_degraded(&self) -> bool {
        self.missing_count() > 0 || !self.hallucinations.is_empty()
    }

    /// The predicted strategies, or `None` when the field is missing or any
    /// emitted strategy was out of vocabulary.
    pub fn strategies_clean(&self) -> Option<&StrategySet> {
        let hallucinated = self
            .hallucinations
            .iter()
            .any(|h| h.field.starts_with("strategy"));
        if hallucinated {
            None
        } else {
            self.strategies.value()
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("record {record_id}: {source}")]
    Gateway {
        record_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("record {record_id}: {source}")]
    Prompt {
        record_id: String,
        #[source]
        source: PromptError,
    },
}

impl ExtractionError {
    pub fn record_id(&self) -> &str {
        match self {
            ExtractionError::Gateway { record_id, .. }
            | ExtractionError::Prompt { record_id, .. } => record_id,
        }
    }
}

/// Extractions for a corpus in corpus order. On a fatal error the run stops
/// early, keeping whatever had already completed.
#[derive(Debug)]
pub struct RunOutcome {
    pub extractions: Vec<Extraction>,
    pub error: Option<ExtractionError>,
}

impl RunOutcome {
    pub fn degraded(&self) -> usize {
        self.extractions.iter().filter(|e| e.is_degraded()).count()
    }
}

pub struct Extractor<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub taxonomy: &'a Taxonomy,
    pub model_id: String,
    pub max_tokens: u32,
    pub execution: Execution,
}

impl<'a> Extractor<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        taxonomy: &'a Taxonomy,
        model_id: impl Into<String>,
    ) -> Self {
        Extractor {
            gateway,
            templates,
            taxonomy,
            model_id: model_id.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn call(&self, prompt: &RenderedPrompt) -> Result<String, ExtractionError> {
        let req = CompletionRequest::new(&self.model_id, &prompt.text, self.max_tokens);
        self.gateway
            .complete(&req, &prompt.source_key())
            .map(|r| r.text)
            .map_err(|source| ExtractionError::Gateway {
                record_id: prompt.record_id.clone(),
                source,
            })
    }

    /// Parses one response for `groups`; no JSON means every field in
    /// `groups` is Missing.
    fn interpret(&self, text: &str, groups: &[FieldGroup]) -> FieldSet {
        match extract_json_snippet(text) {
            Ok(parsed) => parse_fields(groups, &parsed.object, self.taxonomy),
            Err(NoJsonFound) => FieldSet::missing(groups),
        }
    }

    fn role_call(
        &self,
        role: RoleId,
        record: &PolicyRecord,
    ) -> Result<(String, FieldSet), ExtractionError> {
        let prompt = self.templates.render_role(role, record, &self.model_id);
        let text = self.call(&prompt)?;
        let fields = self.interpret(&text, &[FieldGroup::for_role(role)]);
        Ok((text, fields))
    }

    /// Three independent role calls; each role fills only its own fields.
    pub fn run_role_based(&self, record: &PolicyRecord) -> Result<Extraction, ExtractionError> {
        let (analyst, (strategist, food)) = par::join(
            self.execution,
            || self.role_call(RoleId::PolicyAnalyst, record),
            || {
                par::join(
                    self.execution,
                    || self.role_call(RoleId::LegalStrategist, record),
                    || self.role_call(RoleId::FoodExpert, record),
                )
            },
        );
        let mut extraction = Extraction::empty(&record.id, MethodId::RoleBased);
        for (role, result) in RoleId::ALL.into_iter().zip([analyst, strategist, food]) {
            let (text, fields) = result?;
            extraction.merge(fields);
            extraction.raw_responses.push(RawResponse {
                source: role.name().to_string(),
                text,
            });
        }
        Ok(extraction)
    }

    /// One unified call covering all five attributes.
    pub fn run_baseline(
        &self,
        record: &PolicyRecord,
        method: MethodId,
        exemplars: &[(&PolicyRecord, &GoldAnnotation)],
    ) -> Result<Extraction, ExtractionError> {
        let prompt = self
            .templates
            .render_baseline(method, record, exemplars, &self.model_id)
            .map_err(|source| ExtractionError::Prompt {
                record_id: record.id.clone(),
                source,
            })?;
        let text = self.call(&prompt)?;
        let mut extraction = Extraction::empty(&record.id, method);
        extraction.merge(self.interpret(&text, &FieldGroup::ALL));
        extraction.raw_responses.push(RawResponse {
            source: method.name().to_string(),
            text,
        });
        Ok(extraction)
    }

    pub fn run_one(
        &self,
        record: &PolicyRecord,
        method: MethodId,
        exemplars: &[(&PolicyRecord, &GoldAnnotation)],
    ) -> Result<Extraction, ExtractionError> {
        match method {
            MethodId::RoleBased => self.run_role_based(record),
            baseline => self.run_baseline(record, baseline, exemplars),
        }
    }

    /// Runs every record, in parallel up to the gateway's in-flight limit.
    /// The first fatal error stops records that have not started yet.
    pub fn run_corpus(
        &self,
        records: &[&PolicyRecord],
        method: MethodId,
        exemplars: &[(&PolicyRecord, &GoldAnnotation)],
    ) -> RunOutcome {
        use std::sync::atomic::{AtomicBool, Ordering};

        // Surface precondition failures before any completion is issued.
        if method.is_baseline() {
            if let Some(first) = records.first() {
                if let Err(source) =
                    self.templates
                        .render_baseline(method, first, exemplars, &self.model_id)
                {
                    return RunOutcome {
                        extractions: Vec::new(),
                        error: Some(ExtractionError::Prompt {
                            record_id: first.id.clone(),
                            source,
                        }),
                    };
                }
            }
        }

        let aborted = AtomicBool::new(false);
        let results = par::with_threads(self.execution, self.gateway.in_flight_limit(), || {
            par::map(self.execution, records, |record| {
                if aborted.load(Ordering::SeqCst) {
                    return None;
                }
                let result = self.run_one(record, method, exemplars);
                if result.is_err() {
                    aborted.store(true, Ordering::SeqCst);
                }
                Some(result)
            })
        });

        let mut outcome = RunOutcome {
            extractions: Vec::with_capacity(records.len()),
            error: None,
        };
        for result in results.into_iter().flatten() {
            match result {
                Ok(e) => outcome.extractions.push(e),
                Err(e) if outcome.error.is_none() => outcome.error = Some(e),
                Err(_) => {}
            }
        }
        outcome
    }
}
