//! Scoring extractions against gold annotations and rendering comparison
//! reports.

mod metrics;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, GoldAnnotation};
use crate::extraction::Extraction;
use crate::par::{self, Execution};
use crate::prompting::MethodId;
use crate::taxonomy::{FoodCategory, GroupMap, StrategyGroup};

pub use metrics::{
    cell_counts, correct_categories, hamming_loss, k_correct_counts, k_correct_distribution,
    micro_f1, percentages, score_group, score_strategies_exact, score_strategies_partial,
    CellCounts, LengthMismatch,
};
pub use report::{parse_json_report, render_report, ReportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub state_acc: f64,
    pub year_acc: f64,
    pub policy_type_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub exact_acc: f64,
    pub partial_acc: f64,
    pub group_a_acc: f64,
    pub group_b_acc: f64,
}

/// Accuracy per food category, keyed like the corpus columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub grow: f64,
    pub process: f64,
    pub distribute: f64,
    pub get: f64,
    pub make: f64,
    pub surplus: f64,
}

impl CategoryAccuracy {
    pub fn from_array(values: [f64; 6]) -> Self {
        let [grow, process, distribute, get, make, surplus] = values;
        CategoryAccuracy {
            grow,
            process,
            distribute,
            get,
            make,
            surplus,
        }
    }

    pub fn get(&self, c: FoodCategory) -> f64 {
        self.to_array()[c.position()]
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.grow,
            self.process,
            self.distribute,
            self.get,
            self.make,
            self.surplus,
        ]
    }

    pub fn mean(&self) -> f64 {
        self.to_array().iter().sum::<f64>() / 6.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoodScores {
    pub per_category_acc: CategoryAccuracy,
    pub micro_f1: f64,
    pub hamming_loss: f64,
    /// Percent of records with exactly K correct categories, indexed by K.
    pub k_histogram: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: MethodId,
    pub model_id: String,
    pub n_records: usize,
    pub attributes: AttributeScores,
    pub strategies: StrategyScores,
    pub food: FoodScores,
    pub hallucination_count: usize,
    pub missing_count: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold annotation for record(s): {}", .0.join(", "))]
    GoldMissing(Vec<String>),
    #[error("nothing to score")]
    Empty,
    #[error("extractions mix methods {0} and {1}")]
    MixedMethods(MethodId, MethodId),
}

/// Counts for a subset of records. Tallies merge associatively, so any
/// partition of the records sums to the same totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub n: usize,
    pub state: usize,
    pub year: usize,
    pub policy_type: usize,
    pub exact: usize,
    pub partial: usize,
    pub group_a: usize,
    pub group_b: usize,
    pub food_correct: [usize; 6],
    pub cells: CellCounts,
    pub k_bins: [usize; 7],
    pub hallucinations: usize,
    pub missing: usize,
}

impl Tally {
    pub fn merge(self, o: Tally) -> Tally {
        let mut food_correct = self.food_correct;
        for (a, b) in food_correct.iter_mut().zip(o.food_correct) {
            *a += b;
        }
        let mut k_bins = self.k_bins;
        for (a, b) in k_bins.iter_mut().zip(o.k_bins) {
            *a += b;
        }
        Tally {
            n: self.n + o.n,
            state: self.state + o.state,
            year: self.year + o.year,
            policy_type: self.policy_type + o.policy_type,
            exact: self.exact + o.exact,
            partial: self.partial + o.partial,
            group_a: self.group_a + o.group_a,
            group_b: self.group_b + o.group_b,
            food_correct,
            cells: self.cells.merge(o.cells),
            k_bins,
            hallucinations: self.hallucinations + o.hallucinations,
            missing: self.missing + o.missing,
        }
    }

    fn frac(&self, count: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            count as f64 / self.n as f64
        }
    }
}

/// Scores one extraction. Missing and Unrecognized values never match, and
/// a strategy field with any out-of-vocabulary or surplus entry fails all
/// four strategy measures.
pub fn score_record(extraction: &Extraction, gold: &GoldAnnotation, groups: &GroupMap) -> Tally {
    let mut t = Tally {
        n: 1,
        hallucinations: extraction.hallucinations.len(),
        missing: extraction.missing_count(),
        ..Tally::default()
    };
    t.state = usize::from(extraction.state.value() == Some(&gold.state));
    t.year = usize::from(extraction.effect_year.value() == Some(&gold.effect_year));
    t.policy_type = usize::from(extraction.policy_type.value() == Some(&gold.policy_type));

    let strategies = extraction
        .strategies_clean()
        .filter(|_| !extraction.strategy_overflow);
    if let Some(pred) = strategies {
        let g = &gold.strategies;
        t.exact = usize::from(score_strategies_exact(pred, g));
        t.partial = usize::from(score_strategies_partial(pred, g));
        t.group_a = usize::from(score_group(pred, g, StrategyGroup::GroupA, groups));
        t.group_b = usize::from(score_group(pred, g, StrategyGroup::GroupB, groups));
    }

    for c in FoodCategory::ALL {
        let pred = extraction.food.get(c);
        let g = gold.food.get(c);
        t.food_correct[c.position()] = usize::from(pred.value() == Some(&g));
        t.cells.add(pred, g);
    }
    t.k_bins[correct_categories(&extraction.food, &gold.food)] = 1;
    t
}

pub fn report_from_tally(method: MethodId, model_id: &str, t: &Tally) -> EvalReport {
    EvalReport {
        method,
        model_id: model_id.to_string(),
        n_records: t.n,
        attributes: AttributeScores {
            state_acc: t.frac(t.state),
            year_acc: t.frac(t.year),
            policy_type_acc: t.frac(t.policy_type),
        },
        strategies: StrategyScores {
            exact_acc: t.frac(t.exact),
            partial_acc: t.frac(t.partial),
            group_a_acc: t.frac(t.group_a),
            group_b_acc: t.frac(t.group_b),
        },
        food: FoodScores {
            per_category_acc: CategoryAccuracy::from_array(t.food_correct.map(|c| t.frac(c))),
            micro_f1: t.cells.micro_f1(),
            hamming_loss: t.cells.hamming_loss(),
            k_histogram: percentages(&t.k_bins),
        },
        hallucination_count: t.hallucinations,
        missing_count: t.missing,
    }
}

pub fn build_report(
    extractions: &[Extraction],
    corpus: &Corpus,
    groups: &GroupMap,
    model_id: &str,
) -> Result<EvalReport, EvalError> {
    build_report_with(extractions, corpus, groups, model_id, Execution::default())
}

pub fn build_report_with(
    extractions: &[Extraction],
    corpus: &Corpus,
    groups: &GroupMap,
    model_id: &str,
    execution: Execution,
) -> Result<EvalReport, EvalError> {
    let first = extractions.first().ok_or(EvalError::Empty)?;
    if let Some(other) = extractions.iter().find(|e| e.method != first.method) {
        return Err(EvalError::MixedMethods(first.method, other.method));
    }

    let mut paired = Vec::with_capacity(extractions.len());
    let mut missing = Vec::new();
    for e in extractions {
        match corpus.get(&e.record_id).and_then(|r| r.gold.as_ref()) {
            Some(gold) => paired.push((e, gold)),
            None => missing.push(e.record_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::GoldMissing(missing));
    }

    let tally = par::map_reduce(
        execution,
        &paired,
        Tally::default(),
        |(e, gold)| score_record(e, gold, groups),
        Tally::merge,
    );
    Ok(report_from_tally(first.method, model_id, &tally))
}
