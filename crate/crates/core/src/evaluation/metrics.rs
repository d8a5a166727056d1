//! Set-match and multi-label metrics.

use thiserror::Error;

use crate::extraction::{FoodPrediction, Slot};
use crate::taxonomy::{FoodCategory, FoodFlags, GroupMap, StrategyGroup, StrategySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{preds} predictions for {golds} gold annotations")]
pub struct LengthMismatch {
    pub preds: usize,
    pub golds: usize,
}

/// Set equality, order-free; two empty sets agree.
pub fn score_strategies_exact(pred: &StrategySet, gold: &StrategySet) -> bool {
    pred == gold
}

/// Non-empty intersection, or both empty.
pub fn score_strategies_partial(pred: &StrategySet, gold: &StrategySet) -> bool {
    pred.intersects(gold) || (pred.is_empty() && gold.is_empty())
}

/// Prediction and gold agree on exactly which members of `group` are present.
pub fn score_group(
    pred: &StrategySet,
    gold: &StrategySet,
    group: StrategyGroup,
    groups: &GroupMap,
) -> bool {
    pred.restrict(group, groups) == gold.restrict(group, groups)
}

/// Pooled confusion counts over record × category cells, positive class = 1.
///
/// A cell without a usable prediction (missing or unrecognized) is always an
/// error: a false negative when gold is 1, a false positive when gold is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl CellCounts {
    pub fn add(&mut self, pred: &Slot<bool>, gold: bool) {
        match (pred.value().copied(), gold) {
            (Some(true), true) => self.tp += 1,
            (Some(true), false) => self.fp += 1,
            (Some(false), true) => self.fn_ += 1,
            (Some(false), false) => self.tn += 1,
            (None, true) => self.fn_ += 1,
            (None, false) => self.fp += 1,
        }
    }

    pub fn merge(self, other: CellCounts) -> CellCounts {
        CellCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// 2TP / (2TP + FP + FN); 1 when there is nothing to get wrong.
    pub fn micro_f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn hamming_loss(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.fp + self.fn_) as f64 / self.total() as f64
        }
    }
}

/// Categories predicted correctly for one record (0..=6).
pub fn correct_categories(pred: &FoodPrediction, gold: &FoodFlags) -> usize {
    FoodCategory::ALL
        .iter()
        .filter(|c| pred.get(**c).value() == Some(&gold.get(**c)))
        .count()
}

fn check(preds: &[FoodPrediction], golds: &[FoodFlags]) -> Result<(), LengthMismatch> {
    if preds.len() == golds.len() {
        Ok(())
    } else {
        Err(LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        })
    }
}

pub fn cell_counts(
    preds: &[FoodPrediction],
    golds: &[FoodFlags],
) -> Result<CellCounts, LengthMismatch> {
    check(preds, golds)?;
    let mut counts = CellCounts::default();
    for (pred, gold) in preds.iter().zip(golds) {
        for c in FoodCategory::ALL {
            counts.add(pred.get(c), gold.get(c));
        }
    }
    Ok(counts)
}

pub fn micro_f1(preds: &[FoodPrediction], golds: &[FoodFlags]) -> Result<f64, LengthMismatch> {
    Ok(cell_counts(preds, golds)?.micro_f1())
}

pub fn hamming_loss(preds: &[FoodPrediction], golds: &[FoodFlags]) -> Result<f64, LengthMismatch> {
    Ok(cell_counts(preds, golds)?.hamming_loss())
}

/// Raw per-record counts binned by K = number of correct categories.
pub fn k_correct_counts(
    preds: &[FoodPrediction],
    golds: &[FoodFlags],
) -> Result<[usize; 7], LengthMismatch> {
    check(preds, golds)?;
    let mut bins = [0usize; 7];
    for (pred, gold) in preds.iter().zip(golds) {
        bins[correct_categories(pred, gold)] += 1;
    }
    Ok(bins)
}

pub fn percentages(bins: &[usize; 7]) -> [f64; 7] {
    let n: usize = bins.iter().sum();
    if n == 0 {
        return [0.0; 7];
    }
    bins.map(|b| b as f64 * 100.0 / n as f64)
}

/// Percentage of records with exactly K correct categories, indexed by K.
pub fn k_correct_distribution(
    preds: &[FoodPrediction],
    golds: &[FoodFlags],
) -> Result<[f64; 7], LengthMismatch> {
    Ok(percentages(&k_correct_counts(preds, golds)?))
}
