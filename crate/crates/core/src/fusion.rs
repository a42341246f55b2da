//! Fused ranking scores from CTR and CTCVR predictions, and a grid search
//! for the fusion weights.

use alloc::format;
use alloc::vec::Vec;

use crate::metrics::{mean_weighted_recall_at_k, RankedItem, RankedList, WeightTransform};
use crate::{Error, Result};

pub const MIN_PROB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionFamily {
    /// α·CTR + β·CTCVR
    Additive,
    /// CTR^α · CVR^β with CVR = CTCVR / CTR
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionFormula {
    pub family: FusionFamily,
    pub alpha: f64,
    pub beta: f64,
}

impl FusionFormula {
    pub fn additive(alpha: f64, beta: f64) -> Self {
        Self { family: FusionFamily::Additive, alpha, beta }
    }

    pub fn multiplicative(alpha: f64, beta: f64) -> Self {
        Self { family: FusionFamily::Multiplicative, alpha, beta }
    }

    pub fn score(&self, ctr: f64, ctcvr: f64) -> f64 {
        fuse(self, ctr, ctcvr)
    }
}

pub fn fuse(formula: &FusionFormula, ctr: f64, ctcvr: f64) -> f64 {
    match formula.family {
        FusionFamily::Additive => formula.alpha * ctr + formula.beta * ctcvr,
        FusionFamily::Multiplicative => {
            let ctr = ctr.max(MIN_PROB);
            let cvr = (ctcvr.max(MIN_PROB) / ctr).max(MIN_PROB);
            libm::pow(ctr, formula.alpha) * libm::pow(cvr, formula.beta)
        }
    }
}

/// Model predictions and labels of one list item.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoredItem {
    pub ctr: f64,
    pub ctcvr: f64,
    pub weight: f64,
    pub order: bool,
    pub atc: bool,
    pub click: bool,
}

/// Ranks one list under a formula.
pub fn rank_list(items: &[ScoredItem], formula: &FusionFormula) -> Result<RankedList> {
    RankedList::new(
        items
            .iter()
            .map(|it| RankedItem {
                score: fuse(formula, it.ctr, it.ctcvr),
                weight: it.weight,
                order: it.order,
                atc: it.atc,
                click: it.click,
            })
            .collect(),
    )
}

/// Mean WR@K of a formula over the lists with positive order weight.
pub fn evaluate(
    lists: &[Vec<ScoredItem>],
    formula: &FusionFormula,
    k: usize,
    transform: WeightTransform,
) -> Result<f64> {
    let ranked = lists.iter().map(|l| rank_list(l, formula)).collect::<Result<Vec<_>>>()?;
    mean_weighted_recall_at_k(&ranked, k, transform)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub family: FusionFamily,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub k: usize,
    pub transform: WeightTransform,
}

fn steps(start: f64, step: f64, count: usize) -> Vec<f64> {
    // Rounded to 1e-10 so that e.g. 0.1·3 prints and compares as 0.3.
    (0..count).map(|i| libm::round((start + step * i as f64) * 1e10) / 1e10).collect()
}

impl GridSpec {
    /// α ∈ {0, 0.25, …, 2}, β ∈ {1, 2, 5, 10, 20, 50}.
    pub fn default_additive(k: usize) -> Self {
        Self {
            family: FusionFamily::Additive,
            alphas: steps(0.0, 0.25, 9),
            betas: alloc::vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            k,
            transform: WeightTransform::Identity,
        }
    }

    /// α, β ∈ {−0.5, −0.4, …, 1.5}.
    pub fn default_multiplicative(k: usize) -> Self {
        Self {
            family: FusionFamily::Multiplicative,
            alphas: steps(-0.5, 0.1, 21),
            betas: steps(-0.5, 0.1, 21),
            k,
            transform: WeightTransform::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub formula: FusionFormula,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridCell,
    /// Every cell, α-major in grid order.
    pub table: Vec<GridCell>,
}

fn lexicographically_smaller(a: &FusionFormula, b: &FusionFormula) -> bool {
    (a.alpha, a.beta) < (b.alpha, b.beta)
}

/// Evaluates every (α, β) cell and returns the one with the highest mean
/// WR@K. Equal metrics resolve to the lexicographically smaller (α, β).
pub fn grid_search(grid: &GridSpec, lists: &[Vec<ScoredItem>]) -> Result<GridResult> {
    if lists.is_empty() || lists.iter().any(Vec::is_empty) {
        return Err(Error::Usage("grid search needs non-empty lists".into()));
    }
    if grid.alphas.is_empty() || grid.betas.is_empty() {
        return Err(Error::Usage("fusion grid is empty".into()));
    }
    if let Some(v) = grid.alphas.iter().chain(&grid.betas).find(|v| !v.is_finite()) {
        return Err(Error::Usage(format!("fusion grid value {v} is not finite")));
    }
    let mut table = Vec::with_capacity(grid.alphas.len() * grid.betas.len());
    for &alpha in &grid.alphas {
        for &beta in &grid.betas {
            let formula = FusionFormula { family: grid.family, alpha, beta };
            let metric = evaluate(lists, &formula, grid.k, grid.transform)?;
            table.push(GridCell { formula, metric });
        }
    }
    let mut best = table[0].clone();
    for cell in &table[1..] {
        if cell.metric > best.metric
            || (cell.metric == best.metric && lexicographically_smaller(&cell.formula, &best.formula))
        {
            best = cell.clone();
        }
    }
    Ok(GridResult { best, table })
}
