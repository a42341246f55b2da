use alloc::format;
use alloc::vec::Vec;

use super::auc;
use crate::{Error, Result};

/// One item of a query/request list.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankedItem {
    pub score: f64,
    /// Order count W.
    pub weight: f64,
    pub order: bool,
    pub atc: bool,
    pub click: bool,
}

impl RankedItem {
    /// 1 for an ordered item, 0.25 for add-to-cart, 0.1 for a click, else 0.
    pub fn gain(&self) -> f64 {
        if self.order {
            1.0
        } else if self.atc {
            0.25
        } else if self.click {
            0.1
        } else {
            0.0
        }
    }
}

/// Items sorted by score descending; equal scores keep their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    items: Vec<RankedItem>,
}

impl RankedList {
    pub fn new(mut items: Vec<RankedItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Usage("ranked list is empty".into()));
        }
        for it in &items {
            if it.score.is_nan() {
                return Err(Error::Usage("ranked list score is NaN".into()));
            }
            if !(it.weight >= 0.0 && it.weight.is_finite() && libm::trunc(it.weight) == it.weight) {
                return Err(Error::Usage(format!("order count must be a non-negative integer, got {}", it.weight)));
            }
        }
        items.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(Self { items })
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightTransform {
    #[default]
    Identity,
    /// log(1 + W)
    Log,
    Sqrt,
    Square,
}

impl WeightTransform {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Self::Identity => w,
            Self::Log => libm::log1p(w),
            Self::Sqrt => libm::sqrt(w),
            Self::Square => w * w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionLabel {
    Order,
    Atc,
    Click,
}

impl ActionLabel {
    fn of(self, item: &RankedItem) -> bool {
        match self {
            Self::Order => item.order,
            Self::Atc => item.atc,
            Self::Click => item.click,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    Ok(())
}

/// Transformed weight of the top K items over the list total.
pub fn weighted_recall_at_k(list: &RankedList, k: usize, transform: WeightTransform) -> Result<f64> {
    check_k(k)?;
    let w: Vec<f64> = list.items.iter().map(|it| transform.apply(it.weight)).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("weighted recall over a list with zero total weight".into()));
    }
    let top: f64 = w.iter().take(k).sum();
    Ok(top / total)
}

/// Mean WR@K over lists with positive total weight.
pub fn mean_weighted_recall_at_k(lists: &[RankedList], k: usize, transform: WeightTransform) -> Result<f64> {
    check_k(k)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for list in lists {
        match weighted_recall_at_k(list, k, transform) {
            Ok(v) => {
                sum += v;
                n += 1;
            }
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no list has positive weight".into()));
    }
    Ok(sum / n as f64)
}

pub fn recall_at_k(list: &RankedList, k: usize, label: ActionLabel) -> Result<f64> {
    check_k(k)?;
    let total = list.items.iter().filter(|it| label.of(it)).count();
    if total == 0 {
        return Err(Error::UndefinedMetric(format!("recall over a list without {label:?} positives")));
    }
    let top = list.items.iter().take(k).filter(|it| label.of(it)).count();
    Ok(top as f64 / total as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(i, g)| (libm::exp2(g) - 1.0) / libm::log2(i as f64 + 2.0)).sum()
}

/// DCG over the list order divided by DCG of the gain-sorted order.
pub fn ndcg(list: &RankedList) -> Result<f64> {
    let mut ideal: Vec<f64> = list.items.iter().map(RankedItem::gain).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter());
    if idcg <= 0.0 {
        return Err(Error::UndefinedMetric("ndcg over a list without any positive gain".into()));
    }
    Ok(dcg(list.items.iter().map(RankedItem::gain)) / idcg)
}

/// Unweighted mean of per-list order AUC over lists holding both ordered and
/// non-ordered items.
pub fn list_auc(lists: &[RankedList]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for list in lists {
        let orders = list.items.iter().filter(|it| it.order).count();
        if orders == 0 || orders == list.len() {
            continue;
        }
        let scores: Vec<f64> = list.items.iter().map(|it| it.score).collect();
        let labels: Vec<f64> = list.items.iter().map(|it| if it.order { 1.0 } else { 0.0 }).collect();
        sum += auc(&scores, &labels)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no list has both ordered and non-ordered items".into()));
    }
    Ok(sum / n as f64)
}
