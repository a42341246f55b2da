//! Metric reports (JSON), prediction dumps and loss traces (tab-separated).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use resflow_core::data::Dataset;
use resflow_core::fusion::ScoredItem;
use resflow_core::metrics::{
    auc, list_auc, mean_weighted_recall_at_k, ndcg, recall_at_k, ActionLabel, RankedItem, RankedList, WeightTransform,
};
use resflow_core::model::{LossRecord, Predictions, TaskKind};
use resflow_core::progressive::{decode_expectation, regression_mse};
use serde::{Deserialize, Serialize};

use crate::config::{EvalSettings, HeadKind, RegressionHead};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TaskMetrics {
    /// `None` when the test labels hold a single class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AtK {
    pub wr: Option<f64>,
    pub wr_log: Option<f64>,
    pub wr_sqrt: Option<f64>,
    pub wr_square: Option<f64>,
    pub recall_order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_atc: Option<f64>,
    pub recall_click: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ListMetrics {
    pub lists: usize,
    /// Lists with positive order weight (the WR@K denominator).
    pub weighted_lists: usize,
    pub ndcg: Option<f64>,
    pub list_auc: Option<f64>,
    pub at_k: BTreeMap<usize, AtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub split: String,
    pub samples: usize,
    pub tasks: BTreeMap<String, TaskMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list: Option<ListMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Per-sample regression predictions under `head`.
pub fn regression_predictions(preds: &Predictions, head: &RegressionHead) -> CliResult<Vec<f64>> {
    match head.kind {
        HeadKind::Traditional => Ok(preds.values[0].clone()),
        HeadKind::Progressive => {
            let n = preds.values.first().map_or(0, Vec::len);
            (0..n)
                .map(|i| {
                    let q: Vec<f64> = preds.values.iter().map(|v| v[i]).collect();
                    decode_expectation(&q, &head.ladder).map_err(CliError::from)
                })
                .collect()
        }
    }
}

/// `(list_id, [(item_id, item)])` in ascending list ID order.
pub type ListGroups = Vec<(u64, Vec<(u64, ScoredItem)>)>;

/// List items built from predictions, grouped by list ID in ascending order.
/// `None` when the dataset has no lists or lacks the named tasks/labels.
pub fn scored_lists(data: &Dataset, preds: &Predictions, eval: &EvalSettings) -> Option<ListGroups> {
    if !data.has_lists() {
        return None;
    }
    let ctr = preds.task(&eval.ctr_task)?;
    let ctcvr = preds.task(&eval.ctcvr_task)?;
    let label = |name: &str| data.label_index(name);
    let order = label(&eval.order_label);
    let click = label(&eval.click_label);
    let atc = eval.atc_label.as_deref().and_then(label);
    let flag = |s: &resflow_core::data::Sample, col: Option<usize>| col.is_some_and(|c| s.labels[c] > 0.5);
    let mut lists: BTreeMap<u64, Vec<(u64, ScoredItem)>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        let Some(m) = s.list else { continue };
        lists.entry(m.list_id).or_default().push((
            m.item_id,
            ScoredItem {
                ctr: ctr[i],
                ctcvr: ctcvr[i],
                weight: m.weight,
                order: flag(s, order),
                atc: flag(s, atc),
                click: flag(s, click),
            },
        ));
    }
    Some(lists.into_iter().collect())
}

fn defined(r: resflow_core::Result<f64>) -> CliResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(resflow_core::Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn mean_defined(values: impl Iterator<Item = CliResult<Option<f64>>>) -> CliResult<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        if let Some(v) = v? {
            sum += v;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// List metrics with items ranked by the CTCVR prediction.
pub fn list_metrics(lists: &ListGroups, ks: &[usize]) -> CliResult<ListMetrics> {
    let ranked = lists
        .iter()
        .map(|(_, items)| {
            RankedList::new(
                items
                    .iter()
                    .map(|(_, it)| RankedItem {
                        score: it.ctcvr,
                        weight: it.weight,
                        order: it.order,
                        atc: it.atc,
                        click: it.click,
                    })
                    .collect(),
            )
        })
        .collect::<resflow_core::Result<Vec<_>>>()?;
    let weighted_lists = ranked.iter().filter(|l| l.items().iter().any(|i| i.weight > 0.0)).count();
    let mut at_k = BTreeMap::new();
    let has_atc = ranked.iter().any(|l| l.items().iter().any(|i| i.atc));
    for &k in ks {
        let wr = |t| defined(mean_weighted_recall_at_k(&ranked, k, t));
        let recall = |label| mean_defined(ranked.iter().map(|l| defined(recall_at_k(l, k, label))));
        at_k.insert(
            k,
            AtK {
                wr: wr(WeightTransform::Identity)?,
                wr_log: wr(WeightTransform::Log)?,
                wr_sqrt: wr(WeightTransform::Sqrt)?,
                wr_square: wr(WeightTransform::Square)?,
                recall_order: recall(ActionLabel::Order)?,
                recall_atc: if has_atc { recall(ActionLabel::Atc)? } else { None },
                recall_click: recall(ActionLabel::Click)?,
            },
        );
    }
    Ok(ListMetrics {
        lists: ranked.len(),
        weighted_lists,
        ndcg: mean_defined(ranked.iter().map(|l| defined(ndcg(l))))?,
        list_auc: defined(list_auc(&ranked))?,
        at_k,
    })
}

/// Task, regression and list metrics of `preds` on `data`.
pub fn build_report(
    split: &str,
    data: &Dataset,
    preds: &Predictions,
    task_kinds: &[(String, String, TaskKind)],
    head: Option<&RegressionHead>,
    eval: &EvalSettings,
) -> CliResult<MetricReport> {
    let mut report = MetricReport { split: split.into(), samples: data.len(), ..Default::default() };
    let targets: Vec<f64> = data.samples.iter().map(|s| s.target.unwrap_or(f64::NAN)).collect();
    for (k, (name, label, kind)) in task_kinds.iter().enumerate() {
        let values = &preds.values[k];
        let metrics = match kind {
            TaskKind::Binary => {
                let Some(col) = data.label_index(label) else {
                    return Err(CliError::Data(format!("dataset has no label column `{label}` for task `{name}`")));
                };
                let (scores, labels): (Vec<f64>, Vec<f64>) = values
                    .iter()
                    .zip(&data.samples)
                    .map(|(&p, s)| (p, s.labels[col]))
                    .filter(|(_, y)| !y.is_nan())
                    .unzip();
                TaskMetrics { auc: defined(auc(&scores, &labels))?, mse: None }
            }
            TaskKind::Regression => TaskMetrics { auc: None, mse: Some(regression_mse(values, &targets)?) },
        };
        report.tasks.insert(name.clone(), metrics);
    }
    if let Some(head) = head {
        let predicted = regression_predictions(preds, head)?;
        report.regression_mse = Some(regression_mse(&predicted, &targets)?);
    }
    if let Some(lists) = scored_lists(data, preds, eval) {
        report.list = Some(list_metrics(&lists, &eval.k)?);
    }
    Ok(report)
}

const PREDICTION_HEADER: &str = "list_id\titem_id\tctr\tctcvr\tW\torder\tatc\tclick";

pub fn write_predictions(path: &Path, lists: &ListGroups) -> CliResult<()> {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for (list_id, items) in lists {
        for (item_id, it) in items {
            let _ = writeln!(
                out,
                "{list_id}\t{item_id}\t{:?}\t{:?}\t{}\t{}\t{}\t{}",
                it.ctr, it.ctcvr, it.weight, it.order as u8, it.atc as u8, it.click as u8
            );
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Reads a prediction dump back into lists, keeping file order within a list.
pub fn read_predictions(path: &Path) -> CliResult<Vec<Vec<ScoredItem>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PREDICTION_HEADER => {}
        _ => return Err(CliError::Data(format!("{}: expected header `{PREDICTION_HEADER}`", path.display()))),
    }
    let mut lists: BTreeMap<u64, Vec<ScoredItem>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::Data(format!("{}:{}: malformed prediction row", path.display(), i + 1));
        let t: Vec<&str> = line.split('\t').collect();
        if t.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let flag = |s: &str| match s.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        let list_id: u64 = t[0].trim().parse().map_err(|_| bad())?;
        lists.entry(list_id).or_default().push(ScoredItem {
            ctr: num(t[2])?,
            ctcvr: num(t[3])?,
            weight: num(t[4])?,
            order: flag(t[5])?,
            atc: flag(t[6])?,
            click: flag(t[7])?,
        });
    }
    Ok(lists.into_values().collect())
}

pub fn write_loss_trace(path: &Path, tasks: &[String], trace: &[LossRecord]) -> CliResult<()> {
    let mut out = String::from("epoch\tbatch\tloss");
    for t in tasks {
        let _ = write!(out, "\tloss_{t}");
    }
    out.push('\n');
    for r in trace {
        let _ = write!(out, "{}\t{}\t{:?}", r.epoch, r.batch, r.loss);
        for l in &r.task_losses {
            let _ = write!(out, "\t{l:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        let item = |ctr: f64, w: f64| ScoredItem {
            ctr,
            ctcvr: ctr / 10.0,
            weight: w,
            order: w > 0.0,
            atc: false,
            click: ctr > 0.2,
        };
        let lists = vec![(3, vec![(1, item(0.1, 0.0)), (2, item(0.3, 2.0))]), (7, vec![(5, item(0.123456789, 1.0))])];
        write_predictions(&path, &lists).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], vec![lists[0].1[0].1, lists[0].1[1].1]);
        assert_eq!(back[1][0], lists[1].1[0].1);
    }

    #[test]
    fn list_metrics_on_perfect_ranking() {
        let it = |ctcvr: f64, w: f64| {
            (0, ScoredItem { ctr: 0.5, ctcvr, weight: w, order: w > 0.0, atc: false, click: w > 0.0 })
        };
        let lists = vec![(1, vec![it(0.9, 2.0), it(0.5, 1.0), it(0.1, 0.0)])];
        let m = list_metrics(&lists, &[1, 2]).unwrap();
        assert_eq!(m.ndcg, Some(1.0));
        assert_eq!(m.list_auc, Some(1.0));
        assert_eq!(m.at_k[&2].wr, Some(1.0));
        assert_eq!(m.at_k[&1].wr, Some(2.0 / 3.0));
        assert_eq!(m.at_k[&1].recall_order, Some(0.5));
        assert_eq!(m.at_k[&1].recall_atc, None);
    }
}
