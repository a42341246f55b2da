//! Run configuration: a TOML file with `[data]`, `[model]`, `[regression]`,
//! `[train]`, `[eval]` and `[output]` sections.
//!
//! Parsing never stops at the first problem. Every invalid entry becomes a
//! [`ConfigIssue`] carrying its dotted key and, when it can be located, the
//! line it sits on.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use resflow_core::data::SplitSpec;
use resflow_core::model::TrainConfig;
use resflow_core::model::{
    chain_edges, Edge, LinkPreset, ModelConfig, ModelMode, Regularizer, TaskKind, TaskSpec, TowerLayout, TowerSpec,
};
use resflow_core::progressive::ThresholdLadder;
use resflow_core::tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, ConfigIssue};

pub const DEFAULT_WIDTHS: [usize; 3] = [128, 64, 1];
pub const DEFAULT_K: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub data: Option<RawData>,
    #[serde(default)]
    pub model: RawModel,
    pub regression: Option<RawRegression>,
    #[serde(default)]
    pub train: RawTrain,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub output: RawOutput,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    pub manifest: Option<PathBuf>,
    pub split_fraction: Option<f64>,
    pub first_test_day: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Dropout {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub mode: Option<String>,
    pub layout: Option<String>,
    pub widths: Option<Vec<usize>>,
    pub dropout: Option<Dropout>,
    pub embedding_dim: Option<usize>,
    pub min_count: Option<u64>,
    /// Chain preset used when no `[[model.edge]]` is given.
    pub links: Option<String>,
    pub regularizer: Option<String>,
    pub lambda: Option<f64>,
    #[serde(default, rename = "task")]
    pub tasks: Vec<RawTask>,
    #[serde(default, rename = "edge")]
    pub edges: Vec<RawEdge>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawTask {
    pub name: Option<String>,
    pub label: Option<String>,
    pub kind: Option<String>,
    pub pos_weight: Option<f64>,
    pub neg_weight: Option<f64>,
    pub loss_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawEdge {
    pub src: Option<String>,
    pub dst: Option<String>,
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub logit: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawRegression {
    pub head: Option<String>,
    pub ladder: Option<Vec<f64>>,
    pub pos_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
}

/// Which tasks and label columns feed the list metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub k: Vec<usize>,
    pub ctr_task: String,
    pub ctcvr_task: String,
    pub order_label: String,
    pub atc_label: Option<String>,
    pub click_label: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K.to_vec(),
            ctr_task: "ctr".into(),
            ctcvr_task: "ctcvr".into(),
            order_label: "order".into(),
            atc_label: None,
            click_label: "click".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One `ge_<v>` binary task per threshold, decoded to an expectation.
    Progressive,
    /// A single squared-error head.
    Traditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    pub kind: HeadKind,
    pub ladder: ThresholdLadder,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub regression: Option<RegressionHead>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub out_dir: PathBuf,
    /// Line of each task's `label` key, for dataset checks after loading.
    pub label_lines: Vec<Option<usize>>,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub k: Option<Vec<usize>>,
}

/// Where each key sits in the source text, keyed by (table, occurrence, key).
struct SourceMap {
    keys: HashMap<(String, usize, String), usize>,
    tables: HashMap<(String, usize), usize>,
}

impl SourceMap {
    fn scan(text: &str) -> Self {
        let mut keys = HashMap::new();
        let mut tables = HashMap::new();
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut current = (String::new(), 0usize);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('[') {
                let array = line.starts_with("[[");
                let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
                let index = if array {
                    let c = counts.entry(name.clone()).or_insert(0);
                    *c += 1;
                    *c - 1
                } else {
                    0
                };
                tables.insert((name.clone(), index), i + 1);
                current = (name, index);
            } else if let Some((key, _)) = line.split_once('=') {
                let key = key.trim().trim_matches('"').to_string();
                if !key.is_empty() && !key.starts_with('#') {
                    keys.entry((current.0.clone(), current.1, key)).or_insert(i + 1);
                }
            }
        }
        Self { keys, tables }
    }

    fn line(&self, table: &str, index: usize, key: &str) -> Option<usize> {
        self.keys
            .get(&(table.to_string(), index, key.to_string()))
            .or_else(|| self.tables.get(&(table.to_string(), index)))
            .copied()
    }
}

struct Issues<'a> {
    map: &'a SourceMap,
    list: Vec<ConfigIssue>,
}

impl Issues<'_> {
    fn push(&mut self, table: &str, index: Option<usize>, key: &str, message: impl Into<String>) {
        self.push_near(table, index, key, key, message);
    }

    /// Like `push`, but located at the line of `anchor` (for missing keys).
    fn push_near(&mut self, table: &str, index: Option<usize>, key: &str, anchor: &str, message: impl Into<String>) {
        let dotted = match (table.is_empty(), index) {
            (true, _) => key.to_string(),
            (false, Some(i)) => format!("{table}[{i}].{key}"),
            (false, None) if key.is_empty() => table.to_string(),
            (false, None) => format!("{table}.{key}"),
        };
        let line = self.map.line(table, index.unwrap_or(0), anchor);
        self.list.push(ConfigIssue { key: dotted, line, message: message.into() });
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Reads and validates a config file.
pub fn load(path: &Path, overrides: &Overrides) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, path, overrides)
}

/// Parses `text`; relative paths resolve against the directory of `path`.
pub fn parse(text: &str, path: &Path, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut raw: RawConfig = match toml::from_str(text) {
        Ok(r) => r,
        Err(e) => {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let key = e
                .span()
                .and_then(|s| text.get(s))
                .map(|t| t.split('=').next().unwrap_or(t).trim().to_string())
                .filter(|t| !t.is_empty() && t.len() < 60)
                .unwrap_or_else(|| "<document>".into());
            let message = e.message().to_string();
            return Err(CliError::Config {
                path: path.to_path_buf(),
                issues: vec![ConfigIssue { key, line, message }],
            });
        }
    };
    apply_overrides(&mut raw, overrides);
    let map = SourceMap::scan(text);
    let base = path.parent().unwrap_or(Path::new("."));
    validate(raw, &map, base).map_err(|issues| CliError::Config { path: path.to_path_buf(), issues })
}

fn apply_overrides(raw: &mut RawConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        raw.seed = Some(s);
    }
    if let Some(m) = &o.mode {
        raw.model.mode = Some(m.clone());
    }
    if let Some(e) = o.epochs {
        raw.train.epochs = Some(e);
    }
    if let Some(d) = &o.out {
        raw.output.dir = Some(d.clone());
    }
    if let Some(k) = &o.k {
        raw.eval.k = k.clone();
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn validate(raw: RawConfig, map: &SourceMap, base: &Path) -> Result<RunConfig, Vec<ConfigIssue>> {
    let mut is = Issues { map, list: Vec::new() };

    let data = raw.data.unwrap_or_default();
    let manifest = match data.manifest {
        Some(m) => base.join(m),
        None => {
            is.push("data", None, "manifest", "missing dataset manifest path");
            PathBuf::new()
        }
    };
    let split = match (data.split_fraction, data.first_test_day) {
        (Some(_), Some(_)) => {
            is.push("data", None, "first_test_day", "give either split_fraction or first_test_day, not both");
            SplitSpec::Fraction(0.8)
        }
        (Some(f), None) => {
            if !(f > 0.0 && f < 1.0) {
                is.push("data", None, "split_fraction", format!("must be in (0, 1), got {f}"));
            }
            SplitSpec::Fraction(f)
        }
        (None, Some(d)) => SplitSpec::DayBoundary { first_test_day: d },
        (None, None) => SplitSpec::Fraction(0.8),
    };

    let m = raw.model;
    let mode = match m.mode.as_deref().unwrap_or("resflow").parse::<ModelMode>() {
        Ok(mode) => mode,
        Err(e) => {
            is.push("model", None, "mode", strip_prefix(e));
            ModelMode::ResFlow
        }
    };
    let layout = match m.layout.as_deref().unwrap_or("single") {
        "single" => TowerLayout::Single,
        "twin" => TowerLayout::Twin,
        other => {
            is.push("model", None, "layout", format!("unknown layout `{other}` (expected single or twin)"));
            TowerLayout::Single
        }
    };
    let widths = m.widths.unwrap_or_else(|| DEFAULT_WIDTHS.to_vec());
    if widths.is_empty() || widths.contains(&0) {
        is.push("model", None, "widths", "widths must be a non-empty list of positive integers");
    } else if layout == TowerLayout::Single && widths.last() != Some(&1) {
        is.push("model", None, "widths", "the last width of a single tower must be 1");
    }
    let mut tower = match layout {
        TowerLayout::Single => TowerSpec::single(&widths),
        TowerLayout::Twin => TowerSpec::twin(&widths),
    };
    match m.dropout {
        None => {}
        Some(Dropout::Uniform(r)) => {
            if !(0.0..1.0).contains(&r) {
                is.push("model", None, "dropout", format!("dropout must be in [0, 1), got {r}"));
            }
            tower = tower.with_dropout(r);
        }
        Some(Dropout::PerLayer(rates)) => {
            if rates.len() != tower.hidden() {
                is.push(
                    "model",
                    None,
                    "dropout",
                    format!("{} rates given for {} hidden layers", rates.len(), tower.hidden()),
                );
            } else if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
                is.push("model", None, "dropout", format!("dropout must be in [0, 1), got {r}"));
            } else {
                tower.dropout = rates;
            }
        }
    }
    let embedding_dim = m.embedding_dim.unwrap_or(8);
    if embedding_dim == 0 {
        is.push("model", None, "embedding_dim", "must be positive");
    }
    let min_count = m.min_count.unwrap_or(1);
    if min_count == 0 {
        is.push("model", None, "min_count", "must be at least 1");
    }
    let lambda = m.lambda;
    if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            is.push("model", None, "lambda", format!("must be a non-negative number, got {l}"));
        }
    }
    let regularizer = match m.regularizer.as_deref().unwrap_or("none") {
        "none" => Regularizer::None,
        "m3" => Regularizer::NonPositiveResidual,
        name @ ("m1" | "m2") => match lambda {
            Some(l) => {
                if name == "m1" {
                    Regularizer::ProbabilityPenalty(l)
                } else {
                    Regularizer::LogitPenalty(l)
                }
            }
            None => {
                is.push_near("model", None, "lambda", "regularizer", format!("regularizer {name} needs a lambda"));
                Regularizer::None
            }
        },
        other => {
            is.push(
                "model",
                None,
                "regularizer",
                format!("unknown regularizer `{other}` (expected none, m1, m2 or m3)"),
            );
            Regularizer::None
        }
    };
    let preset = match m.links.as_deref().unwrap_or("full").parse::<LinkPreset>() {
        Ok(p) => p,
        Err(e) => {
            is.push("model", None, "links", strip_prefix(e));
            LinkPreset::Full
        }
    };

    let regression = raw.regression.map(|r| {
        let kind = match r.head.as_deref().unwrap_or("progressive") {
            "progressive" => HeadKind::Progressive,
            "traditional" => HeadKind::Traditional,
            other => {
                is.push(
                    "regression",
                    None,
                    "head",
                    format!("unknown head `{other}` (expected progressive or traditional)"),
                );
                HeadKind::Progressive
            }
        };
        let ladder = match r.ladder {
            None => ThresholdLadder::movielens(),
            Some(v) => ThresholdLadder::new(v).unwrap_or_else(|e| {
                is.push("regression", None, "ladder", strip_prefix(e));
                ThresholdLadder::movielens()
            }),
        };
        if let Some(w) = r.pos_weight {
            if !positive(w) {
                is.push("regression", None, "pos_weight", format!("must be positive, got {w}"));
            }
        }
        (RegressionHead { kind, ladder }, r.pos_weight.unwrap_or(1.0))
    });

    let mut label_lines = Vec::new();
    let mut tasks = Vec::new();
    if let Some((head, pos_weight)) = &regression {
        if !m.tasks.is_empty() {
            is.push(
                "model.task",
                Some(0),
                "name",
                "tasks are generated by the [regression] head; remove [[model.task]]",
            );
        }
        match head.kind {
            HeadKind::Progressive => {
                tasks = head
                    .ladder
                    .task_names()
                    .into_iter()
                    .map(|n| TaskSpec::binary(n).with_pos_weight(*pos_weight))
                    .collect()
            }
            HeadKind::Traditional => tasks.push(TaskSpec::regression("rating")),
        }
        label_lines = vec![None; tasks.len()];
    } else {
        if m.tasks.is_empty() {
            is.push("model", None, "task", "at least one [[model.task]] is required");
        }
        for (i, t) in m.tasks.iter().enumerate() {
            let name = match &t.name {
                Some(n) if !n.trim().is_empty() => n.clone(),
                _ => {
                    is.push("model.task", Some(i), "name", "task name is missing or empty");
                    format!("task{i}")
                }
            };
            if tasks.iter().any(|s: &TaskSpec| s.name == name) {
                is.push("model.task", Some(i), "name", format!("duplicate task `{name}`"));
            }
            let kind = match t.kind.as_deref().unwrap_or("binary") {
                "binary" => TaskKind::Binary,
                "regression" => TaskKind::Regression,
                other => {
                    is.push(
                        "model.task",
                        Some(i),
                        "kind",
                        format!("unknown kind `{other}` (expected binary or regression)"),
                    );
                    TaskKind::Binary
                }
            };
            let mut spec = match kind {
                TaskKind::Binary => TaskSpec::binary(name.clone()),
                TaskKind::Regression => TaskSpec::regression(name.clone()),
            };
            if let Some(l) = &t.label {
                spec.label = l.clone();
            }
            for (key, value, slot) in [
                ("pos_weight", t.pos_weight, &mut spec.pos_weight),
                ("neg_weight", t.neg_weight, &mut spec.neg_weight),
                ("loss_weight", t.loss_weight, &mut spec.loss_weight),
            ] {
                if let Some(v) = value {
                    if positive(v) {
                        *slot = v;
                    } else {
                        is.push("model.task", Some(i), key, format!("must be positive, got {v}"));
                    }
                }
            }
            label_lines.push(map.line("model.task", i, if t.label.is_some() { "label" } else { "name" }));
            tasks.push(spec);
        }
    }

    let edges = if m.edges.is_empty() {
        let names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
        chain_edges(&names, preset, &tower)
    } else {
        if m.links.is_some() {
            is.push("model", None, "links", "links preset and explicit [[model.edge]] entries are exclusive");
        }
        let mut edges = Vec::new();
        for (i, e) in m.edges.iter().enumerate() {
            let mut ends = Vec::new();
            for (key, v) in [("src", &e.src), ("dst", &e.dst)] {
                match v {
                    Some(n) if tasks.iter().any(|t| &t.name == n) => ends.push(n.clone()),
                    Some(n) => is.push("model.edge", Some(i), key, format!("unknown task `{n}`")),
                    None => is.push("model.edge", Some(i), key, "missing task name"),
                }
            }
            if let [src, dst] = ends.as_slice() {
                let mut edge = Edge::new(src.clone(), dst.clone()).at_depths(&e.depths);
                if e.logit {
                    edge = edge.with_logit();
                }
                edges.push(edge);
            }
        }
        edges
    };

    let t = raw.train;
    let batch_size = t.batch_size.unwrap_or(512);
    if batch_size == 0 {
        is.push("train", None, "batch_size", "must be positive");
    }
    let learning_rate = t.learning_rate.unwrap_or(1e-3);
    if !positive(learning_rate) {
        is.push("train", None, "learning_rate", format!("must be positive, got {learning_rate}"));
    }
    let seed = raw.seed.unwrap_or(0);
    let train = TrainConfig {
        epochs: t.epochs.unwrap_or(1),
        batch_size,
        adam: AdamConfig::with_learning_rate(learning_rate),
        seed,
    };

    let eval = raw.eval;
    if eval.k.is_empty() || eval.k.contains(&0) {
        is.push("eval", None, "k", "K values must be positive integers");
    }

    let model = ModelConfig { mode, tasks, edges, tower, embedding_dim, min_count, regularizer };
    if is.list.is_empty() {
        if let Err(e) = model.validate() {
            let key = if m.edges.is_empty() { "links" } else { "edge" };
            is.push("model", None, key, strip_prefix(e));
        }
    }
    if !is.list.is_empty() {
        return Err(is.list);
    }
    Ok(RunConfig {
        seed,
        manifest,
        split,
        model,
        regression: regression.map(|(h, _)| h),
        train,
        eval,
        out_dir: raw.output.dir.map(|d| base.join(d)).unwrap_or_else(|| PathBuf::from("out")),
        label_lines,
    })
}

fn strip_prefix(e: resflow_core::Error) -> String {
    match e {
        resflow_core::Error::Config(m) => m,
        other => other.to_string(),
    }
}

impl RunConfig {
    /// Confirms every binary task reads an existing label column.
    pub fn check_labels(&self, path: &Path, label_names: &[String]) -> CliResult<()> {
        let issues: Vec<ConfigIssue> = self
            .model
            .tasks
            .iter()
            .zip(&self.label_lines)
            .enumerate()
            .filter(|(_, (t, _))| t.kind == TaskKind::Binary && !label_names.contains(&t.label))
            .map(|(i, (t, line))| ConfigIssue {
                key: format!("model.task[{i}].label"),
                line: *line,
                message: format!(
                    "label column `{}` is not in the dataset (columns: {})",
                    t.label,
                    label_names.join(", ")
                ),
            })
            .collect();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config { path: path.to_path_buf(), issues })
        }
    }
}

/// Parses a comma-separated K list such as `10,50,100`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>, String> {
    let ks = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("invalid K `{}`", p.trim())))
        .collect::<Result<Vec<_>, _>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err("K values must be positive integers".into());
    }
    Ok(ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> CliResult<RunConfig> {
        parse(text, Path::new("/tmp/run.toml"), &Overrides::default())
    }

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match parse_str(text) {
            Err(CliError::Config { issues, .. }) => issues,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    const FUNNEL: &str = r#"
seed = 7

[data]
manifest = "data/manifest.toml"

[model]
mode = "resflow"
widths = [16, 8, 1]

[[model.task]]
name = "ctr"
label = "click"

[[model.task]]
name = "ctcvr"
label = "order"
pos_weight = 10.0
"#;

    #[test]
    fn parses_funnel_config() {
        let c = parse_str(FUNNEL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.manifest, PathBuf::from("/tmp/data/manifest.toml"));
        assert_eq!(c.model.tasks[1].pos_weight, 10.0);
        assert_eq!(c.model.edges.len(), 1);
        assert_eq!(c.model.edges[0].depths, [1, 2]);
        assert!(c.model.edges[0].logit);
        assert_eq!(c.train.batch_size, 512);
        assert_eq!(c.label_lines, [Some(13), Some(17)]);
    }

    #[test]
    fn collects_every_issue_with_lines() {
        let text =
            FUNNEL.replace("mode = \"resflow\"", "mode = \"resnet\"").replace("pos_weight = 10.0", "pos_weight = -1.0")
                + "\n[train]\nbatch_size = 0\n";
        let list = issues(&text);
        let keys: Vec<&str> = list.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, ["model.mode", "model.task[1].pos_weight", "train.batch_size"]);
        assert_eq!(list[0].line, Some(8));
        assert_eq!(list[1].line, Some(18));
        assert_eq!(list[2].line, Some(21));
    }

    #[test]
    fn unknown_key_is_located() {
        let list = issues(&FUNNEL.replace("widths", "widht"));
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].line, Some(9));
        assert!(list[0].message.contains("widht"), "{}", list[0].message);
    }

    #[test]
    fn overrides_apply_before_validation() {
        let o = Overrides { mode: Some("esmm".into()), epochs: Some(0), seed: Some(3), ..Default::default() };
        let c = parse(FUNNEL, Path::new("run.toml"), &o).unwrap_err();
        // ESMM rejects the logit link of the full preset.
        assert!(matches!(c, CliError::Config { .. }));
        let text = FUNNEL.replace("widths = [16, 8, 1]", "widths = [16, 8, 1]\nlinks = \"none\"");
        let c = parse(&text, Path::new("run.toml"), &o).unwrap();
        assert_eq!((c.model.mode, c.train.epochs, c.seed, c.train.seed), (ModelMode::Esmm, 0, 3, 3));
    }

    #[test]
    fn regression_head_generates_tasks() {
        let text = "[data]\nmanifest = \"ml\"\n[model]\nregularizer = \"m3\"\n[regression]\nhead = \"progressive\"\n";
        let c = parse_str(text).unwrap();
        let names: Vec<&str> = c.model.tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["ge_2", "ge_3", "ge_4", "ge_5"]);
        assert_eq!(c.model.tower.widths, DEFAULT_WIDTHS);
        assert_eq!(c.model.regularizer, Regularizer::NonPositiveResidual);
        let text = "[data]\nmanifest = \"ml\"\n[model]\nwidths = [192, 128, 1]\n[regression]\nhead = \"traditional\"\n";
        let c = parse_str(text).unwrap();
        assert_eq!(c.model.tasks[0].kind, TaskKind::Regression);
    }

    #[test]
    fn missing_manifest_and_lambda() {
        let list = issues("[model]\nregularizer = \"m1\"\n[[model.task]]\nname = \"a\"\n");
        let keys: Vec<&str> = list.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, ["data.manifest", "model.lambda"]);
        assert_eq!(list[1].line, Some(2));
    }

    #[test]
    fn edge_with_unknown_task() {
        let text = FUNNEL.to_string() + "\n[[model.edge]]\nsrc = \"ctr\"\ndst = \"cvr\"\ndepths = [1]\n";
        let list = issues(&text);
        assert_eq!(list[0].key, "model.edge[0].dst");
        assert_eq!(list[0].line, Some(22));
    }

    #[test]
    fn k_list() {
        assert_eq!(parse_k_list("10, 50,100").unwrap(), [10, 50, 100]);
        assert!(parse_k_list("10,0").is_err());
        assert!(parse_k_list("x").is_err());
    }
}
