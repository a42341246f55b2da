use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::config_err;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Sigmoid head trained with weighted cross-entropy.
    Binary,
    /// Linear head trained with squared error on the sample target.
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    /// Label column read for binary tasks.
    pub label: String,
    pub kind: TaskKind,
    /// Task weight ω in the joint loss.
    pub loss_weight: f64,
    pub pos_weight: f64,
    pub neg_weight: f64,
}

impl TaskSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        let name = name.into();
        Self { label: name.clone(), name, kind: TaskKind::Binary, loss_weight: 1.0, pos_weight: 1.0, neg_weight: 1.0 }
    }

    pub fn regression(name: impl Into<String>) -> Self {
        Self { kind: TaskKind::Regression, ..Self::binary(name) }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_pos_weight(mut self, w: f64) -> Self {
        self.pos_weight = w;
        self
    }

    pub fn with_loss_weight(mut self, w: f64) -> Self {
        self.loss_weight = w;
        self
    }
}

/// Dependency of `dst` on `src`. `depths` lists the tower depths (1-based)
/// where `dst` adds the output of `src`; `logit` adds the source logit to the
/// destination's residual logit. An edge with neither is a plain ordering
/// dependency (what ESMM chains use).
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub depths: Vec<usize>,
    pub logit: bool,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self { src: src.into(), dst: dst.into(), depths: Vec::new(), logit: false }
    }

    pub fn at_depths(mut self, depths: &[usize]) -> Self {
        self.depths = depths.to_vec();
        self
    }

    pub fn with_logit(mut self) -> Self {
        self.logit = true;
        self
    }
}

/// Which residual links a chain preset places on every edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkPreset {
    /// Every hidden depth plus the logit.
    Full,
    /// One hidden depth only (H1 = `Hidden(1)`).
    Hidden(usize),
    /// Every hidden depth, no logit link.
    FeatureOnly,
    LogitOnly,
    /// Ordering only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TowerLayout {
    #[default]
    Single,
    /// Query and item half-towers whose outputs meet in an inner product.
    Twin,
}

/// Architecture shared by every task tower.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerSpec {
    /// Block widths; the last is 1 for single towers and the inner-product
    /// dimension for twin towers.
    pub widths: Vec<usize>,
    /// Dropout rate of each hidden block.
    pub dropout: Vec<f64>,
    pub layout: TowerLayout,
}

impl TowerSpec {
    pub fn single(widths: &[usize]) -> Self {
        let hidden = widths.len().saturating_sub(1);
        Self { widths: widths.to_vec(), dropout: vec![0.0; hidden], layout: TowerLayout::Single }
    }

    pub fn twin(widths: &[usize]) -> Self {
        Self { layout: TowerLayout::Twin, ..Self::single(widths) }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout.iter_mut().for_each(|d| *d = rate);
        self
    }

    /// Number of blocks L.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn hidden(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    /// Largest depth a feature link may target.
    pub fn max_link_depth(&self) -> usize {
        match self.layout {
            TowerLayout::Single => self.hidden(),
            TowerLayout::Twin => self.depth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Independent towers over the shared embeddings; edges are ignored.
    Nse,
    /// Probabilities multiplied along a linear chain.
    Esmm,
    ResFlow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    None,
    /// λ · Σ max(p_dst − p_src, 0) over linked pairs.
    ProbabilityPenalty(f64),
    /// λ · Σ max(r, 0) over residual logits.
    LogitPenalty(f64),
    /// Residual logits pass through min(r, 0).
    NonPositiveResidual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<Edge>,
    pub tower: TowerSpec,
    pub embedding_dim: usize,
    /// IDs must occur more than this many times to get an embedding row.
    pub min_count: u64,
    pub regularizer: Regularizer,
}

/// Per-task link sources after validation, indexed by task position.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Incoming {
    /// `feature[l - 1]` is the source task of the link at depth `l`.
    pub feature: Vec<Option<usize>>,
    pub logit: Option<usize>,
    /// Predecessor in an ESMM chain.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub order: Vec<usize>,
    pub incoming: Vec<Incoming>,
    /// Active (src, dst) pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Edges linking consecutive tasks of `tasks` under `preset`.
pub fn chain_edges(tasks: &[&str], preset: LinkPreset, tower: &TowerSpec) -> Vec<Edge> {
    let hidden: Vec<usize> = (1..=tower.hidden()).collect();
    tasks
        .windows(2)
        .map(|w| {
            let e = Edge::new(w[0], w[1]);
            match preset {
                LinkPreset::Full => e.at_depths(&hidden).with_logit(),
                LinkPreset::Hidden(d) => e.at_depths(&[d]),
                LinkPreset::FeatureOnly => e.at_depths(&hidden),
                LinkPreset::LogitOnly => e.with_logit(),
                LinkPreset::None => e,
            }
        })
        .collect()
}

impl ModelConfig {
    /// ResFlow over a chain of binary tasks with full links.
    pub fn chain(tasks: &[&str], tower: TowerSpec, preset: LinkPreset) -> Self {
        Self {
            mode: ModelMode::ResFlow,
            tasks: tasks.iter().map(|t| TaskSpec::binary(*t)).collect(),
            edges: chain_edges(tasks, preset, &tower),
            tower,
            embedding_dim: 8,
            min_count: 1,
            regularizer: Regularizer::None,
        }
    }

    pub fn with_mode(mut self, mode: ModelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// Edges in effect for the mode (none for NSE).
    pub fn active_edges(&self) -> &[Edge] {
        match self.mode {
            ModelMode::Nse => &[],
            _ => &self.edges,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub(crate) fn plan(&self) -> Result<Plan> {
        self.check_tasks()?;
        self.check_tower()?;
        if self.embedding_dim == 0 {
            return Err(config_err!("embedding_dim must be positive"));
        }
        if self.min_count == 0 {
            return Err(config_err!("min_count must be at least 1"));
        }
        let n = self.tasks.len();
        let max_depth = self.tower.max_link_depth();
        let mut incoming: Vec<Incoming> =
            (0..n).map(|_| Incoming { feature: vec![None; max_depth], ..Incoming::default() }).collect();
        let mut pairs = Vec::new();
        let mut indegree = vec![0usize; n];
        let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in self.active_edges() {
            let label = format!("edge {} -> {}", e.src, e.dst);
            let src = self.task_index(&e.src).ok_or_else(|| config_err!("{label}: unknown task `{}`", e.src))?;
            let dst = self.task_index(&e.dst).ok_or_else(|| config_err!("{label}: unknown task `{}`", e.dst))?;
            if src == dst {
                return Err(config_err!("{label}: self-loop"));
            }
            if self.tasks[src].kind != TaskKind::Binary || self.tasks[dst].kind != TaskKind::Binary {
                return Err(config_err!("{label}: only binary tasks can be linked"));
            }
            for (i, &d) in e.depths.iter().enumerate() {
                if d == 0 || d > max_depth {
                    let hint = if self.tower.layout == TowerLayout::Single && d == self.tower.depth() {
                        " (use the logit flag for the final block)"
                    } else {
                        ""
                    };
                    return Err(config_err!("{label}: depth {d} outside 1..={max_depth}{hint}"));
                }
                if e.depths[..i].contains(&d) {
                    return Err(config_err!("{label}: depth {d} listed twice"));
                }
                let slot = &mut incoming[dst].feature[d - 1];
                if slot.is_some() {
                    return Err(config_err!("{label}: task `{}` already has a source at depth {d}", e.dst));
                }
                *slot = Some(src);
            }
            if e.logit {
                if self.tower.layout == TowerLayout::Twin && e.depths.contains(&self.tower.depth()) {
                    return Err(config_err!(
                        "{label}: residual both before and after the dot product is not supported"
                    ));
                }
                if incoming[dst].logit.is_some() {
                    return Err(config_err!("{label}: task `{}` already has a logit source", e.dst));
                }
                incoming[dst].logit = Some(src);
            }
            if self.mode == ModelMode::Esmm {
                if e.logit {
                    return Err(config_err!("{label}: ESMM does not take logit links"));
                }
                if incoming[dst].parent.is_some() {
                    return Err(config_err!("{label}: ESMM needs a linear chain, `{}` has two predecessors", e.dst));
                }
                incoming[dst].parent = Some(src);
            }
            if !pairs.contains(&(src, dst)) {
                pairs.push((src, dst));
                indegree[dst] += 1;
                successors[src].push(dst);
            }
        }
        let order = topological_order(&indegree, &successors).ok_or_else(|| config_err!("task graph has a cycle"))?;
        if self.mode == ModelMode::Esmm {
            if self.tasks.iter().any(|t| t.kind != TaskKind::Binary) {
                return Err(config_err!("ESMM mode needs binary tasks"));
            }
            if successors.iter().any(|s| s.len() > 1) {
                return Err(config_err!("ESMM needs a linear chain"));
            }
        }
        self.check_regularizer(&incoming, &pairs)?;
        Ok(Plan { order, incoming, pairs })
    }

    fn check_tasks(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(config_err!("at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.name.is_empty() {
                return Err(config_err!("task {i} has an empty name"));
            }
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(config_err!("task `{}` declared twice", t.name));
            }
            for (what, w) in
                [("loss_weight", t.loss_weight), ("pos_weight", t.pos_weight), ("neg_weight", t.neg_weight)]
            {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(config_err!("task `{}`: {what} must be finite and non-negative, got {w}", t.name));
                }
            }
        }
        Ok(())
    }

    fn check_tower(&self) -> Result<()> {
        let t = &self.tower;
        if t.widths.is_empty() || t.widths.contains(&0) {
            return Err(config_err!("tower widths must be non-empty and positive: {:?}", t.widths));
        }
        if t.layout == TowerLayout::Single && t.widths[t.widths.len() - 1] != 1 {
            return Err(config_err!("single tower must end in width 1, got {:?}", t.widths));
        }
        if t.dropout.len() != t.hidden() {
            return Err(config_err!("tower has {} hidden blocks but {} dropout rates", t.hidden(), t.dropout.len()));
        }
        if let Some(d) = t.dropout.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(config_err!("dropout rate {d} outside [0, 1)"));
        }
        if t.layout == TowerLayout::Twin && self.tasks.iter().any(|t| t.kind != TaskKind::Binary) {
            return Err(config_err!("twin towers need binary tasks"));
        }
        Ok(())
    }

    fn check_regularizer(&self, incoming: &[Incoming], pairs: &[(usize, usize)]) -> Result<()> {
        let name = match self.regularizer {
            Regularizer::None => return Ok(()),
            Regularizer::ProbabilityPenalty(_) => "probability penalty",
            Regularizer::LogitPenalty(_) => "residual-logit penalty",
            Regularizer::NonPositiveResidual => "non-positive residual mandate",
        };
        if self.mode == ModelMode::Nse {
            return Err(config_err!("{name} needs a task chain, NSE has none"));
        }
        match self.regularizer {
            Regularizer::ProbabilityPenalty(l) | Regularizer::LogitPenalty(l) if !(l >= 0.0 && l.is_finite()) => {
                Err(config_err!("{name}: lambda must be finite and non-negative, got {l}"))
            }
            Regularizer::ProbabilityPenalty(_) if pairs.is_empty() => {
                Err(config_err!("{name} needs at least one edge"))
            }
            Regularizer::LogitPenalty(_) | Regularizer::NonPositiveResidual
                if incoming.iter().all(|i| i.logit.is_none()) =>
            {
                Err(config_err!("{name} needs at least one logit link"))
            }
            _ => Ok(()),
        }
    }
}

/// Kahn's algorithm; ties resolve by declaration order.
fn topological_order(indegree: &[usize], successors: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indegree = indegree.to_vec();
    let mut ready: VecDeque<usize> = (0..indegree.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(i) = ready.pop_front() {
        order.push(i);
        let mut next: Vec<usize> = Vec::new();
        for &j in &successors[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                next.push(j);
            }
        }
        next.sort_unstable();
        ready.extend(next);
    }
    (order.len() == indegree.len()).then_some(order)
}

impl core::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            ModelMode::Nse => "nse",
            ModelMode::Esmm => "esmm",
            ModelMode::ResFlow => "resflow",
        })
    }
}

impl core::str::FromStr for ModelMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nse" => Ok(ModelMode::Nse),
            "esmm" => Ok(ModelMode::Esmm),
            "resflow" => Ok(ModelMode::ResFlow),
            other => Err(config_err!("unknown mode `{other}` (expected nse, esmm or resflow)")),
        }
    }
}

impl LinkPreset {
    pub fn name(&self) -> String {
        match self {
            LinkPreset::Full => "full".to_string(),
            LinkPreset::Hidden(d) => format!("h{d}"),
            LinkPreset::FeatureOnly => "features".to_string(),
            LinkPreset::LogitOnly => "logit".to_string(),
            LinkPreset::None => "none".to_string(),
        }
    }
}

impl core::str::FromStr for LinkPreset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "full" => Ok(LinkPreset::Full),
            "features" => Ok(LinkPreset::FeatureOnly),
            "logit" => Ok(LinkPreset::LogitOnly),
            "none" => Ok(LinkPreset::None),
            _ => s
                .strip_prefix('h')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|&d| d > 0)
                .map(LinkPreset::Hidden)
                .ok_or_else(|| {
                    config_err!("unknown link preset `{s}` (expected full, h<depth>, features, logit or none)")
                }),
        }
    }
}
