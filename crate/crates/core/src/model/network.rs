use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelMode, Plan, Regularizer, TaskKind, TowerLayout};
use crate::data::{Dataset, Sample};
use crate::embedding::{EmbeddingTable, FieldEmbeddings, Schema, TowerSide};
use crate::error::{config_err, data_err};
use crate::tensor::{dropout, Activation, DenseLayer, GradientTape, Matrix, ParamStore, Var, PROB_EPS};
use crate::{Error, Result};

const EMBEDDING_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PREDICT_BATCH: usize = 2048;

/// Whether dropout is active.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq)]
struct Tower {
    query: Vec<DenseLayer>,
    /// Empty for single towers.
    item: Vec<DenseLayer>,
}

/// Per-depth values of one (half-)tower.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfTrace {
    /// Own block outputs f^l(o^{l−1}), after dropout.
    pub blocks: Vec<Var>,
    /// o^l: block output plus the linked source output where a link exists.
    pub outputs: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTrace {
    /// Output of the task's own final block (the inner product for twins).
    pub own_logit: Var,
    /// Residual logit before the non-positive mandate.
    pub raw_residual: Option<Var>,
    /// Residual logit actually added to the source logit.
    pub residual: Option<Var>,
    pub logit: Var,
    /// Probability for binary tasks, the prediction for regression tasks.
    pub prob: Var,
    pub query: HalfTrace,
    pub item: Option<HalfTrace>,
}

/// Recorded forward pass of a batch.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub tape: GradientTape,
    /// Indexed like the config's task list.
    pub tasks: Vec<TaskTrace>,
}

impl ForwardGraph {
    pub fn values(&self, v: Var) -> &Matrix {
        self.tape.value(v)
    }
}

/// Scalar loss node plus its unweighted per-task terms.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub total: Var,
    /// Σ_i loss of each task (before ω); zero for tasks with ω = 0.
    pub per_task: Vec<f64>,
    pub regularizer: f64,
}

/// Model outputs over a sample set, `values[task][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub tasks: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn task(&self, name: &str) -> Option<&[f64]> {
        self.tasks.iter().position(|t| t == name).map(|i| self.values[i].as_slice())
    }
}

/// Where a dumped residual link sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkSite {
    Depth { depth: usize, side: TowerSide },
    Logit,
}

/// Source output, residual and sum at one link for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkActivations {
    pub src: String,
    pub dst: String,
    pub site: LinkSite,
    pub source: Matrix,
    pub residual: Matrix,
    pub sum: Matrix,
}

/// Task towers over one shared embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel {
    config: ModelConfig,
    plan: Plan,
    schema: Schema,
    store: ParamStore,
    embeddings: EmbeddingTable,
    towers: Vec<Tower>,
    query_fields: Vec<usize>,
    item_fields: Vec<usize>,
}

fn build_half(
    store: &mut ParamStore,
    name: &str,
    in_width: usize,
    widths: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut prev = in_width;
    for (l, &w) in widths.iter().enumerate() {
        let act = if l + 1 == widths.len() { Activation::Identity } else { Activation::Prelu };
        layers.push(DenseLayer::new(store, &format!("{name}.l{}", l + 1), prev, w, act, rng)?);
        prev = w;
    }
    Ok(layers)
}

impl MultiTaskModel {
    /// Builds the vocabulary from `vocab_samples` and initializes all
    /// parameters from `seed`.
    pub fn new(config: ModelConfig, schema: &Schema, vocab_samples: &[Sample], seed: u64) -> Result<Self> {
        let plan = config.plan()?;
        for (i, s) in vocab_samples.iter().enumerate() {
            schema.check(s).map_err(|e| Error::Schema(format!("sample {i}: {e}")))?;
        }
        let mut store = ParamStore::new();
        let embeddings = EmbeddingTable::build_vocab(
            schema,
            vocab_samples,
            config.min_count,
            config.embedding_dim,
            &mut store,
            seed ^ EMBEDDING_SEED_SALT,
        )?;
        Self::assemble(config, plan, schema, store, embeddings, seed)
    }

    fn assemble(
        config: ModelConfig,
        plan: Plan,
        schema: &Schema,
        mut store: ParamStore,
        embeddings: EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        let d = config.embedding_dim;
        let (query_fields, item_fields) = match config.tower.layout {
            TowerLayout::Single => ((0..schema.len()).collect(), Vec::new()),
            TowerLayout::Twin => (schema.side_indices(TowerSide::Query), schema.side_indices(TowerSide::Item)),
        };
        if query_fields.is_empty() {
            return Err(config_err!("the schema has no fields for the model input"));
        }
        if config.tower.layout == TowerLayout::Twin && item_fields.is_empty() {
            return Err(config_err!("twin towers need at least one item-side field"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut towers = Vec::with_capacity(config.tasks.len());
        for task in &config.tasks {
            let tower = match config.tower.layout {
                TowerLayout::Single => Tower {
                    query: build_half(
                        &mut store,
                        &format!("tower.{}", task.name),
                        query_fields.len() * d,
                        &config.tower.widths,
                        &mut rng,
                    )?,
                    item: Vec::new(),
                },
                TowerLayout::Twin => Tower {
                    query: build_half(
                        &mut store,
                        &format!("tower.{}.query", task.name),
                        query_fields.len() * d,
                        &config.tower.widths,
                        &mut rng,
                    )?,
                    item: build_half(
                        &mut store,
                        &format!("tower.{}.item", task.name),
                        item_fields.len() * d,
                        &config.tower.widths,
                        &mut rng,
                    )?,
                },
            };
            towers.push(tower);
        }
        Ok(Self { config, plan, schema: schema.clone(), store, embeddings, towers, query_fields, item_fields })
    }

    /// Rebuilds a model from saved tower parameters and embedding tables.
    pub fn from_parts(
        config: ModelConfig,
        schema: &Schema,
        tower_params: &[(String, Matrix)],
        embeddings: &[FieldEmbeddings],
    ) -> Result<Self> {
        let plan = config.plan()?;
        let mut store = ParamStore::new();
        let table = EmbeddingTable::import(schema, config.embedding_dim, config.min_count, &mut store, embeddings, 0)?;
        let mut model = Self::assemble(config, plan, schema, store, table, 0)?;
        let expected = model.tower_parameters().len();
        if tower_params.len() != expected {
            return Err(Error::Schema(format!("expected {expected} tower parameters, found {}", tower_params.len())));
        }
        for (name, value) in tower_params {
            let id = model
                .store
                .id(name)
                .filter(|_| !name.starts_with("embedding."))
                .ok_or_else(|| Error::Schema(format!("parameter `{name}` does not belong to this model")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::Schema(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn export_embeddings(&self) -> Vec<FieldEmbeddings> {
        self.embeddings.export(&self.store)
    }

    /// Every non-embedding parameter, in registration (layer) order.
    pub fn tower_parameters(&self) -> Vec<(String, Matrix)> {
        let embedding: Vec<_> = (0..self.embeddings.field_count()).map(|f| self.embeddings.param(f)).collect();
        self.store
            .iter()
            .filter(|(id, _, _)| !embedding.contains(id))
            .map(|(_, name, m)| (String::from(name), m.clone()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Task positions in evaluation order.
    pub fn evaluation_order(&self) -> &[usize] {
        &self.plan.order
    }

    fn run_half(
        &self,
        tape: &mut GradientTape,
        store: &ParamStore,
        layers: &[DenseLayer],
        input: Var,
        sources: &[Option<Var>],
        phase: &mut Phase<'_>,
    ) -> Result<HalfTrace> {
        let hidden = self.config.tower.hidden();
        let mut h = input;
        let mut blocks = Vec::with_capacity(layers.len());
        let mut outputs = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let mut z = layer.forward(tape, store, h)?;
            if l < hidden {
                let rate = self.config.tower.dropout[l];
                z = match phase {
                    Phase::Train(rng) => dropout(tape, z, rate, Some(&mut **rng))?,
                    Phase::Eval => z,
                };
            }
            let o = match sources.get(l).copied().flatten() {
                Some(src) => tape.add(src, z)?,
                None => z,
            };
            blocks.push(z);
            outputs.push(o);
            h = o;
        }
        Ok(HalfTrace { blocks, outputs })
    }

    /// Forward pass over a batch with the model's own parameters.
    pub fn forward(&self, samples: &[&Sample], phase: Phase<'_>) -> Result<ForwardGraph> {
        self.forward_with(&self.store, samples, phase)
    }

    /// Forward pass reading parameters from `store`, which must have this
    /// model's layout (used by finite-difference checks).
    pub fn forward_with(&self, store: &ParamStore, samples: &[&Sample], mut phase: Phase<'_>) -> Result<ForwardGraph> {
        if samples.is_empty() {
            return Err(Error::Usage("forward pass over an empty batch".into()));
        }
        let mut tape = GradientTape::new();
        let xq = self.embeddings.lookup(&mut tape, store, samples, &self.query_fields)?;
        let xi = if self.item_fields.is_empty() {
            None
        } else {
            Some(self.embeddings.lookup(&mut tape, store, samples, &self.item_fields)?)
        };
        let mandate = self.config.regularizer == Regularizer::NonPositiveResidual;
        let esmm = self.config.mode == ModelMode::Esmm;
        let mut traces: Vec<Option<TaskTrace>> = vec![None; self.config.tasks.len()];
        for &k in &self.plan.order {
            let inc = &self.plan.incoming[k];
            let trace_of = |s: usize| traces[s].as_ref().expect("sources precede their targets");
            let q_src: Vec<Option<Var>> =
                inc.feature.iter().enumerate().map(|(l, s)| s.map(|s| trace_of(s).query.outputs[l])).collect();
            let i_src: Vec<Option<Var>> = inc
                .feature
                .iter()
                .enumerate()
                .map(|(l, s)| s.and_then(|s| trace_of(s).item.as_ref().map(|h| h.outputs[l])))
                .collect();
            let logit_src = inc.logit.map(|s| trace_of(s).logit);
            let parent_prob = inc.parent.map(|s| trace_of(s).prob);

            let tower = &self.towers[k];
            let query = self.run_half(&mut tape, store, &tower.query, xq, &q_src, &mut phase)?;
            let (own_logit, item) = match xi {
                Some(xi) => {
                    let item = self.run_half(&mut tape, store, &tower.item, xi, &i_src, &mut phase)?;
                    let u = *query.outputs.last().expect("towers have at least one block");
                    let v = *item.outputs.last().expect("towers have at least one block");
                    (tape.row_dot(u, v)?, Some(item))
                }
                None => (*query.outputs.last().expect("towers have at least one block"), None),
            };
            let (logit, raw_residual, residual) = match logit_src {
                Some(src) => {
                    let r = if mandate { tape.min_zero(own_logit) } else { own_logit };
                    (tape.add(src, r)?, Some(own_logit), Some(r))
                }
                None => (own_logit, None, None),
            };
            let prob = match self.config.tasks[k].kind {
                TaskKind::Regression => logit,
                TaskKind::Binary if esmm => {
                    let s = tape.sigmoid(logit);
                    let stage = tape.clamp(s, PROB_EPS, 1.0 - PROB_EPS);
                    match parent_prob {
                        Some(p) => tape.mul(p, stage)?,
                        None => stage,
                    }
                }
                TaskKind::Binary => tape.sigmoid(logit),
            };
            traces[k] = Some(TaskTrace { own_logit, raw_residual, residual, logit, prob, query, item });
        }
        let tasks = traces.into_iter().map(|t| t.expect("every task is evaluated")).collect();
        Ok(ForwardGraph { tape, tasks })
    }

    /// Label column of each task in `label_names`; `None` for regression
    /// tasks and for tasks with zero loss weight whose column is absent.
    pub fn label_columns(&self, label_names: &[String]) -> Result<Vec<Option<usize>>> {
        self.config
            .tasks
            .iter()
            .map(|t| {
                let col = label_names.iter().position(|n| *n == t.label);
                match t.kind {
                    TaskKind::Regression => Ok(None),
                    TaskKind::Binary if col.is_none() && t.loss_weight > 0.0 => {
                        Err(data_err!("task `{}` needs label column `{}`, which the dataset lacks", t.name, t.label))
                    }
                    TaskKind::Binary => Ok(col),
                }
            })
            .collect()
    }

    /// Σ_k ω_k · Σ_i loss_k(i) plus the regularizer, recorded on the graph's tape.
    pub fn joint_loss(
        &self,
        graph: &mut ForwardGraph,
        samples: &[&Sample],
        columns: &[Option<usize>],
    ) -> Result<JointLoss> {
        let tape = &mut graph.tape;
        let esmm = self.config.mode == ModelMode::Esmm;
        let mut parts = Vec::new();
        let mut per_task = vec![0.0; self.config.tasks.len()];
        for (k, task) in self.config.tasks.iter().enumerate() {
            if task.loss_weight == 0.0 {
                continue;
            }
            let trace = &graph.tasks[k];
            let node = match task.kind {
                TaskKind::Binary => {
                    let col = columns[k].ok_or_else(|| data_err!("task `{}` has no label column", task.name))?;
                    let mut targets = Vec::with_capacity(samples.len());
                    let mut weights = Vec::with_capacity(samples.len());
                    for (i, s) in samples.iter().enumerate() {
                        let y = s.labels.get(col).copied().unwrap_or(f64::NAN);
                        if y.is_nan() {
                            return Err(data_err!("sample {i} has no `{}` label for task `{}`", task.label, task.name));
                        }
                        if y != 0.0 && y != 1.0 {
                            return Err(data_err!("sample {i}: label `{}` must be 0 or 1, got {y}", task.label));
                        }
                        targets.push(y);
                        weights.push(if y == 1.0 { task.pos_weight } else { task.neg_weight });
                    }
                    if esmm {
                        tape.bce_prob(trace.prob, targets, weights)?
                    } else {
                        tape.bce_with_logits(trace.logit, targets, weights)?
                    }
                }
                TaskKind::Regression => {
                    let targets = samples
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            s.target
                                .filter(|t| t.is_finite())
                                .ok_or_else(|| data_err!("sample {i} has no regression target"))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    tape.squared_error(trace.prob, targets, vec![1.0; samples.len()])?
                }
            };
            per_task[k] = tape.value(node).item().unwrap_or(f64::NAN);
            parts.push(tape.scale(node, task.loss_weight));
        }
        let mut reg_parts = Vec::new();
        match self.config.regularizer {
            Regularizer::ProbabilityPenalty(lambda) => {
                for &(src, dst) in &self.plan.pairs {
                    let diff = tape.sub(graph.tasks[dst].prob, graph.tasks[src].prob)?;
                    let h = tape.hinge_sum(diff);
                    reg_parts.push(tape.scale(h, lambda));
                }
            }
            Regularizer::LogitPenalty(lambda) => {
                for t in &graph.tasks {
                    if let Some(r) = t.raw_residual {
                        let h = tape.hinge_sum(r);
                        reg_parts.push(tape.scale(h, lambda));
                    }
                }
            }
            Regularizer::None | Regularizer::NonPositiveResidual => {}
        }
        let regularizer = reg_parts.iter().map(|&v| tape.value(v).item().unwrap_or(f64::NAN)).sum();
        parts.extend(reg_parts);
        let total = if parts.is_empty() { tape.constant(Matrix::scalar(0.0)) } else { tape.sum(&parts)? };
        Ok(JointLoss { total, per_task, regularizer })
    }

    /// Per-task probabilities (regression: predicted values), dropout off.
    pub fn predict(&self, samples: &[Sample]) -> Result<Predictions> {
        let n_tasks = self.config.tasks.len();
        let mut values: Vec<Vec<f64>> = (0..n_tasks).map(|_| Vec::with_capacity(samples.len())).collect();
        for chunk in samples.chunks(PREDICT_BATCH) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let graph = self.forward(&refs, Phase::Eval)?;
            for (k, t) in graph.tasks.iter().enumerate() {
                values[k].extend_from_slice(graph.tape.value(t.prob).data());
            }
        }
        Ok(Predictions { tasks: self.config.tasks.iter().map(|t| t.name.clone()).collect(), values })
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Predictions> {
        self.check_dataset(data)?;
        self.predict(&data.samples)
    }

    pub(crate) fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let ours: Vec<&str> = self.schema.fields().iter().map(|f| f.name.as_str()).collect();
        let theirs: Vec<&str> = data.schema.fields().iter().map(|f| f.name.as_str()).collect();
        if ours != theirs {
            return Err(Error::Schema(format!("dataset fields {theirs:?} do not match model fields {ours:?}")));
        }
        Ok(())
    }

    /// Source output, residual and sum at every active link, dropout off.
    pub fn dump_activations(&self, samples: &[Sample]) -> Result<Vec<LinkActivations>> {
        let refs: Vec<&Sample> = samples.iter().collect();
        let graph = self.forward(&refs, Phase::Eval)?;
        let value = |v: Var| graph.tape.value(v).clone();
        let name = |k: usize| self.config.tasks[k].name.clone();
        let mut out = Vec::new();
        for &k in &self.plan.order {
            let inc = &self.plan.incoming[k];
            let dst = &graph.tasks[k];
            for (l, src) in inc.feature.iter().enumerate() {
                let Some(s) = *src else { continue };
                let src_trace = &graph.tasks[s];
                let halves = [
                    (TowerSide::Query, Some(&src_trace.query), Some(&dst.query)),
                    (TowerSide::Item, src_trace.item.as_ref(), dst.item.as_ref()),
                ];
                for (side, sh, dh) in halves {
                    if let (Some(sh), Some(dh)) = (sh, dh) {
                        out.push(LinkActivations {
                            src: name(s),
                            dst: name(k),
                            site: LinkSite::Depth { depth: l + 1, side },
                            source: value(sh.outputs[l]),
                            residual: value(dh.blocks[l]),
                            sum: value(dh.outputs[l]),
                        });
                    }
                }
            }
            if let (Some(s), Some(r)) = (inc.logit, dst.residual) {
                out.push(LinkActivations {
                    src: name(s),
                    dst: name(k),
                    site: LinkSite::Logit,
                    source: value(graph.tasks[s].logit),
                    residual: value(r),
                    sum: value(dst.logit),
                });
            }
        }
        Ok(out)
    }
}
