//! Finite-difference checks of full models: embeddings, towers, residual
//! links, ESMM products and regularizers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{chain_edges, LinkPreset, ModelConfig, ModelMode, MultiTaskModel, Phase, Regularizer, TaskSpec, TowerSpec};
use crate::data::Sample;
use crate::embedding::{FieldSchema, FieldValue, Schema, TowerSide};
use crate::tensor::gradcheck::{finite_difference_check, GradcheckReport};
use crate::tensor::{Gradients, ParamStore};
use crate::{Error, Result};

/// Instances whose kinked ops sit closer than this to a kink are redrawn.
pub const MIN_KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 200;
const BATCH: usize = 5;

pub const VARIANTS: [&str; 11] = [
    "nse",
    "esmm",
    "esmm+features",
    "resflow",
    "resflow+m1",
    "resflow+m2",
    "resflow+m3",
    "resflow-3task+m3",
    "twin-after-dot",
    "twin-before-dot+m3",
    "regression",
];

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub variant: &'static str,
    pub parameters: usize,
    pub report: GradcheckReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteReport {
    pub instances: Vec<InstanceReport>,
    pub total: GradcheckReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.report.passed())
    }
}

fn variant_config(variant: &str) -> (ModelConfig, bool) {
    let tasks2 = ["ctr", "ctcvr"];
    let single = TowerSpec::single(&[3, 2, 1]);
    let twin = TowerSpec::twin(&[3, 2]);
    let chain = |tasks: &[&str], tower: TowerSpec, preset| ModelConfig::chain(tasks, tower, preset);
    let cfg = match variant {
        "nse" => chain(&tasks2, single, LinkPreset::Full).with_mode(ModelMode::Nse),
        "esmm" => chain(&tasks2, single, LinkPreset::None).with_mode(ModelMode::Esmm),
        "esmm+features" => chain(&tasks2, single, LinkPreset::FeatureOnly).with_mode(ModelMode::Esmm),
        "resflow" => chain(&tasks2, single, LinkPreset::Full),
        "resflow+m1" => chain(&tasks2, single, LinkPreset::Full).with_regularizer(Regularizer::ProbabilityPenalty(0.7)),
        "resflow+m2" => chain(&tasks2, single, LinkPreset::Full).with_regularizer(Regularizer::LogitPenalty(0.3)),
        "resflow+m3" => chain(&tasks2, single, LinkPreset::Full).with_regularizer(Regularizer::NonPositiveResidual),
        "resflow-3task+m3" => chain(&["click", "atc", "order"], TowerSpec::single(&[2, 2, 1]), LinkPreset::Full)
            .with_regularizer(Regularizer::NonPositiveResidual),
        "twin-after-dot" => chain(&tasks2, twin, LinkPreset::Full),
        "twin-before-dot+m3" => {
            let mut c = chain(&tasks2, twin, LinkPreset::Full).with_regularizer(Regularizer::NonPositiveResidual);
            // Move the final link from after to before the dot product on a
            // second task pair, keeping one logit link for the mandate.
            c.tasks.push(TaskSpec::binary("order"));
            c.edges[0].logit = false;
            c.edges[0].depths = vec![1, 2];
            c.edges.extend(chain_edges(&["ctcvr", "order"], LinkPreset::LogitOnly, &c.tower));
            c
        }
        "regression" => {
            let mut c = chain(&["rating"], TowerSpec::single(&[3, 2, 1]), LinkPreset::None).with_mode(ModelMode::Nse);
            c.tasks[0] = TaskSpec::regression("rating");
            c
        }
        other => panic!("unknown gradcheck variant {other}"),
    };
    let twin = cfg.tower.layout == super::TowerLayout::Twin;
    (ModelConfig { embedding_dim: 2, ..cfg }, twin)
}

fn random_instance(variant: &str, rng: &mut ChaCha8Rng) -> Result<(MultiTaskModel, Vec<Sample>, Vec<String>)> {
    let (mut config, twin) = variant_config(variant);
    for t in &mut config.tasks {
        t.pos_weight = rng.random_range(1.0..3.0);
        t.loss_weight = rng.random_range(0.5..1.5);
    }
    let item_side = if twin { TowerSide::Item } else { TowerSide::Query };
    let schema = Schema::new(vec![
        FieldSchema::single("user"),
        FieldSchema::single("item").on_side(item_side),
        FieldSchema::multi("tags").on_side(item_side),
    ])?;
    let labels: Vec<String> = config.tasks.iter().map(|t| t.label.clone()).collect();
    let samples: Vec<Sample> = (0..BATCH)
        .map(|_| {
            let n_tags = rng.random_range(0..3);
            Sample {
                features: vec![
                    FieldValue::Single(rng.random_range(0..3)),
                    FieldValue::Single(rng.random_range(0..3)),
                    FieldValue::Multi((0..n_tags).map(|_| rng.random_range(0..3)).collect()),
                ],
                labels: labels.iter().map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
                target: Some(rng.random_range(1.0..5.0)),
                ..Sample::default()
            }
        })
        .collect();
    let model = MultiTaskModel::new(config, &schema, &samples, rng.random())?;
    Ok((model, samples, labels))
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.9..0.9);
        }
    }
}

fn loss_at(
    model: &MultiTaskModel,
    store: &ParamStore,
    samples: &[&Sample],
    columns: &[Option<usize>],
) -> Result<(f64, f64)> {
    let mut graph = model.forward_with(store, samples, Phase::Eval)?;
    let loss = model.joint_loss(&mut graph, samples, columns)?;
    Ok((graph.tape.value(loss.total).item().unwrap_or(f64::NAN), graph.tape.kink_margin()))
}

/// Checks one random instance of `variant`. With `corrupt`, a wrong value is
/// injected into the analytic gradient (negative control).
pub fn check_instance(variant: &'static str, seed: u64, corrupt: bool) -> Result<InstanceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, samples, labels) = random_instance(variant, &mut rng)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let columns = model.label_columns(&labels)?;
    let mut store = model.store().clone();
    let mut redraws = 0;
    loop {
        randomize(&mut store, &mut rng);
        if loss_at(&model, &store, &refs, &columns)?.1 >= MIN_KINK_MARGIN {
            break;
        }
        redraws += 1;
        if redraws == MAX_REDRAWS {
            return Err(Error::Usage(format!("{variant}: no instance away from kinks after {MAX_REDRAWS} draws")));
        }
    }
    let mut graph = model.forward_with(&store, &refs, Phase::Eval)?;
    let loss = model.joint_loss(&mut graph, &refs, &columns)?;
    let mut grads = Gradients::zeros_like(&store);
    graph.tape.backward(loss.total, &mut grads)?;
    if corrupt {
        let last = store.ids().last().expect("models have parameters");
        grads.get_mut(last).data_mut()[0] += 0.5;
    }
    let report =
        finite_difference_check(&mut store, &grads, |s| loss_at(&model, s, &refs, &columns).map_or(f64::NAN, |l| l.0));
    Ok(InstanceReport { variant, parameters: store.scalar_count(), report })
}

/// `instances` random models cycling through [`VARIANTS`].
pub fn run_suite(seed: u64, instances: usize, corrupt: bool) -> Result<SuiteReport> {
    let mut suite = SuiteReport::default();
    for i in 0..instances {
        let variant = VARIANTS[i % VARIANTS.len()];
        let r = check_instance(variant, seed.wrapping_mul(1_000_003).wrapping_add(i as u64), corrupt)?;
        suite.total.merge(&r.report);
        suite.instances.push(r);
    }
    Ok(suite)
}
