//! The subcommands, as library functions returning their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use resflow_core::data::{generate_funnel, split_by_time, Dataset, FunnelConfig, SplitSpec};
use resflow_core::fusion::{grid_search, FusionFamily, GridResult, GridSpec, ScoredItem};
use resflow_core::model::gradcheck::{run_suite, SuiteReport};
use resflow_core::model::{LinkSite, LossRecord, MultiTaskModel, TaskKind};
use resflow_core::progressive::attach_ladder_labels;

use crate::checkpoint::Checkpoint;
use crate::config::{self, HeadKind, Overrides, RegressionHead, RunConfig};
use crate::dataset::{self, Bucketizers};
use crate::error::{CliError, CliResult};
use crate::report::{build_report, scored_lists, write_loss_trace, write_predictions, MetricReport};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const LOSS_FILE: &str = "loss.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";

/// Loads a dataset and adds the ladder labels a progressive head trains on.
pub fn prepare_dataset(
    manifest: &Path,
    bucketizers: Option<&Bucketizers>,
    head: Option<&RegressionHead>,
) -> CliResult<(Dataset, Bucketizers)> {
    let (mut data, fitted) = dataset::load(manifest, bucketizers)?;
    if let Some(RegressionHead { kind: HeadKind::Progressive, ladder }) = head {
        attach_ladder_labels(&mut data, ladder)?;
    }
    if head.is_some() {
        if let Some(i) = data.samples.iter().position(|s| s.target.is_none()) {
            return Err(CliError::Data(format!("sample {i} has no regression target")));
        }
    }
    Ok((data, fitted))
}

fn split(data: &Dataset, spec: SplitSpec) -> CliResult<(Dataset, Dataset)> {
    let (train, test) = split_by_time(data.samples.clone(), spec)?;
    Ok((data.with_samples(train), data.with_samples(test)))
}

fn task_kinds(model: &MultiTaskModel) -> Vec<(String, String, TaskKind)> {
    model.config().tasks.iter().map(|t| (t.name.clone(), t.label.clone(), t.kind)).collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Artifacts of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricReport,
    pub trace: Vec<LossRecord>,
    pub out_dir: PathBuf,
}

/// Trains on the train split and reports on the test split, writing the
/// checkpoint, report, loss trace and (for list data) test predictions.
pub fn train(config_path: &Path, overrides: &Overrides) -> CliResult<TrainOutcome> {
    let cfg = config::load(config_path, overrides)?;
    train_with(&cfg, config_path)
}

pub fn train_with(cfg: &RunConfig, config_path: &Path) -> CliResult<TrainOutcome> {
    let (data, bucketizers) = prepare_dataset(&cfg.manifest, None, cfg.regression.as_ref())?;
    cfg.check_labels(config_path, &data.label_names)?;
    let (train_set, test_set) = split(&data, cfg.split)?;
    info!("{} train / {} test samples", train_set.len(), test_set.len());
    let mut model = MultiTaskModel::new(cfg.model.clone(), &data.schema, &train_set.samples, cfg.seed)?;
    info!("{} parameters", model.parameter_count());
    let trace = model.train(&train_set, &cfg.train)?;
    let preds = model.predict_dataset(&test_set)?;
    let report = build_report("test", &test_set, &preds, &task_kinds(&model), cfg.regression.as_ref(), &cfg.eval)?;

    create_dir(&cfg.out_dir)?;
    let checkpoint = Checkpoint {
        model,
        seed: cfg.seed,
        data_manifest: Some(cfg.manifest.clone()),
        split: cfg.split,
        head: cfg.regression.clone(),
        eval: cfg.eval.clone(),
        bucketizers,
    };
    checkpoint.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    report.write(&cfg.out_dir.join(REPORT_FILE))?;
    let names: Vec<String> = cfg.model.tasks.iter().map(|t| t.name.clone()).collect();
    write_loss_trace(&cfg.out_dir.join(LOSS_FILE), &names, &trace)?;
    if let Some(lists) = scored_lists(&test_set, &preds, &cfg.eval) {
        write_predictions(&cfg.out_dir.join(PREDICTIONS_FILE), &lists)?;
    }
    Ok(TrainOutcome { checkpoint, report, trace, out_dir: cfg.out_dir.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// The held-out split recorded in the checkpoint.
    Test,
    All,
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    /// Defaults to the manifest recorded at train time.
    pub data: Option<PathBuf>,
    pub split: EvalSplit,
    pub k: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<MetricReport> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let manifest = args
        .data
        .clone()
        .or_else(|| ckpt.data_manifest.clone())
        .ok_or_else(|| CliError::Usage("no dataset given and none recorded in the checkpoint".into()))?;
    let (data, _) = prepare_dataset(&manifest, Some(&ckpt.bucketizers), ckpt.head.as_ref())?;
    let schema_names: Vec<&str> = data.schema.fields().iter().map(|f| f.name.as_str()).collect();
    let model_names: Vec<&str> = ckpt.model.schema().fields().iter().map(|f| f.name.as_str()).collect();
    if schema_names != model_names {
        return Err(CliError::Checkpoint {
            path: args.checkpoint.clone(),
            message: format!(
                "checkpoint (version {}) expects fields {model_names:?}, dataset has {schema_names:?}",
                crate::checkpoint::VERSION
            ),
        });
    }
    let (name, eval_set) = match args.split {
        EvalSplit::All => ("all", data),
        EvalSplit::Test => ("test", split(&data, ckpt.split)?.1),
    };
    let mut eval = ckpt.eval.clone();
    if let Some(k) = &args.k {
        eval.k = k.clone();
    }
    let preds = ckpt.model.predict_dataset(&eval_set)?;
    let report = build_report(name, &eval_set, &preds, &task_kinds(&ckpt.model), ckpt.head.as_ref(), &eval)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        report.write(&out.join(REPORT_FILE))?;
        if let Some(lists) = scored_lists(&eval_set, &preds, &eval) {
            write_predictions(&out.join(PREDICTIONS_FILE), &lists)?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyChoice {
    Add,
    Mul,
    Both,
}

#[derive(Debug, Clone)]
pub struct FuseArgs {
    pub family: FamilyChoice,
    pub k: usize,
    /// Replace the default α / β grids.
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
}

pub fn fuse_search(lists: &[Vec<ScoredItem>], args: &FuseArgs) -> CliResult<Vec<GridResult>> {
    let families = match args.family {
        FamilyChoice::Add => vec![FusionFamily::Additive],
        FamilyChoice::Mul => vec![FusionFamily::Multiplicative],
        FamilyChoice::Both => vec![FusionFamily::Additive, FusionFamily::Multiplicative],
    };
    families
        .into_iter()
        .map(|family| {
            let mut grid = match family {
                FusionFamily::Additive => GridSpec::default_additive(args.k),
                FusionFamily::Multiplicative => GridSpec::default_multiplicative(args.k),
            };
            if let Some(a) = &args.alphas {
                grid.alphas = a.clone();
            }
            if let Some(b) = &args.betas {
                grid.betas = b.clone();
            }
            grid_search(&grid, lists).map_err(CliError::from)
        })
        .collect()
}

fn family_name(f: FusionFamily) -> &'static str {
    match f {
        FusionFamily::Additive => "additive",
        FusionFamily::Multiplicative => "multiplicative",
    }
}

/// Full table sorted by metric descending (ties by smaller α, β), then the winner.
pub fn format_grid(result: &GridResult, k: usize) -> String {
    let mut rows = result.table.clone();
    rows.sort_by(|a, b| {
        b.metric
            .total_cmp(&a.metric)
            .then(a.formula.alpha.total_cmp(&b.formula.alpha))
            .then(a.formula.beta.total_cmp(&b.formula.beta))
    });
    let family = family_name(result.best.formula.family);
    let mut out = format!("# {family}\nalpha\tbeta\twr@{k}\n");
    for r in &rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}", r.formula.alpha, r.formula.beta, r.metric);
    }
    let b = &result.best;
    let _ = writeln!(out, "best {family}: alpha={} beta={} wr@{k}={:.6}", b.formula.alpha, b.formula.beta, b.metric);
    out
}

pub fn gradcheck(seed: u64, instances: usize, corrupt: bool) -> CliResult<SuiteReport> {
    Ok(run_suite(seed, instances, corrupt)?)
}

pub fn format_gradcheck(report: &SuiteReport) -> String {
    let mut out = String::from("variant\tparameters\tchecked\tworst_rel\tworst_abs\tfailures\n");
    for (i, inst) in report.instances.iter().enumerate() {
        let r = &inst.report;
        let _ = writeln!(
            out,
            "{i}:{}\t{}\t{}\t{:.3e}\t{:.3e}\t{}",
            inst.variant, inst.parameters, r.checked, r.worst_relative, r.worst_absolute, r.failures
        );
    }
    let t = &report.total;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let _ = writeln!(
        out,
        "{verdict}: {} instances, {} gradients, worst relative error {:.3e}, {} failures",
        report.instances.len(),
        t.checked,
        t.worst_relative,
        t.failures
    );
    out
}

pub fn generate_synthetic(config: &FunnelConfig, out: &Path) -> CliResult<PathBuf> {
    let data = generate_funnel(config)?;
    dataset::write_delimited(&data, out, "samples.tsv")
}

#[derive(Debug, Clone)]
pub struct DumpArgs {
    pub checkpoint: PathBuf,
    pub data: Option<PathBuf>,
    pub limit: usize,
}

/// Link activations of the first `limit` samples as TSV rows.
pub fn dump_activations(args: &DumpArgs) -> CliResult<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let manifest = args
        .data
        .clone()
        .or_else(|| ckpt.data_manifest.clone())
        .ok_or_else(|| CliError::Usage("no dataset given and none recorded in the checkpoint".into()))?;
    let (data, _) = prepare_dataset(&manifest, Some(&ckpt.bucketizers), ckpt.head.as_ref())?;
    let samples: Vec<_> = data.samples.into_iter().take(args.limit).collect();
    let links = ckpt.model.dump_activations(&samples)?;
    let mut out = String::from("src\tdst\tsite\tsample\tunit\tsource\tresidual\tsum\n");
    for link in &links {
        let site = match link.site {
            LinkSite::Depth { depth, side } => format!("h{depth}.{}", format!("{side:?}").to_lowercase()),
            LinkSite::Logit => "logit".to_string(),
        };
        for s in 0..link.source.rows() {
            for u in 0..link.source.cols() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{site}\t{s}\t{u}\t{:?}\t{:?}\t{:?}",
                    link.src,
                    link.dst,
                    link.source.get(s, u),
                    link.residual.get(s, u),
                    link.sum.get(s, u)
                );
            }
        }
    }
    Ok(out)
}
