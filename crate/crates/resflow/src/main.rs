use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resflow::commands::{self, DumpArgs, EvalSplit, EvaluateArgs, FamilyChoice, FuseArgs};
use resflow::config::{parse_k_list, Overrides};
use resflow::report::read_predictions;
use resflow::{CliError, CliResult};
use resflow_core::data::FunnelConfig;

/// Multi-task ranking with inter-task residual links.
#[derive(Debug, Parser)]
#[command(name = "resflow", version)]
struct Cli {
    /// Seed for initialization, shuffling, dropout and data generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

/// Comma-separated K values, e.g. `10,50,100`.
#[derive(Debug, Clone)]
struct KList(Vec<usize>);

fn k_list(s: &str) -> Result<KList, String> {
    parse_k_list(s).map(KList)
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn f64_list(s: &str) -> Result<Grid, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid number `{}`", p.trim())))
        .collect::<Result<_, _>>()
        .map(Grid)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and report metrics on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["nse", "esmm", "resflow"])]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = k_list)]
        k: Option<KList>,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest; defaults to the one recorded at train time.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
        #[arg(long, value_parser = k_list)]
        k: Option<KList>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search score fusion weights over a prediction dump.
    FuseSearch {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value = "add")]
        family: FamilyChoice,
        #[arg(long, value_parser = k_list, default_value = "10")]
        k: KList,
        #[arg(long, value_parser = f64_list)]
        alphas: Option<Grid>,
        #[arg(long, value_parser = f64_list)]
        betas: Option<Grid>,
        /// Write the tables here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of analytic gradients on random models.
    Gradcheck {
        #[arg(long, default_value_t = 55)]
        instances: usize,
        /// Perturb one analytic gradient (negative control).
        #[arg(long)]
        corrupt: bool,
    },
    /// Write a synthetic click/order funnel dataset with a manifest.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        users: usize,
        #[arg(long, default_value_t = 10_000)]
        items: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        list_len: usize,
        #[arg(long, default_value_t = 0.08)]
        ctr: f64,
        #[arg(long, default_value_t = 0.026)]
        cvr: f64,
    },
    /// Print source, residual and sum at every residual link.
    DumpActivations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        limit: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, mode, epochs, out, k } => {
            let overrides = Overrides { seed: cli.seed, mode, epochs, out, k: k.map(|k| k.0) };
            let outcome = commands::train(&config, &overrides)?;
            print!("{}", outcome.report.to_json());
            eprintln!("wrote {}", outcome.out_dir.display());
        }
        Command::Evaluate { checkpoint, data, split, k, out } => {
            let report = commands::evaluate(&EvaluateArgs { checkpoint, data, split, k: k.map(|k| k.0), out })?;
            print!("{}", report.to_json());
        }
        Command::FuseSearch { predictions, family, k, alphas, betas, out } => {
            let lists = read_predictions(&predictions)?;
            let mut text = String::new();
            for &k in &k.0 {
                let args = FuseArgs {
                    family,
                    k,
                    alphas: alphas.as_ref().map(|g| g.0.clone()),
                    betas: betas.as_ref().map(|g| g.0.clone()),
                };
                let results = commands::fuse_search(&lists, &args)?;
                for r in &results {
                    text.push_str(&commands::format_grid(r, k));
                }
            }
            emit(out.as_ref(), &text)?;
        }
        Command::Gradcheck { instances, corrupt } => {
            let report = commands::gradcheck(cli.seed.unwrap_or(0), instances, corrupt)?;
            print!("{}", commands::format_gradcheck(&report));
            if !report.passed() {
                return Err(CliError::Gradcheck(format!(
                    "{} of {} gradients out of tolerance",
                    report.total.failures, report.total.checked
                )));
            }
        }
        Command::GenerateSynthetic { out, users, items, samples, list_len, ctr, cvr } => {
            let config = FunnelConfig::new(cli.seed.unwrap_or(0), users, items, ctr, cvr)
                .with_samples(samples)
                .with_list_len(list_len);
            let manifest = commands::generate_synthetic(&config, &out)?;
            println!("{}", manifest.display());
        }
        Command::DumpActivations { checkpoint, data, limit, out } => {
            let text = commands::dump_activations(&DumpArgs { checkpoint, data, limit })?;
            emit(out.as_ref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
