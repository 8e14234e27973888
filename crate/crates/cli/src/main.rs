use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use segquery_core::ChunkError;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "segquery",
    version,
    about = "Complex-query segmentation tooling"
)]
struct Cli {
    /// Seed for dataset building and the degraded oracle.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-image work and concurrent chunk requests.
    #[arg(long, global = true, default_value_t = 4, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build training samples as JSONL.
    BuildDataset(BuildArgs),
    /// Run chunked inference and write prediction JSONL.
    Infer(InferArgs),
    /// Parse {query, response} JSONL lines into reports.
    Parse(ParseArgs),
    /// Score predictions against the manifest's label maps.
    Eval(EvalArgs),
    /// Evaluate the reference loss on a fixture.
    Loss(LossArgs),
    /// Length and balance statistics of a training corpus.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    #[arg(long, default_value_t = 1)]
    pub per_image: usize,
    #[arg(long)]
    pub min_sample: Option<usize>,
    #[arg(long)]
    pub max_sample: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub no_order_consistent: bool,
    #[arg(long, conflicts_with_all = ["min_sample", "max_sample", "no_augment", "no_order_consistent"])]
    pub single_target: bool,
    #[arg(long, default_value_t = 0)]
    pub template: usize,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").args(["endpoint", "oracle", "oracle_drop"])))]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    /// Model server base URL (default: $SEGQUERY_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Answer from the label maps.
    #[arg(long)]
    pub oracle: bool,
    /// Oracle that omits each present class with this probability.
    #[arg(long, value_name = "P")]
    pub oracle_drop: Option<f64>,
    /// Permute the oracle's answer order.
    #[arg(long)]
    pub oracle_shuffle: bool,
    #[arg(long, default_value = "N")]
    pub chunk: segquery_core::ChunkSpec,
    #[arg(long, default_value_t = 0)]
    pub template: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    /// Defaults to stdin.
    #[arg(long)]
    pub input: Option<std::path::PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Miou,
    Ciou,
    Giou,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    #[arg(long)]
    pub pred: std::path::PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Miou)]
    pub metric: Metric,
    /// Comma-separated class ids (default: the whole table).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u16>>,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    #[arg(long)]
    pub fixture: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: std::path::PathBuf,
    #[arg(long)]
    pub corpus: std::path::PathBuf,
}

pub struct Global {
    pub seed: u64,
    pub jobs: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    let global = Global {
        seed: cli.seed,
        jobs: cli.jobs as usize,
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(global.jobs)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(&global, a),
        Command::Infer(a) => commands::infer(&global, a),
        Command::Parse(a) => commands::parse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Loss(a) => commands::loss(a),
        Command::Stats(a) => commands::stats(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            let transport = e.chain().any(|c| {
                c.downcast_ref::<ChunkError>()
                    .is_some_and(ChunkError::is_transport)
            });
            ExitCode::from(if transport { 2 } else { 1 })
        }
    }
}

/// `a: b: c`, skipping causes whose text the previous message already contains.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut prev = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !prev.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        prev = text;
    }
    out
}
