//! `outfit-rank`: synthesize data, train, evaluate, rank, explain and
//! gradient-check from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "outfit-rank", version, about = "Personalized top/bottom compatibility ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted truth.
    Gen(GenArgs),
    /// Train a model; flags override the config file, which overrides defaults.
    Train(TrainArgs),
    /// AUC and MRR on the test split, with baselines.
    Eval(EvalArgs),
    /// Rank candidate bottoms for one (user, top) query.
    Rank(RankArgs),
    /// Attribute importances and correlations for one user.
    Explain(ExplainArgs),
    /// Finite-difference check of the fused model's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    tops: usize,
    #[arg(long)]
    bottoms: usize,
    /// Outfits per user.
    #[arg(long)]
    outfits: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    noise: Option<f64>,
    /// Share of each user's outfits kept for training.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Generator settings as TOML; the count flags above still win.
    #[arg(long)]
    spec: Option<PathBuf>,
}

/// Where a dataset lives: `schema.json` and `items.jsonl` plus the train and
/// test user files written by `gen`.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    train_users: Option<PathBuf>,
    #[arg(long)]
    test_users: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Full,
    VisualOnly,
    TextOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The full-size network.
    Standard,
    /// A small network for single-core runs.
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    negatives_per_positive: Option<usize>,
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Trained model; without it only baselines are evaluated.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate this baseline only.
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Candidate pool size T for MRR.
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    /// Negatives sampled per test outfit for AUC.
    #[arg(long, default_value_t = 1)]
    negatives: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    PopT,
    PopU,
    Rand,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long)]
    top: String,
    /// Rows printed; every bottom is ranked and saved.
    #[arg(long, default_value_t = 10)]
    limit: usize,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    user: String,
    /// Focal top for the correlation matrix; defaults to the user's first.
    #[arg(long)]
    top: Option<String>,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, default_value_t = 10)]
    min_samples_split: usize,
    /// Highest-ranked bottoms whose elements form the columns.
    #[arg(long, default_value_t = 10)]
    bottoms: usize,
    #[arg(long, default_value_t = 6)]
    top_k: usize,
    #[arg(long, default_value_t = 3)]
    bottom_k: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    instances: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Also write `gradcheck.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rank(a) => commands::rank(a),
        Command::Explain(a) => commands::explain(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let class = commands::error_class(&e);
            eprintln!("error[{class}]: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(if class == "config" { 2 } else { 1 })
        }
    }
}
