//! `idswap`: generate synthetic data, train, swap faces, evaluate and run
//! preset comparisons.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! command fails at run time.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "idswap",
    version,
    about = "Identity-injection face swapping on the CPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural face dataset (PNG images, manifest and specs).
    GenData(GenDataArgs),
    /// Pretrain the identity embedder, then train generator and discriminators.
    Train(TrainArgs),
    /// Put the identity of --source onto --target with a trained checkpoint.
    Swap(SwapArgs),
    /// Score checkpoints (or external embedding files) and write a metrics table.
    Evaluate(EvaluateArgs),
    /// Train and evaluate several presets with the same seed and budget.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic identities.
    #[arg(long, default_value_t = 8)]
    identities: usize,
    /// Training images per identity.
    #[arg(long, default_value_t = 500)]
    per_identity: usize,
    /// Held-out samples per identity (stored as specs, rendered on demand).
    #[arg(long, default_value_t = 50)]
    held_out: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Per-key overrides of the training config; they win over --config and --preset.
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    /// Identity loss weight.
    #[arg(long = "lambda_id", value_name = "F")]
    lambda_id: Option<String>,
    /// Reconstruction loss weight.
    #[arg(long = "lambda_recon", value_name = "F")]
    lambda_recon: Option<String>,
    /// Gradient penalty weight (discriminator objective).
    #[arg(long = "lambda_gp", value_name = "F")]
    lambda_gp: Option<String>,
    /// Feature matching weight.
    #[arg(long = "lambda_fm", value_name = "F")]
    lambda_fm: Option<String>,
    /// Generator adversarial weight.
    #[arg(long = "lambda_adv", value_name = "F")]
    lambda_adv: Option<String>,
    /// Feature matching variant: wFM, oFM, nFM or wFM_bar.
    #[arg(long = "fm_variant", value_name = "KIND")]
    fm_variant: Option<String>,
    /// First discriminator layer of wFM (last excluded layer + 1 for wFM_bar).
    #[arg(long = "fm_start_layer", value_name = "M")]
    fm_start_layer: Option<String>,
    /// Number of identity-injection blocks.
    #[arg(long = "n_id_blocks", value_name = "N")]
    n_id_blocks: Option<String>,
    /// Number of discriminator scales.
    #[arg(long = "n_discriminators", value_name = "N")]
    n_discriminators: Option<String>,
    #[arg(long = "adam_beta1", value_name = "F")]
    adam_beta1: Option<String>,
    #[arg(long = "adam_beta2", value_name = "F")]
    adam_beta2: Option<String>,
    #[arg(long = "learning_rate", value_name = "F")]
    learning_rate: Option<String>,
    #[arg(long = "batch_size", value_name = "N")]
    batch_size: Option<String>,
    /// Training image side length.
    #[arg(long = "image_size", value_name = "N")]
    image_size: Option<String>,
    #[arg(long = "seed", value_name = "N")]
    seed: Option<String>,
    /// Identity vector dimension.
    #[arg(long = "id_dim", value_name = "N")]
    id_dim: Option<String>,
    /// Total training steps.
    #[arg(long = "steps", value_name = "N")]
    steps: Option<String>,
    /// Checkpoint period in steps (0 disables).
    #[arg(long = "checkpoint_every", value_name = "N")]
    checkpoint_every: Option<String>,
    /// Embedder pretraining epochs.
    #[arg(long = "embedder_epochs", value_name = "N")]
    embedder_epochs: Option<String>,
}

impl ConfigOverrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("lambda_id", &self.lambda_id),
            ("lambda_recon", &self.lambda_recon),
            ("lambda_gp", &self.lambda_gp),
            ("lambda_fm", &self.lambda_fm),
            ("lambda_adv", &self.lambda_adv),
            ("fm_variant", &self.fm_variant),
            ("fm_start_layer", &self.fm_start_layer),
            ("n_id_blocks", &self.n_id_blocks),
            ("n_discriminators", &self.n_discriminators),
            ("adam_beta1", &self.adam_beta1),
            ("adam_beta2", &self.adam_beta2),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("image_size", &self.image_size),
            ("seed", &self.seed),
            ("id_dim", &self.id_dim),
            ("steps", &self.steps),
            ("checkpoint_every", &self.checkpoint_every),
            ("embedder_epochs", &self.embedder_epochs),
        ]
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// Dataset directory from `gen-data`, or an image folder with one
    /// subfolder per identity.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the log, checkpoints and config echo.
    #[arg(long)]
    out: PathBuf,
    /// TOML config file; keys it omits keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied on top of --config.
    #[arg(long)]
    preset: Option<String>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Skip folder images smaller than this on either side.
    #[arg(long, default_value_t = 0)]
    min_size: u32,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
struct SwapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image providing the identity.
    #[arg(long)]
    source: PathBuf,
    /// Image providing pose, expression, lighting and background.
    #[arg(long)]
    target: PathBuf,
    /// Output image path (format from the extension).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint directories to score, one row each.
    #[arg(long, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Dataset directory from `gen-data`; a default one is synthesized from
    /// the checkpoint seed when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for the report (JSON plus a text table).
    #[arg(long)]
    out: PathBuf,
    /// Pairs per metric.
    #[arg(long, default_value_t = 200)]
    n_pairs: usize,
    /// Embedding file of generated faces (record ids `<identity>/<name>`);
    /// with --gallery-embeddings, scores retrieval without checkpoints.
    #[arg(long, requires = "gallery_embeddings")]
    generated_embeddings: Option<PathBuf>,
    #[arg(long, requires = "generated_embeddings")]
    gallery_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct AblateArgs {
    /// Comma-separated presets, e.g. oFM,SimSwap,nFM.
    #[arg(long, value_delimiter = ',', required = true)]
    presets: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    n_pairs: usize,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Swap(a) => commands::swap(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
