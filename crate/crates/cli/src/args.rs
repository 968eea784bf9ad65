//! Command-line surface.
//!
//! Every parameter can come from a JSON config file (`--config`) or a flag;
//! flags win. Each command writes the fully resolved configuration next to
//! its outputs, and rerunning with only that snapshot reproduces the
//! artifacts byte for byte.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "lrvae",
    about = "Attribute-aligned representation learning: train, mask, evaluate",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic entangled-attribute dataset CSV.
    GenData(GenDataArgs),
    /// Train a model variant on a dataset CSV.
    Train(TrainArgs),
    /// Encode a dataset to latent embeddings, optionally masked.
    Encode(EncodeArgs),
    /// Train probes on embeddings and report weighted f-score and EER.
    Eval(EvalArgs),
    /// Multi-variant comparisons and masking curves.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// Train every variant over several seeds and tabulate all conditions.
    Compare(CompareArgs),
    /// Incremental group-masking curve for a trained model.
    Curve(CurveArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Rows to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub features: Option<usize>,
    /// Emotion classes.
    #[arg(long)]
    pub emotions: Option<usize>,
    /// Speakers.
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub emotion_strength: Option<f64>,
    #[arg(long)]
    pub identity_strength: Option<f64>,
    #[arg(long)]
    pub nuisance_dim: Option<usize>,
    #[arg(long)]
    pub cross_leak: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Encoder hidden widths, comma separated (e.g. 256,128).
    #[arg(long)]
    pub encoder_hidden: Option<String>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub lambda_emo_adv: Option<f64>,
    #[arg(long)]
    pub lambda_id_adv: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long)]
    pub p_min: Option<f64>,
    /// Schedule form: linear or exponential.
    #[arg(long)]
    pub schedule_form: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// L2 coefficient applied inside the objective.
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset CSV path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Variant: dnn, vae, a_vae_ser, a_vae_sv, lr_vae_no_adv, lr_vae.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint JSON path.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset CSV path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Mask: none, pp_ser, or pp_sv.
    #[arg(long)]
    pub mask: Option<String>,
    /// Fraction of latent nodes the mask keeps.
    #[arg(long)]
    pub cut: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ProbeFlags {
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_patience: Option<usize>,
    #[arg(long)]
    pub max_trials: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Embeddings CSV (dataset schema) path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub probe: ProbeFlags,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset CSV path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variant list.
    #[arg(long)]
    pub variants: Option<String>,
    /// Number of seeds (seed, seed+1, ...).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of latent nodes kept by the protection masks.
    #[arg(long)]
    pub mask_cut: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub probe: ProbeFlags,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint JSON path.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset CSV path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of latent groups; must divide the latent dimension.
    #[arg(long)]
    pub groups: Option<usize>,
    /// bottom_up (mask the identity end first) or top_down.
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub probe: ProbeFlags,
}
