use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "evmlp", version, about = "Patch-local MLP with event-driven incremental inference")]
pub struct Cli {
    /// Worker threads for patch-parallel work (default: all cores).
    #[arg(long, global = true, env = "EVMLP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one image and print the top-k classes.
    Classify(ClassifyArgs),
    /// Run a frame sequence with or without event-driven updates.
    Video(VideoArgs),
    /// Run a sequence at several thresholds against a tau = 0 ground truth.
    Sweep(SweepArgs),
    /// Print analytic MAC and parameter counts.
    Macs(MacsArgs),
    /// Render event-map overlays for consecutive frame pairs.
    Eventmap(EventmapArgs),
    /// Train on a labeled image tree or the built-in separable toy set.
    Train(TrainArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic PNG frame sequence.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Weight container; without it the network is randomly initialized.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for random initialization when no weights are given.
    #[arg(long, default_value_t = 0, conflicts_with = "weights")]
    pub init_seed: u64,
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    /// Directory of PNG / PPM frames, processed in bytewise name order.
    #[arg(long, conflicts_with = "raw", required_unless_present = "raw")]
    pub frames: Option<PathBuf>,
    /// Headerless RGB8 stream; needs --width and --height.
    #[arg(long, requires_all = ["width", "height"])]
    pub raw: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub topk: u64,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub source: FramesArgs,
    #[arg(long, default_value_t = 0.0, value_parser = parse_tau)]
    pub tau: f64,
    /// Full forward pass on every frame.
    #[arg(long, conflicts_with = "tau")]
    pub no_events: bool,
    #[arg(long)]
    pub report: PathBuf,
    /// A previous tau = 0 report whose top-1 labels are the ground truth.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub source: FramesArgs,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_tau)]
    pub taus: Vec<f64>,
    /// CSV with columns tau,mean_macs,reduction,match_rate.
    #[arg(long)]
    pub csv: PathBuf,
    /// Combined JSON report of every run.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MacsArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also write the breakdown as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EventmapArgs {
    #[arg(long)]
    pub frames: PathBuf,
    /// One or more comma-separated thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0", value_parser = parse_tau)]
    pub tau: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub patch: usize,
    /// Output directory; receives one subdirectory per tau and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Image tree `<dir>/<class>/<image>`; omitted means the built-in toy set.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Samples per class of the built-in toy set.
    #[arg(long, default_value_t = 32)]
    pub toy_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 5)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out_weights: PathBuf,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// static, perturbed, stationary or moving.
    #[arg(long)]
    pub kind: evmlp::synth::SequenceKind,
    #[arg(long, default_value_t = 224)]
    pub side: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Intensity change of the stationary region.
    #[arg(long, default_value_t = 0.5)]
    pub magnitude: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("threshold must be a finite number >= 0, got {s}"))
    }
}
