use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "nsedit", version, about = "Null-space editing of fused tracker weights")]
pub struct Cli {
    /// Worker threads for parallel stages (0 picks one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render one synthetic sequence to GTED feature files plus gt.csv.
    Simulate(RunArgs),
    /// Track every configured sequence in every mode and write reports.
    Track(TrackArgs),
    /// Estimate a null-space projector from GTED feature files.
    Project(ProjectArgs),
    /// Time projector estimation at several channel counts.
    Bench(BenchArgs),
    /// Check the numerical invariants on seeded inputs.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `study.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated subset of semantic_only,naive_fusion,nullspace_edit.
    #[arg(long)]
    pub modes: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Glob of `[C, H, W]` GTED files whose columns are stacked.
    #[arg(long)]
    pub features: String,
    /// Fixed ridge; without it the ridge is 1e-4 of the mean diagonal.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-2, allow_negative_numbers = true)]
    pub eps_rel: f64,
    #[arg(long, default_value_t = 1e-10, allow_negative_numbers = true)]
    pub eps_abs: f64,
    /// Destination GTED file for the `[C, C]` projector.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
