mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seminj::{CheckpointError, ConfigError};

/// Semantic erasure and injection on the initial noise of a toy flow model.
///
/// Exit codes: 0 success, 1 a verification check failed, 2 usage,
/// configuration or file-format error, 3 numeric failure (non-finite state
/// or diverged training).
#[derive(Debug, Parser)]
#[command(name = "seminj", version)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed [default: config `seed`, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root for run directories [default: config `out_dir`, else "runs"].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy velocity network on the seed banks; writes a checkpoint and loss log.
    Train(TrainArgs),
    /// Standard sampling from one seed's noise; writes the Heun trajectory.
    Sample(SampleArgs),
    /// Erase n seeded draws into one standard-normal latent.
    Erase(EraseArgs),
    /// Erase, then blend in the model's aggregated velocity (no sampling).
    Inject(PipelineArgs),
    /// Erase, inject and sample end to end.
    Pipeline(PipelineArgs),
    /// Run the analytic and numerical verification checks.
    Verify(VerifyArgs),
    /// Run the four-condition protocol over a grid of n_erase, delta and center.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// [default: 2000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 3e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size, 0 for full batch [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Network width [default: 64].
    #[arg(long)]
    pub width: Option<usize>,
    /// `add` or `subtract`, recorded in the checkpoint [default: add].
    #[arg(long)]
    pub convention: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target shape: circle, ellipse or spiral [default: circle].
    #[arg(long, alias = "shape")]
    pub condition: Option<String>,
    /// Seed-embedding slot [default: 0].
    #[arg(long)]
    pub slot: Option<usize>,
    /// Heun steps [default: 15].
    #[arg(long)]
    pub heun_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Points per set [default: 24].
    #[arg(long)]
    pub n_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EraseArgs {
    /// [default: 1]
    #[arg(long)]
    pub n_erase: Option<usize>,
    /// Explicit seeds; otherwise derived from the master seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Points per set [default: 24].
    #[arg(long)]
    pub n_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub erase: EraseArgs,
    /// Timesteps in the weight schedule [default: 1].
    #[arg(long)]
    pub k_steps: Option<usize>,
    /// Injection strength [default: 0].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Vertex of the power weight curve in model time [default: 1000].
    #[arg(long)]
    pub center: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only these checks (repeatable): nln, correlation, tpw, claim1,
    /// snr, time-shift, heun, gradient, degeneracy, cost.
    #[arg(long)]
    pub check: Vec<String>,
    /// Print the JSON summary instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Shapes to evaluate (repeatable) [default: all three].
    #[arg(long)]
    pub shape: Vec<String>,
    /// n_erase grid [default: config `sweep.n_erase`].
    #[arg(long, value_delimiter = ',')]
    pub n_erase: Vec<usize>,
    /// delta grid [default: config `sweep.delta`, else `protocol.delta`].
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// center grid [default: config `sweep.center`, else `protocol.center`].
    #[arg(long, value_delimiter = ',')]
    pub center: Vec<f64>,
    /// Repeats per condition [default: 20].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Worker threads for sweep cells [default: available cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Signals that verification ran but at least one check failed.
#[derive(Debug, thiserror::Error)]
#[error("{failed} of {total} checks failed")]
pub struct ChecksFailed {
    pub failed: usize,
    pub total: usize,
}

fn is_numeric(e: &seminj_core::Error) -> bool {
    use seminj_core::Error as E;
    match e {
        E::NonFinite { .. } | E::TrainingDiverged { .. } => true,
        E::Staged { source, .. } => is_numeric(source),
        _ => false,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ChecksFailed>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<seminj_core::Error>() {
            return if is_numeric(e) { 3 } else { 2 };
        }
        if let Some(ConfigError::Core(e)) = cause.downcast_ref::<ConfigError>() {
            return if is_numeric(e) { 3 } else { 2 };
        }
        if let Some(CheckpointError::Core(e)) = cause.downcast_ref::<CheckpointError>() {
            return if is_numeric(e) { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&ChecksFailed { failed: 1, total: 3 }.into()), 1);
        let staged = seminj_core::Error::Staged {
            stage: seminj_core::Stage::Generate,
            source: Box::new(seminj_core::Error::NonFinite { step: 2 }),
        };
        assert_eq!(exit_code(&staged.into()), 3);
        assert_eq!(exit_code(&seminj_core::Error::InvalidParameter("x".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 2);
    }
}
