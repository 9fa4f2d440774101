//! Command-line entry point for the medication-recommendation pipeline.
//!
//! Exit codes: 0 success, 2 input error, 3 integrity error, 4 domain error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnmdr_core::commands::{self, SweepAxis};
use dnmdr_core::run::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "dnmdr",
    about = "Dynamic-network medication recommendation: data preparation, training, evaluation and inspection",
    version
)]
struct Cli {
    /// Run configuration (TOML). Required by most commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; all artifacts are written beneath it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the decision threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,

    /// Override the interaction-loss weight.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Override the embedding dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,

    /// Ablation variant: full, prob, lstm, internal, interactive, dynn.
    #[arg(long, global = true)]
    ablation: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies, matrices, statistics and molecule graphs.
    Prepare,
    /// Train; keeps the best-validation checkpoint.
    Train {
        /// Continue from a previous checkpoint (epoch numbering continues).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[arg(long, default_value = "out/checkpoint.json")]
        checkpoint: PathBuf,
    },
    /// Train and evaluate all component-removal variants plus the full model.
    Ablate,
    /// Rank medications for one patient's history file.
    Recommend {
        #[arg(long, default_value = "out/checkpoint.json")]
        checkpoint: PathBuf,
        /// Visit file describing exactly one patient.
        #[arg(long)]
        patient: PathBuf,
    },
    /// Grid sweep over one axis: dim, gamma or visits.
    Sweep {
        #[arg(long)]
        axis: String,
    },
    /// Dump per-patient snapshot graphs as structured text.
    DumpGraphs,
    /// Dump the molecular and fused drug-memory rows.
    DumpDrugMemory {
        #[arg(long, default_value = "out/checkpoint.json")]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli) -> dnmdr_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        threshold: cli.threshold,
        gamma: cli.gamma,
        dim: cli.dim,
        ablation: cli.ablation.clone(),
    })?;
    Ok(cfg)
}

fn run(cli: &Cli) -> dnmdr_core::Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Prepare => {
            let manifest = commands::cmd_prepare(&cfg, out)?;
            println!(
                "prepared {} patients / {} visits; vocab sizes {:?}; {} interaction pairs marked",
                manifest.patients, manifest.visits, manifest.vocab_sizes, manifest.ddi_pairs_marked
            );
            if manifest.missing_molecules > 0 {
                eprintln!(
                    "warning: {} medications have no molecule; the shared fallback row will be used",
                    manifest.missing_molecules
                );
            }
            println!("bundle: {}", commands::bundle_path(out).display());
        }
        Command::Train { resume } => {
            let summary = commands::cmd_train(&cfg, out, resume.as_deref())?;
            for log in &summary.logs {
                println!(
                    "epoch {:>3}  bce {:.5}  multi {:.5}  ddi {:.5}  total {:.5}  ({:.1}s)",
                    log.epoch, log.l_bce, log.l_multi, log.l_ddi, log.total, log.wall_secs
                );
            }
            println!(
                "best validation jaccard {:.4} at epoch {} (variant {})",
                summary.best_val_jaccard, summary.best_epoch, summary.variant
            );
            println!("checkpoint: {}", commands::checkpoint_path(out).display());
        }
        Command::Evaluate { checkpoint } => {
            let report = commands::cmd_evaluate(&cfg, out, checkpoint)?;
            println!("{}", report.summary_line());
            println!("report: {}", commands::metrics_path(out).display());
        }
        Command::Ablate => {
            let report = commands::cmd_ablate(&cfg, out)?;
            for row in &report.rows {
                println!("{:<12} {}", row.variant, row.report.summary_line());
            }
            println!("report: {}", out.join("ablation.json").display());
        }
        Command::Recommend { checkpoint, patient } => {
            let rec = commands::cmd_recommend(&cfg, out, checkpoint, patient)?;
            println!("{}", rec.formatted());
        }
        Command::Sweep { axis } => {
            let axis: SweepAxis = axis.parse()?;
            let report = commands::cmd_sweep(&cfg, out, axis)?;
            for row in &report.rows {
                println!("{:<12} {}", row.label, row.report.summary_line());
            }
            println!("report: {}", out.join("sweep.json").display());
        }
        Command::DumpGraphs => {
            let n = commands::cmd_dump_graphs(&cfg, out)?;
            println!("wrote {n} graph dumps under {}", out.join("graphs").display());
        }
        Command::DumpDrugMemory { checkpoint } => {
            let path = commands::cmd_dump_drug_memory(&cfg, out, checkpoint)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
