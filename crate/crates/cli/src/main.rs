use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pothole_cli::pipeline::{self, report_table, summary_table};
use pothole_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "pothole", version, about = "Pothole heightfields, roll perturbations and roll-robust steering")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured run seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output root
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mesh every scan triplet to OBJ
    Reconstruct,
    /// Per-scan depth and gradient scalars plus the summary table
    Stats,
    /// Camera-roll angles from stats.csv
    Angles,
    /// Generate synthetic driving data (and scans, if configured)
    Synth,
    /// Roll-perturb the driving data
    Perturb,
    /// Pretrain the steering net, then train the denoiser
    Train,
    /// Score checkpoints; exit 1 if the denoiser misses the threshold
    Eval {
        /// Overrides eval.threshold
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rebuild mse.svg from report.csv
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.paths.output_root = o;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config(vec!["--jobs must be >= 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(vec![e.to_string()]))?;
    }
    match cli.command {
        Cmd::Reconstruct => {
            let logs = pipeline::cmd_reconstruct(&cfg)?;
            let off: usize = logs.iter().map(|l| l.off_curve_pixels).sum();
            println!("meshed {} scans into {}", logs.len(), cfg.out_path("meshes").display());
            if off > 0 {
                eprintln!("warning: {off} heatmap pixels were far from the jet curve");
            }
        }
        Cmd::Stats => {
            let (scalars, summary) = pipeline::cmd_stats(&cfg)?;
            println!("{} scans", scalars.len());
            print!("{}", summary_table(&summary));
        }
        Cmd::Angles => {
            let rows = pipeline::cmd_angles(&cfg)?;
            let mean = rows.iter().map(|r| r.theta2_deg).sum::<f64>() / rows.len().max(1) as f64;
            println!("{} angles, mean roll {mean:.4} deg", rows.len());
        }
        Cmd::Synth => {
            let s = pipeline::cmd_synth(&cfg)?;
            println!("{} train / {} val frames, {} scans", s.train, s.val, s.potholes);
        }
        Cmd::Perturb => {
            let m = pipeline::cmd_perturb(&cfg)?;
            println!("perturbed {} train / {} val frames", m[0].entries.len(), m[1].entries.len());
        }
        Cmd::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            print!("{}", report_table(&s.dae));
            println!(
                "clean mse {:.6}  perturbed {:.6}  denoised {:.6}",
                s.clean.mse, s.baseline.mse, s.denoised.mse
            );
        }
        Cmd::Eval { threshold } => {
            if let Some(t) = threshold {
                cfg.eval.threshold = t;
            }
            let o = pipeline::cmd_eval(&cfg)?;
            println!("clean     mse {:.6} ({:.3}%)", o.clean.mse, o.clean.percent);
            println!("perturbed mse {:.6} ({:.3}%)", o.baseline.mse, o.baseline.percent);
            println!("denoised  mse {:.6} ({:.3}%)", o.denoised.mse, o.denoised.percent);
            if !o.passed {
                return Err(CliError::Threshold {
                    ratio: o.ratio,
                    threshold: o.threshold,
                });
            }
            println!("ratio {:.4} <= {}", o.ratio, o.threshold);
        }
        Cmd::Report => {
            let r = pipeline::cmd_report(&cfg)?;
            print!("{}", report_table(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
