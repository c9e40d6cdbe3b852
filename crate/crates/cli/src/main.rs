use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dtsc_cli::{
    cmd_ablate, cmd_compare, cmd_generate, cmd_plot, cmd_train, parse_seeds, write_comparison, CliError,
    ExperimentConfig, OUT_ROOT_ENV,
};
use dtsc_core::trainer::Variant;

#[derive(Parser)]
#[command(
    name = "dtsc",
    version,
    about = "Dual-teacher semi-supervised training on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Replicate seed; sets the dataset, split and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, env = OUT_ROOT_ENV)]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV.
    Generate {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run and write metrics, summary and checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// baseline | pure_mt | scmt | dtsc | upper_bound
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        export_similarity: bool,
        #[arg(long)]
        export_scatter: bool,
    },
    /// Run all five presets on one dataset and split.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run arms over several seeds and report paired t-tests.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Seeds as `0,1,2` or `0..10`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        /// Comma-separated arms.
        #[arg(long, default_value = "baseline,pure_mt,scmt,dtsc,upper_bound")]
        arms: String,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Redraw SVGs from the CSV exports of a run directory.
    Plot {
        /// Run directory.
        dir: PathBuf,
    },
    /// Print the default experiment config.
    Defaults,
}

fn load(run: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load_or_default(run.config.as_deref())?;
    if let Some(s) = run.seed {
        cfg = cfg.reseeded(s);
    }
    if let Some(out) = &run.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    let dir = cfg.output_dir(run.out_root.as_deref());
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg = cfg.reseeded(s);
            }
            println!("{}", cmd_generate(&cfg, &out)?);
        }
        Command::Train {
            run,
            preset,
            export_similarity,
            export_scatter,
        } => {
            let (mut cfg, dir) = load(&run)?;
            if let Some(p) = preset {
                cfg.train.variant = Variant::from_name(&p)?;
            }
            cfg.output.export_similarity |= export_similarity;
            cfg.output.export_scatter |= export_scatter;
            let cfg = cfg.effective();
            let r = cmd_train(&cfg, &dir)?;
            println!(
                "{}: test accuracy {:.4}, macro F1 {:.4} -> {}",
                cfg.train.variant,
                r.result.test_report.accuracy,
                r.result.test_report.macro_f1,
                dir.display()
            );
        }
        Command::Ablate { run } => {
            let (cfg, dir) = load(&run)?;
            for r in cmd_ablate(&cfg, &dir)? {
                println!(
                    "{:<12} accuracy {:.4} macro_f1 {:.4}",
                    r.arm.name(),
                    r.accuracy,
                    r.macro_f1
                );
            }
        }
        Command::Compare { run, seeds, arms, jobs } => {
            let (cfg, dir) = load(&run)?;
            let seeds = parse_seeds(&seeds)?;
            let arms = arms
                .split(',')
                .map(|a| Variant::from_name(a.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let cmp = pool.install(|| cmd_compare(&cfg, &seeds, &arms))?;
            write_comparison(&cmp, &dir)?;
            print!("{}", cmp.report());
        }
        Command::Plot { dir } => {
            for p in cmd_plot(Path::new(&dir))? {
                println!("wrote {}", p.display());
            }
        }
        Command::Defaults => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
