//! Command-line front end: corpus synthesis, experiment grids,
//! checkpoint evaluation and the artefact gallery.
//!
//! Exit codes: 0 on full success, 1 on configuration errors, 2 when
//! some experiment cells failed but the run completed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metaqc::error::Error;
use metaqc::experiment::{
    builtin_table1, eval_checkpoint, gallery, run_experiments, synth_corpus, ExperimentSpec,
};

#[derive(Parser)]
#[command(name = "metaqc", version, about = "K-space artefact synthesis and few-shot artefact detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Seed override (replaces the configured seed list / corpus seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel sections (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus on disk and print per-class counts.
    Synth {
        /// Experiment config (TOML) or a builtin name such as "table1".
        #[arg(long)]
        config: Option<String>,
        /// Output corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the default config as TOML and exit.
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run an experiment grid (modes x budgets x seeds) and write CSVs.
    Run {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate a checkpoint on a stored corpus' test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory written by `synth`.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Write a clean/degraded image pair per artefact class.
    Gallery {
        #[arg(long)]
        out: PathBuf,
        /// Rendered image size (power of two, >= 32).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("built without the 'parallel' feature; --threads {threads} is ignored");
    }
}

/// Resolve `--config` to one or more experiment specs. A value naming
/// an existing file wins; otherwise builtin names are recognised.
fn load_specs(config: &Option<String>, seed: Option<u64>) -> Result<Vec<ExperimentSpec>, Error> {
    let mut specs = match config.as_deref() {
        None => vec![ExperimentSpec::default()],
        Some(value) => {
            let path = Path::new(value);
            if path.exists() {
                vec![ExperimentSpec::from_path(path)?]
            } else if value == "table1" {
                builtin_table1()
            } else {
                return Err(Error::config(format!(
                    "config '{value}' is neither a file nor a builtin (builtins: table1)"
                )));
            }
        }
    };
    if let Some(seed) = seed {
        for spec in &mut specs {
            spec.seeds = vec![seed];
            spec.corpus.rng_seed = seed;
        }
    }
    for spec in &specs {
        spec.validate()?;
    }
    Ok(specs)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Param(_) => ExitCode::from(1),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Synth { config, out, print_config, common } => {
            if print_config {
                print!("{}", ExperimentSpec::default().to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            init_threads(common.threads);
            let specs = load_specs(&config, common.seed)?;
            let out = out.ok_or_else(|| Error::config("synth needs --out <dir>"))?;
            if specs.len() != 1 {
                return Err(Error::config("synth expects a single-experiment config"));
            }
            let counts = synth_corpus(&specs[0], &out)?;
            for (class, count) in counts {
                println!("{class}: {count}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, out, print_config, common } => {
            if print_config {
                print!("{}", ExperimentSpec::default().to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            init_threads(common.threads);
            let specs = load_specs(&config, common.seed)?;
            let out = out.ok_or_else(|| Error::config("run needs --out <dir>"))?;
            std::fs::create_dir_all(&out)?;
            let summary = run_experiments(&specs, &out)?;
            let ok = summary.records.iter().filter(|r| r.ok()).count();
            println!("{ok}/{} cells succeeded; reports in {}", summary.records.len(), out.display());
            for record in summary.records.iter().filter(|r| !r.ok()) {
                eprintln!(
                    "cell {} {} b{} s{}: {}",
                    record.experiment, record.mode, record.budget, record.seed, record.status
                );
            }
            Ok(if summary.any_failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Eval { checkpoint, corpus, common } => {
            init_threads(common.threads);
            let (weighted, macro_avg) = eval_checkpoint(&checkpoint, &corpus)?;
            println!(
                "weighted: accuracy {:.4} precision {:.4} recall {:.4} f_measure {:.4}",
                weighted.accuracy, weighted.precision, weighted.recall, weighted.f_measure
            );
            println!(
                "macro:    accuracy {:.4} precision {:.4} recall {:.4} f_measure {:.4}",
                macro_avg.accuracy, macro_avg.precision, macro_avg.recall, macro_avg.f_measure
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gallery { out, size, common } => {
            init_threads(common.threads);
            let seed = common.seed.unwrap_or(7);
            let files = gallery(&out, seed, size)?;
            for f in files {
                println!("{}", out.join(f).display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
