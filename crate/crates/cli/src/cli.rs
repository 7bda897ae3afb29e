use std::path::{Path, PathBuf};

use allukan_core::model::preset;
use allukan_core::training::config::{parse_grad_mode, parse_resolution};
use allukan_core::training::{DataSource, RunConfig, METRICS_HEADER};
use clap::{Args, Parser, Subcommand};

use crate::audit::audit_params;
use crate::bench::{bench_chunks, DEFAULT_CHUNKS};
use crate::report::VerificationReport;
use crate::run::{create_dir, run_eval, run_train, write_file, CHECKPOINT_FILE};
use crate::verify::{gradscale, theorem1};
use crate::{CliError, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

pub const REPORT_FILE: &str = "verify_report.csv";
pub const BENCH_FILE: &str = "bench_chunks.csv";
pub const AUDIT_FILE: &str = "audit_params.csv";
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Debug, Parser)]
#[command(
    name = "allukan",
    version,
    about = "KA-based U-shaped segmentation: train, evaluate, benchmark and verify"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics.csv, checkpoint.sakn and run.cfg.
    Train(RunArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to load; defaults to <out>/checkpoint.sakn.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check weight gradients and the input-gradient split across gradient modes.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 2981)]
        seed: u64,
        /// Random layers per family.
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        layers: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare spline-path and residual-path input-gradient magnitudes.
    VerifyGradscale {
        /// Layer widths of the random KAN networks.
        #[arg(long, value_delimiter = ',', default_value = "4,128,128,1")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 2981)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Measure transient memory, saved activations and step time per chunk size.
    BenchChunks {
        #[arg(long, default_value = "all_ukan_desk")]
        preset: String,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CHUNKS)]
        chunks: Vec<usize>,
        /// Input resolution `N` or `HxW`; defaults to the preset's.
        #[arg(long)]
        resolution: Option<String>,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        steps: u64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        batch: u64,
        #[arg(long, default_value_t = 2981)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Per-layer parameter counts and ordering checks across presets.
    AuditParams {
        #[arg(long, default_value = "all_ukan")]
        preset: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model preset; see `audit-params` for the list.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// `key = value` run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds initialization, shuffling, synthetic data and the split.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub chunk: Option<u64>,
    /// `full` or `free`.
    #[arg(long)]
    pub grad_mode: Option<String>,
    /// `synth` or `folder:<path>` with `images/` and `masks/` inside.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Threads for batch assembly; compute stays on one thread.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
}

impl RunArgs {
    /// Config file or preset (default `all_ukan_desk`) with flag overrides.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::from_preset(name)?,
            (None, None) => RunConfig::from_preset("all_ukan_desk")?,
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e as usize;
        }
        if let Some(c) = self.chunk {
            cfg.model.chunk = c as usize;
        }
        if let Some(mode) = &self.grad_mode {
            cfg.model.grad_free = parse_grad_mode(mode)?;
        }
        if let Some(d) = &self.data {
            cfg.data.source = d.parse::<DataSource>()?;
        }
        if let Some(t) = self.threads {
            cfg.train.loader_threads = t as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish_report(report: &VerificationReport, out: &Path, file: &str) -> Result<i32, CliError> {
    create_dir(out)?;
    let path = out.join(file);
    report
        .write_csv(&path)
        .map_err(|e| CliError::io(&path, e))?;
    println!("{report}");
    println!("wrote {}", path.display());
    Ok(if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            println!("{METRICS_HEADER}");
            let outcome = run_train(&cfg, &args.out, |r| println!("{}", r.csv_row()))?;
            println!(
                "wrote {} and {}",
                args.out.join("metrics.csv").display(),
                outcome.checkpoint.display()
            );
            Ok(EXIT_OK)
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.resolve()?;
            let path = checkpoint.unwrap_or_else(|| run.out.join(CHECKPOINT_FILE));
            let e = run_eval(&cfg, &path)?;
            let text = format!(
                "split,loss,iou,f1\nval,{:.9},{:.9},{:.9}\n",
                e.loss, e.iou, e.f1
            );
            print!("{text}");
            create_dir(&run.out)?;
            write_file(&run.out.join(EVAL_FILE), &text)?;
            Ok(EXIT_OK)
        }
        Command::VerifyTheorem1 { seed, layers, out } => {
            finish_report(&theorem1(seed, layers as usize)?, &out, REPORT_FILE)
        }
        Command::VerifyGradscale {
            dims,
            trials,
            seed,
            out,
        } => {
            if dims.len() < 2 || dims.contains(&0) {
                return Err(CliError::Usage(
                    "--dims needs at least two positive widths".into(),
                ));
            }
            finish_report(
                &gradscale(&dims, trials as usize, seed)?.report,
                &out,
                REPORT_FILE,
            )
        }
        Command::BenchChunks {
            preset: name,
            chunks,
            resolution,
            steps,
            batch,
            seed,
            out,
        } => {
            if chunks.is_empty() || chunks.contains(&0) {
                return Err(CliError::Usage("--chunks needs positive sizes".into()));
            }
            let mut cfg = preset(&name)?;
            if let Some(r) = resolution {
                cfg.resolution = parse_resolution(&r)?;
            }
            cfg.validate()?;
            let bench = bench_chunks(&cfg, &chunks, steps as usize, batch as usize, seed)?;
            create_dir(&out)?;
            write_file(&out.join(BENCH_FILE), &bench.to_csv())?;
            print!("{}", bench.to_csv());
            finish_report(&bench.report, &out, REPORT_FILE)
        }
        Command::AuditParams { preset: name, out } => {
            let audit = audit_params(&name, true)?;
            create_dir(&out)?;
            write_file(&out.join(AUDIT_FILE), &audit.to_csv())?;
            println!(
                "{name}: {} parameters in {} layers",
                audit.total,
                audit.plan.len()
            );
            finish_report(&audit.report, &out, REPORT_FILE)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    // Kernels stay on one thread so every run is reproducible.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
