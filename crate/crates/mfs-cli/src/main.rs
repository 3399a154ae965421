//! `mfs` command line: phantom generation, training, evaluation, the
//! architecture/loss ablation, the missing-modality study, dosimetric
//! comparison, and the loss-weight grid search.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfs_cli::config::ExperimentSpec;
use mfs_cli::data::Dataset;
use mfs_cli::error::CliError;
use mfs_cli::evalrun::{records_csv, run_eval, Modalities};
use mfs_cli::experiments;
use mfs_cli::report::{write_json, write_text};
use mfs_cli::trainrun::{run_training, ArmConfig};
use mfs_phantom::{PhantomConfig, Split};

#[derive(Parser)]
#[command(
    name = "mfs",
    about = "Multimodal fusion segmentation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment config JSON (model/loss/train/manifest/out_dir/seeds).
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force single-worker ordered sample preparation.
    #[arg(long)]
    deterministic: bool,
    /// Run independent experiment arms concurrently.
    #[arg(long)]
    parallel: bool,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec, CliError> {
        let mut spec = ExperimentSpec::load(&self.config)?;
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
            spec.train.seed = seed;
        }
        if let Some(out) = &self.out {
            spec.out_dir = out.clone();
        }
        if self.deterministic {
            spec.train.deterministic = true;
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (cases + manifest) on disk.
    PhantomGen {
        /// Phantom config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of cases.
        #[arg(long)]
        n: usize,
        /// Base seed; case i uses base_seed + i.
        #[arg(long)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Train split fraction (floor goes to train).
        #[arg(long, default_value_t = 0.75)]
        train_fraction: f64,
    },
    /// Train one model per the experiment config.
    Train(SpecArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root (directory with manifest.json).
        #[arg(long)]
        manifest: PathBuf,
        /// Input condition: ct+mri or ct.
        #[arg(long, default_value = "ct+mri")]
        modalities: String,
        #[arg(long)]
        out: PathBuf,
        /// Row tag for the metrics CSV.
        #[arg(long, default_value = "model")]
        tag: String,
    },
    /// Train and evaluate the four architecture/loss configurations.
    Ablation(SpecArgs),
    /// Train MRICT / MoDO / CT-only models and evaluate the five
    /// (model, input) arms.
    ModalityStudy(SpecArgs),
    /// Compare predicted-contour dose statistics against clean contours.
    DoseEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "ct+mri")]
        modalities: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep loss weights; trains one model per grid point.
    Gridsearch {
        #[command(flatten)]
        spec: SpecArgs,
        /// Comma-separated muscle-weight grid, e.g. 0,0.05,0.1.
        #[arg(long)]
        wm_grid: String,
        /// Comma-separated bone-weight grid, e.g. 0,0.01.
        #[arg(long)]
        wb_grid: String,
    },
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad grid value {v:?}: {e}")))
        })
        .collect()
}

fn run() -> Result<(), CliError> {
    init_worker_pool()?;
    let cli = Cli::parse();
    match cli.command {
        Command::PhantomGen {
            config,
            n,
            seed,
            out,
            train_fraction,
        } => {
            let cfg = match config {
                Some(path) => {
                    let bytes = std::fs::read(&path).map_err(|e| {
                        CliError::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    serde_json::from_slice::<PhantomConfig>(&bytes)?
                }
                None => PhantomConfig::with_seed(seed),
            };
            let summary = experiments::phantom_gen(&cfg, n, seed, train_fraction, &out)?;
            println!("wrote {} cases under {}", summary.n_cases, out.display());
            println!("id split seed contamination offset_mm");
            for row in &summary.rows {
                println!(
                    "{} {:?} {} {:.3} [{}, {}, {}]",
                    row.id,
                    row.split,
                    row.seed,
                    row.contamination,
                    row.offset_mm[0],
                    row.offset_mm[1],
                    row.offset_mm[2]
                );
            }
        }
        Command::Train(args) => {
            let spec = args.load()?;
            let dataset = Dataset::load(&spec.manifest)?;
            let cases = dataset.train_cases()?;
            let mut train = spec.train;
            train.seed = spec.seeds[0];
            let arm = ArmConfig {
                tag: spec.name.clone(),
                model: spec.model,
                loss: spec.loss,
                train,
            };
            let (_, _, result) = run_training(&arm, &cases, &spec.out_dir)?;
            let last = result.trace.last().expect("nonempty trace");
            println!(
                "trained {} for {} steps; final loss {:.6} (checkpoint + loss trace under {})",
                spec.name,
                result.trace.len(),
                last.total,
                spec.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            modalities,
            out,
            tag,
        } => {
            let modalities: Modalities = modalities
                .parse()
                .map_err(CliError::Config)?;
            let (model, params, header) = mfs_nn::checkpoint::load(&checkpoint)?;
            let dataset = Dataset::load(&manifest)?;
            let cases = dataset.eval_cases(Split::Test)?;
            let (records, summary) =
                run_eval(&model, &params, &header.clahe, &cases, modalities, &tag)?;
            write_text(&out.join("metrics.csv"), &records_csv(&records))?;
            write_json(&out.join("summary.json"), &summary)?;
            for m in &summary.metrics {
                println!(
                    "{}: mean {:.3} sd {:.3} (n={})",
                    m.metric, m.mean, m.sd, m.n
                );
            }
            if summary.empty_predictions > 0 {
                eprintln!(
                    "warning: {} case(s) with empty predictions excluded from surface/dose aggregates",
                    summary.empty_predictions
                );
            }
        }
        Command::Ablation(args) => {
            let parallel = args.parallel;
            let spec = args.load()?;
            let report = experiments::ablation(&spec, parallel)?;
            println!("config seed dsc_mean");
            for arm in &report.arms {
                let dsc = arm
                    .summary
                    .metrics
                    .iter()
                    .find(|m| m.metric == "dsc_pct")
                    .map(|m| m.mean)
                    .unwrap_or(f64::NAN);
                println!("{} {} {:.2}", arm.config_tag, arm.seed, dsc);
            }
            for t in &report.ttests {
                println!(
                    "paired t ({} vs {}): t={:.3} p={:.5}",
                    experiments::PROPOSED_TAG,
                    t.versus,
                    t.t,
                    t.p
                );
            }
        }
        Command::ModalityStudy(args) => {
            let parallel = args.parallel;
            let spec = args.load()?;
            let report = experiments::modality_study(&spec, parallel)?;
            println!("model input dsc_mean");
            for arm in &report.arms {
                let dsc = arm
                    .summary
                    .metrics
                    .iter()
                    .find(|m| m.metric == "dsc_pct")
                    .map(|m| m.mean)
                    .unwrap_or(f64::NAN);
                println!("{} {} {:.2}", arm.model_tag, arm.input_modalities, dsc);
            }
        }
        Command::DoseEval {
            checkpoint,
            manifest,
            modalities,
            out,
        } => {
            let modalities: Modalities = modalities
                .parse()
                .map_err(CliError::Config)?;
            let (model, params, header) = mfs_nn::checkpoint::load(&checkpoint)?;
            let dataset = Dataset::load(&manifest)?;
            let cases = dataset.eval_cases(Split::Test)?;
            let report =
                experiments::dose_eval(&model, &params, &header.clahe, &cases, modalities, &out)?;
            println!(
                "{} cases compared; {} excluded (empty predictions)",
                report.rows.len(),
                report.excluded_cases.len()
            );
            if let (Some(t), Some(p)) = (report.dmean_t, report.dmean_p) {
                println!("paired t on Dmean: t={t:.3} p={p:.5}");
            } else if let Some(note) = &report.t_test_note {
                println!("paired t on Dmean unavailable: {note}");
            }
        }
        Command::Gridsearch {
            spec: args,
            wm_grid,
            wb_grid,
        } => {
            let parallel = args.parallel;
            let spec = args.load()?;
            let wm = parse_grid(&wm_grid)?;
            let wb = parse_grid(&wb_grid)?;
            eprintln!(
                "gridsearch trains {} models; expect roughly that multiple of one training's wall time",
                wm.len() * wb.len()
            );
            let report = experiments::gridsearch(&spec, &wm, &wb, parallel)?;
            println!("w_m w_b dsc_mean");
            for row in &report.rows {
                println!("{} {} {:.2}", row.w_m, row.w_b, row.dsc_mean);
            }
            println!(
                "argmax: w_m={} w_b={} dsc={:.2}",
                report.argmax.w_m, report.argmax.w_b, report.argmax.dsc_mean
            );
        }
    }
    Ok(())
}

/// `MFS_NUM_WORKERS` bounds data-prep parallelism by sizing the global
/// worker pool.
fn init_worker_pool() -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("MFS_NUM_WORKERS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("MFS_NUM_WORKERS={v:?} is not a number")))?;
        if n == 0 {
            return Err(CliError::Config("MFS_NUM_WORKERS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
