use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;
use serde_json::json;

use robustfair::dataset::{compute_stats, load_csv, synth_generate, write_csv, CsvSchema, Dataset, SynthParams};
use robustfair::harness::{evaluate_under_attack, fit_model, run_sweep, AttackScheme, ExperimentConfig, ModelKind};
use robustfair::objective::TradeoffConfig;
use robustfair::point_attack::{apply_point, best_point};
use robustfair::rankone_attack::{apply_rankone, best_rankone};
use robustfair::rankone_defense::{write_trace_csv, RankOneOptions};
use robustfair::{Error, Result};

#[derive(Parser)]
#[command(name = "robustfair", version, about = "Fair linear regression under worst-case poisoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Headered CSV with feature columns, a target column and a group column (1 or 2).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "target")]
    target_col: String,
    #[arg(long, default_value = "group")]
    group_col: String,
    /// Comma-separated feature columns; every other column when absent.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Standardize features to zero mean and unit variance.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema {
            target: self.target_col.clone(),
            group: self.group_col.clone(),
            features: self.features.clone(),
        };
        let ds = load_csv(&self.data, &schema)?;
        Ok(if self.standardize { ds.standardized() } else { ds })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and evaluate it against the attack optimized for it.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// ols, fair_unrobust, robust_point or robust_rankone.
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        eta: f64,
        /// Attack used for evaluation; defaults to the one the model defends against.
        #[arg(long)]
        scheme: Option<AttackScheme>,
        /// Coefficient radius for the rank-one defense.
        #[arg(long)]
        b_beta: Option<f64>,
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
        /// Write the full result as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the proximal point trace of a rank-one fit as CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Compute the optimal attack against given coefficients.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        /// JSON file holding an array of coefficients or an object with a `beta` array.
        #[arg(long)]
        beta: PathBuf,
        #[arg(long)]
        scheme: AttackScheme,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        eta: f64,
        /// Write the poisoned dataset as CSV.
        #[arg(long)]
        poisoned_out: Option<PathBuf>,
    },
    /// Run a sweep described by a JSON config.
    Sweep {
        config: PathBuf,
    },
    /// Print dataset statistics as JSON.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic two-group dataset as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with generator parameters; the reference configuration when absent.
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => serde_json::to_writer_pretty(create(p)?, value)?,
        None => {
            let mut stdout = io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout).map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            })?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BetaFile {
    Plain(Vec<f64>),
    Object { beta: Vec<f64> },
}

fn read_beta(path: &Path) -> Result<DVector<f64>> {
    let parsed: BetaFile =
        serde_json::from_reader(open(path)?).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let v = match parsed {
        BetaFile::Plain(v) | BetaFile::Object { beta: v } => v,
    };
    Ok(DVector::from_vec(v))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            data,
            model,
            lambda,
            eta,
            scheme,
            b_beta,
            seed,
            out,
            trace_out,
        } => {
            let ds = data.load()?;
            let cfg = TradeoffConfig::new(lambda, eta)?;
            let opts = RankOneOptions {
                b_beta,
                seed,
                ..RankOneOptions::default()
            };
            let fitted = fit_model(model, &ds, &cfg, &opts)?;
            let scheme = scheme.unwrap_or(match model {
                ModelKind::RobustRankone => AttackScheme::Rankone,
                _ => AttackScheme::Point,
            });
            let evaluation = evaluate_under_attack(&fitted.beta, &ds, &cfg, scheme)?;
            if let Some(p) = trace_out {
                let trace = fitted.saddle().map(|d| d.trace.as_slice()).unwrap_or(&[]);
                write_trace_csv(trace, create(&p)?)?;
            }
            emit(
                &json!({ "model": model, "config": cfg, "fit": fitted, "evaluation": evaluation }),
                out.as_deref(),
            )
        }
        Command::Attack {
            data,
            beta,
            scheme,
            lambda,
            eta,
            poisoned_out,
        } => {
            let ds = data.load()?;
            let cfg = TradeoffConfig::new(lambda, eta)?;
            let beta = read_beta(&beta)?;
            if beta.len() != ds.p() {
                return Err(Error::Dimension {
                    expected: ds.p(),
                    got: beta.len(),
                });
            }
            let (attack, poisoned) = match scheme {
                AttackScheme::Point => {
                    let pt = best_point(&beta, &ds, &cfg)?;
                    let poisoned = apply_point(&ds, &pt)?;
                    (serde_json::to_value(&pt)?, poisoned)
                }
                AttackScheme::Rankone => {
                    let atk = best_rankone(&beta, &ds, &cfg)?;
                    let poisoned = apply_rankone(&ds, &atk)?;
                    (serde_json::to_value(&atk)?, poisoned)
                }
            };
            if let Some(p) = poisoned_out {
                write_csv(&poisoned, p)?;
            }
            let evaluation = evaluate_under_attack(&beta, &ds, &cfg, scheme)?;
            emit(&json!({ "attack": attack, "evaluation": evaluation }), None)
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let report = run_sweep(&cfg)?;
            let failed = report.rows().filter(|r| r.error.is_some()).count();
            if cfg.output_csv.is_none() {
                report.write_csv_to(io::stdout().lock())?;
            }
            eprintln!("{} cells, {failed} failed", report.cells.len());
            Ok(())
        }
        Command::Stats { data } => {
            let ds = data.load()?;
            emit(&serde_json::to_value(compute_stats(&ds))?, None)
        }
        Command::Synth { out, seed, params } => {
            let mut p = match params {
                Some(path) => serde_json::from_reader::<_, SynthParams>(open(&path)?)
                    .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?,
                None => SynthParams::reference(seed),
            };
            p.seed = seed;
            write_csv(&synth_generate(&p)?, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
