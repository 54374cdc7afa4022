use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ris_core::protocol::ProtocolTrace;
use ris_harness::experiments::{
    cmd_datafrac, cmd_eval, cmd_protocol, cmd_train, load_models, Predictor,
};
use ris_harness::{generate, Dataset, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "ris-sim",
    about = "Camera-aided RIS beam selection experiments"
)]
struct Cli {
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenes, channels and camera records.
    Generate {
        /// Output directory for the dataset.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Train one beam-set network per camera.
    Train {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for models and learning curves.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Set metrics, rate-vs-SNR and top-k rate tables on the test split.
    Eval {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `model_cam<i>.txt`.
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Use the ground-truth labels as predictions.
        #[arg(long)]
        oracle: bool,
        /// Output directory for the result tables.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay initial access for exhaustive, predicted and oracle sweeps.
    Protocol {
        /// Dataset directory written by `generate`.
        #[arg(long, required_unless_present = "diff")]
        data: Option<PathBuf>,
        /// Directory holding `model_cam<i>.txt`; adds the threshold policy.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory for run tables, summary and traces.
        #[arg(long, required_unless_present = "diff")]
        out: Option<PathBuf>,
        /// Override the number of access runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Compare two JSONL traces and print the differing events.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        diff: Option<Vec<PathBuf>>,
    },
    /// Accuracy and recall against the fraction of training data.
    Datafrac {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for `datafrac.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Dataset plus the settings to run with: `--config` when given (its
/// codebook must match the dataset's), otherwise the generating config.
fn open(cli: &Cli, data: &Path) -> Result<(Dataset, ExperimentConfig)> {
    let given = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let ds = Dataset::load(data, given.as_ref())?;
    let mut cfg = given.unwrap_or_else(|| ds.config().clone());
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok((ds, cfg))
}

/// Print to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Generate { out, scenes } => {
            let mut cfg = load_config(cli)?;
            if let Some(n) = scenes {
                cfg.dataset.scenes = *n;
            }
            let m = generate(&cfg, out)?;
            for c in &m.cameras {
                emit(&format!(
                    "{}: {} records ({} train)\n",
                    c.file, c.records, c.train
                ));
            }
        }
        Cmd::Train { data, out, epochs } => {
            let (ds, mut cfg) = open(cli, data)?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            for (c, o) in cmd_train(&ds, &cfg, out)?.iter().enumerate() {
                if let Some(last) = o.curves.last() {
                    emit(&format!(
                        "cam{c}: epoch {} train {:.5} test {:.5} bits/beam\n",
                        last.epoch,
                        last.train_loss,
                        last.test_loss.unwrap_or(f64::NAN)
                    ));
                }
            }
        }
        Cmd::Eval {
            data,
            model,
            oracle,
            out,
        } => {
            let (ds, cfg) = open(cli, data)?;
            let predictor = match (oracle, model) {
                (true, _) => Predictor::Oracle,
                (false, Some(m)) => Predictor::Net(load_models(m, ds.cameras.len())?),
                (false, None) => {
                    return Err(HarnessError::Config(
                        "--model or --oracle is required".into(),
                    ))
                }
            };
            let report = cmd_eval(&ds, &cfg, &predictor)?;
            report.write(out)?;
            emit(&report.metrics.to_csv());
            emit(&format!(
                "equal-gain bound: {} violations in {} checks\n",
                report.bound_violations, report.bound_checks
            ));
        }
        Cmd::Protocol {
            data,
            model,
            out,
            runs,
            diff,
        } => {
            if let Some(paths) = diff {
                let read = |p: &PathBuf| -> Result<ProtocolTrace> {
                    let text = std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
                        path: p.clone(),
                        source,
                    })?;
                    Ok(ProtocolTrace::from_jsonl(&text)?)
                };
                let (a, b) = (read(&paths[0])?, read(&paths[1])?);
                let d = a.diff(&b);
                for e in &d {
                    emit(&format!(
                        "{}\n",
                        serde_json::to_string(e).expect("diff entries serialise")
                    ));
                }
                emit(&format!("{} differing events\n", d.len()));
                return Ok(());
            }
            let (data, out) = (data.as_ref().expect("clap"), out.as_ref().expect("clap"));
            let (ds, cfg) = open(cli, data)?;
            let predictor = model
                .as_ref()
                .map(|m| Ok::<_, HarnessError>(Predictor::Net(load_models(m, ds.cameras.len())?)))
                .transpose()?;
            let runs = runs.unwrap_or(cfg.protocol.runs);
            let report = cmd_protocol(&ds, &cfg, predictor.as_ref(), runs)?;
            report.write(out)?;
            emit(&report.summary.to_csv());
        }
        Cmd::Datafrac {
            data,
            out,
            fractions,
        } => {
            let (ds, cfg) = open(cli, data)?;
            let fr = fractions.clone().unwrap_or_else(|| cfg.datafrac.clone());
            let table = cmd_datafrac(&ds, &cfg, &fr)?;
            std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
                path: out.clone(),
                source,
            })?;
            table.write(&out.join("datafrac.csv"))?;
            emit(&table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
