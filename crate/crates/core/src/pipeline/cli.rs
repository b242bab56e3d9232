use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::artifact::ModelArtifact;
use super::campaign::{run_campaign, simulate_samples, Split};
use super::config::{derive_seed, CampaignConfig, Stream};
use super::evaluate::evaluate;
use super::predict::{predict_online, Observation};
use super::report::{render_report, write_evaluation};
use super::train::train_and_save;
use crate::dynamics::{assemble_fom, sample_parameters_lhs};
use crate::error::{Error, Result};
use crate::inference::ParameterEstimate;
use crate::io::{read_matrix, write_matrix, write_with_sidecar};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "genrom", version, about = "Generative reduced-order models with uncertainty envelopes")]
struct Cli {
    /// Campaign configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the campaign seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "GENROM_OUT_DIR", default_value = "genrom-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full-order model over a sampled split and store the histories.
    Simulate {
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
    },
    /// Offline training; writes the model artifact.
    Train,
    /// Online prediction for one measurement.
    Predict {
        /// Sensor signals in the binary matrix format (sensors × states).
        #[arg(long, conflicts_with_all = ["features", "sample"])]
        signals: Option<PathBuf>,
        /// Feature vector as a JSON array.
        #[arg(long, conflicts_with = "sample")]
        features: Option<PathBuf>,
        /// Test-split sample whose twin measurement is synthesized.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Evaluate the artifact on the test split.
    Evaluate,
    /// Render the evaluation as CSV and SVG.
    Report,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<CampaignConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("this command needs --config <file>".into()))?;
    let mut cfg = CampaignConfig::from_file(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn artifact_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.join("artifact")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { split } => simulate(cli, *split),
        Command::Train => {
            let cfg = load_config(cli)?;
            let artifact = train_and_save(&cfg, &artifact_dir(cli))?;
            let r = &artifact.report;
            println!(
                "trained: r = {}, r_tilde = {}, elements {}/{}, {:.1} s",
                r.r, r.r_tilde, r.ecsw.selected, r.ecsw.total, r.training_seconds
            );
            println!("artifact: {}", artifact_dir(cli).display());
            Ok(())
        }
        Command::Predict { signals, features, sample } => predict(cli, signals.as_deref(), features.as_deref(), *sample),
        Command::Evaluate => {
            let artifact = ModelArtifact::load(&artifact_dir(cli))?;
            let mut cfg = artifact.config.clone();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let system = assemble_fom(&cfg.fom)?;
            let test = run_campaign(&cfg, &system, Split::Test)?;
            let eval = evaluate(&artifact, &test)?;
            let dir = cli.out_dir.join("evaluation");
            write_evaluation(&dir, &eval)?;
            for tier in &eval.metrics.ladder {
                println!("{:<22} mean {:>8.3} %  max {:>8.3} %", tier.tier, tier.mean_error_pct, tier.max_error_pct);
            }
            println!(
                "parameter coverage {:.3}, envelope pass rate {:.3}",
                eval.metrics.parameter_coverage, eval.metrics.envelope_pass_rate
            );
            println!("evaluation: {}", dir.display());
            Ok(())
        }
        Command::Report => {
            let files = render_report(&cli.out_dir.join("evaluation"), &cli.out_dir.join("report"))?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn simulate(cli: &Cli, split: Split) -> Result<()> {
    let cfg = load_config(cli)?;
    let system = assemble_fom(&cfg.fom)?;
    let campaign = run_campaign(&cfg, &system, split)?;
    let name = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let dir = cli.out_dir.join("simulate").join(name);
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("parameters.csv")).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["sample".to_string()];
    header.extend(cfg.parameters.names());
    header.push("fom_seconds".into());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for (i, s) in campaign.samples.iter().enumerate() {
        let tag = format!("sample_{i:04}");
        write_with_sidecar(&dir, &format!("{tag}_displacement"), &s.history.displacement, "displacement", vec![tag.clone()], None)?;
        write_with_sidecar(&dir, &format!("{tag}_measurement"), &s.measurement, "measurement", vec![tag.clone()], None)?;
        let mut rec = vec![i.to_string()];
        rec.extend(s.params.values.iter().map(|v| format!("{v:e}")));
        rec.push(format!("{:e}", s.fom_seconds));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    println!("simulated {} {name} samples into {}", campaign.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionSummary<'a> {
    sample: Option<usize>,
    parameter_names: &'a [String],
    parameter_mean: &'a [f64],
    parameter_std: &'a [f64],
    features: &'a [f64],
    ensemble_size: usize,
    failed: usize,
    error_pct: Option<f64>,
    timings: super::predict::PredictionTimings,
}

fn predict(cli: &Cli, signals: Option<&Path>, features: Option<&Path>, sample: Option<usize>) -> Result<()> {
    let artifact = ModelArtifact::load(&artifact_dir(cli))?;
    let cfg = &artifact.config;
    let index = sample.unwrap_or(0);
    let seed = cli.seed.unwrap_or_else(|| derive_seed(cfg.seed, Stream::Prediction, index as u64));
    let bundle = if let Some(path) = signals {
        let m = read_matrix(path)?;
        predict_online(&artifact, Observation::Signals(&m), cfg.ensemble, seed, None)?
    } else if let Some(path) = features {
        let w: Vec<f64> = serde_json::from_str(&fs::read_to_string(path)?)?;
        predict_online(&artifact, Observation::Features(&w), cfg.ensemble, seed, None)?
    } else {
        let system = artifact.system()?;
        let params = sample_parameters_lhs(&cfg.parameters, cfg.n_test, derive_seed(cfg.seed, Stream::TestSampling, 0))?;
        let p = params
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Config(format!("test sample {index} out of range {}", cfg.n_test)))?;
        let c = simulate_samples(cfg, &system, Split::Test, vec![p], index)?;
        let s = &c.samples[0];
        predict_online(&artifact, Observation::Signals(&s.measurement), cfg.ensemble, seed, Some(&s.history.displacement))?
    };
    let dir = cli.out_dir.join("predict");
    fs::create_dir_all(&dir)?;
    write_matrix(dir.join("mean.bin"), &bundle.mean)?;
    write_matrix(dir.join("lower.bin"), &bundle.lower)?;
    write_matrix(dir.join("upper.bin"), &bundle.upper)?;
    let est: &ParameterEstimate = &bundle.parameters;
    let summary = PredictionSummary {
        sample: (signals.is_none() && features.is_none()).then_some(index),
        parameter_names: &est.mean.names,
        parameter_mean: &est.mean.values,
        parameter_std: &est.std,
        features: &bundle.features,
        ensemble_size: bundle.ensemble_size,
        failed: bundle.failed,
        error_pct: bundle.error_pct,
        timings: bundle.timings,
    };
    write_json(&dir.join("prediction.json"), &summary)?;
    for (n, (m, s)) in est.mean.names.iter().zip(est.mean.values.iter().zip(&est.std)) {
        println!("{n}: {m:.4} ± {s:.4}");
    }
    if let Some(e) = bundle.error_pct {
        println!("mean-trajectory error {e:.3} %");
    }
    println!("prediction: {}", dir.display());
    Ok(())
}
