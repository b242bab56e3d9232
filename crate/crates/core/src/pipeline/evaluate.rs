use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifact::ModelArtifact;
use super::campaign::Campaign;
use super::config::{derive_seed, Stream};
use super::predict::{predict_with_system, Observation, PredictionBundle};
use super::solve::rom_displacement;
use crate::error::{Error, Result};
use crate::generative::generate_coefficients;
use crate::inference::infer_parameters;
use crate::monitoring::extract_features;
use crate::reduction::{compute_pod_order, reconstruct_basis};
use crate::rom::error_metric;

/// The four error tiers, from pure truncation to the full online pipeline.
pub const TIERS: [&str; 4] = ["truncation", "hyper_reduction", "basis_generation", "parameter_inference"];

/// Relative slack when checking that tier errors do not decrease.
const LADDER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub tier: String,
    pub mean_error_pct: f64,
    pub max_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    /// Error of each tier, percent.
    pub errors: [f64; 4],
    /// True parameters inside μ ± 3σ in every dimension.
    pub parameters_covered: bool,
    /// Fraction of states inside the envelope at the max-response dof.
    pub envelope_coverage: f64,
    pub max_response_dof: usize,
    pub ensemble_failures: usize,
}

/// Reproducible part of an evaluation (no timings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub n_samples: usize,
    pub n_dof: usize,
    pub r: usize,
    pub r_tilde: usize,
    pub n_elements: usize,
    pub n_selected: usize,
    pub ladder: Vec<TierSummary>,
    pub ladder_monotone: bool,
    /// Fraction of samples whose parameters are covered at 3σ.
    pub parameter_coverage: f64,
    /// Fraction of samples with envelope coverage ≥ 95 % of states.
    pub envelope_pass_rate: f64,
    pub samples: Vec<SampleMetrics>,
}

/// Mean wall-clock seconds per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTimings {
    pub training: f64,
    pub fom: f64,
    pub rom: f64,
    pub hyper_rom: f64,
    pub generated_rom: f64,
    pub prediction: f64,
}

/// Time history of the max-response dof of one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub sample: usize,
    pub dof: usize,
    pub dt: f64,
    pub reference: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: EvaluationMetrics,
    pub timings: EvaluationTimings,
    pub traces: Vec<Trace>,
}

/// Required share of states inside the envelope for a sample to pass.
pub const ENVELOPE_STATE_SHARE: f64 = 0.95;

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// Evaluates the artifact on test samples with full-order references.
pub fn evaluate(artifact: &ModelArtifact, test: &Campaign) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::config("evaluation needs at least one test sample with a reference"));
    }
    let cfg = &artifact.config;
    let system = artifact.system()?;
    let v0 = artifact.v0()?;
    let hyper = Some((&artifact.weights, &artifact.global));
    let (dofs, steps) = (&cfg.error.dofs, &cfg.error.steps);
    let mut samples = Vec::with_capacity(test.len());
    let mut traces = Vec::new();
    let mut t = [0.0f64; 5];
    for (i, s) in test.samples.iter().enumerate() {
        let reference = &s.history.displacement;
        if reference.ncols() != cfg_states(artifact) {
            return Err(Error::dim(format!("test sample {i} has {} states", reference.ncols())));
        }
        let local = compute_pod_order(reference, artifact.r)?.modes;
        let (u1, t1) = timed(|| rom_displacement(&system, &local, None, &s.params, cfg.dt, cfg.t_end))?;
        let (u2, t2) = timed(|| rom_displacement(&system, &local, hyper, &s.params, cfg.dt, cfg.t_end))?;

        let seed = derive_seed(cfg.seed, Stream::Prediction, i as u64);
        let bundle: PredictionBundle =
            predict_with_system(artifact, &system, Observation::Signals(&s.measurement), cfg.ensemble, seed, Some(reference))?;
        let w = &bundle.features;
        let (_, mean_x) = generate_coefficients(&artifact.cvae, w, 0, seed)?;
        let (u3, t3) = timed(|| {
            let v = reconstruct_basis(&mean_x, &artifact.global, &v0)?;
            rom_displacement(&system, &v, hyper, &s.params, cfg.dt, cfg.t_end)
        })?;

        let errors = [
            error_metric(reference, &u1, dofs, steps)?,
            error_metric(reference, &u2, dofs, steps)?,
            error_metric(reference, &u3, dofs, steps)?,
            bundle.error_pct.unwrap_or(f64::NAN),
        ];
        let covered = s
            .params
            .values
            .iter()
            .zip(bundle.parameters.mean.values.iter().zip(&bundle.parameters.std))
            .all(|(p, (m, sd))| (p - m).abs() <= 3.0 * sd);
        let dof = s.history.max_response_dof();
        let coverage = bundle.coverage(reference, dof);
        if traces.len() < cfg.traces {
            traces.push(Trace {
                sample: i,
                dof,
                dt: cfg.dt,
                reference: reference.row(dof).iter().copied().collect(),
                mean: bundle.mean.row(dof).iter().copied().collect(),
                lower: bundle.lower.row(dof).iter().copied().collect(),
                upper: bundle.upper.row(dof).iter().copied().collect(),
            });
        }
        for (acc, v) in t.iter_mut().zip([s.fom_seconds, t1, t2, t3, bundle.timings.total]) {
            *acc += v;
        }
        samples.push(SampleMetrics {
            errors,
            parameters_covered: covered,
            envelope_coverage: coverage,
            max_response_dof: dof,
            ensemble_failures: bundle.failed,
        });
    }
    let n = samples.len() as f64;
    let ladder: Vec<TierSummary> = TIERS
        .iter()
        .enumerate()
        .map(|(k, name)| TierSummary {
            tier: name.to_string(),
            mean_error_pct: samples.iter().map(|s| s.errors[k]).sum::<f64>() / n,
            max_error_pct: samples.iter().map(|s| s.errors[k]).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let ladder_monotone =
        ladder.windows(2).all(|w| w[0].mean_error_pct <= w[1].mean_error_pct * (1.0 + LADDER_SLACK));
    if !ladder_monotone {
        log::warn!(
            "error ladder is not monotone: {:?}",
            ladder.iter().map(|l| l.mean_error_pct).collect::<Vec<_>>()
        );
    }
    let metrics = EvaluationMetrics {
        n_samples: samples.len(),
        n_dof: system.n_dof,
        r: artifact.r,
        r_tilde: artifact.global.r_tilde(),
        n_elements: system.n_elements(),
        n_selected: artifact.weights.n_selected(),
        ladder,
        ladder_monotone,
        parameter_coverage: samples.iter().filter(|s| s.parameters_covered).count() as f64 / n,
        envelope_pass_rate: samples.iter().filter(|s| s.envelope_coverage >= ENVELOPE_STATE_SHARE).count() as f64 / n,
        samples,
    };
    let timings = EvaluationTimings {
        training: artifact.report.training_seconds,
        fom: t[0] / n,
        rom: t[1] / n,
        hyper_rom: t[2] / n,
        generated_rom: t[3] / n,
        prediction: t[4] / n,
    };
    Ok(Evaluation { metrics, timings, traces })
}

fn cfg_states(artifact: &ModelArtifact) -> usize {
    crate::dynamics::step_count(artifact.config.dt, artifact.config.t_end).map_or(0, |n| n + 1)
}

/// Parameter-inference accuracy alone: `(covered fraction, per-sample coverage)`.
pub fn parameter_coverage(artifact: &ModelArtifact, test: &Campaign) -> Result<(f64, Vec<bool>)> {
    let flags = test
        .samples
        .iter()
        .map(|s| {
            let w = extract_features(&s.measurement, &artifact.extractor)?;
            let est = infer_parameters(&artifact.inference, w.w.as_slice(), 0, 0)?;
            Ok(s.params
                .values
                .iter()
                .zip(est.mean.values.iter().zip(&est.std))
                .all(|(p, (m, sd))| (p - m).abs() <= 3.0 * sd))
        })
        .collect::<Result<Vec<bool>>>()?;
    let frac = flags.iter().filter(|&&b| b).count() as f64 / flags.len().max(1) as f64;
    Ok((frac, flags))
}

/// Rows of the performance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub model_size: usize,
    pub elements: usize,
    pub max_error_pct: f64,
    pub mean_error_pct: f64,
    pub training_time_s: f64,
    pub solution_time_s: f64,
    pub speedup: f64,
    pub n_samples: usize,
}

/// Full model, the three ROM variants and the online prediction.
pub fn table_rows(metrics: &EvaluationMetrics, timings: &EvaluationTimings) -> Vec<TableRow> {
    let speed = |t: f64| if t > 0.0 { timings.fom / t } else { f64::INFINITY };
    let l = &metrics.ladder;
    let row = |model: &str, size, elements, k: Option<usize>, training, t: f64| TableRow {
        model: model.to_string(),
        model_size: size,
        elements,
        max_error_pct: k.map_or(0.0, |k| l[k].max_error_pct),
        mean_error_pct: k.map_or(0.0, |k| l[k].mean_error_pct),
        training_time_s: training,
        solution_time_s: t,
        speedup: speed(t),
        n_samples: metrics.n_samples,
    };
    vec![
        row("fom", metrics.n_dof, metrics.n_elements, None, 0.0, timings.fom),
        row("rom", metrics.r, metrics.n_elements, Some(0), 0.0, timings.rom),
        row("hyper_rom", metrics.r, metrics.n_selected, Some(1), 0.0, timings.hyper_rom),
        row("generated_basis", metrics.r, metrics.n_selected, Some(2), timings.training, timings.generated_rom),
        row("generative_prediction", metrics.r, metrics.n_selected, Some(3), timings.training, timings.prediction),
    ]
}

/// Convenience for tests: evaluation keeping only the deterministic metrics.
pub fn evaluate_metrics(artifact: &ModelArtifact, test: &Campaign) -> Result<EvaluationMetrics> {
    Ok(evaluate(artifact, test)?.metrics)
}
