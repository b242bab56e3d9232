use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifact::ModelArtifact;
use super::config::EnsembleConfig;
use super::solve::rom_displacement;
use crate::dynamics::{FomSystem, ParameterVector};
use crate::error::{Error, Result};
use crate::generative::generate_coefficients;
use crate::inference::{infer_parameters, ParameterEstimate};
use crate::monitoring::extract_features;
use crate::reduction::reconstruct_basis;
use crate::rom::error_metric;

/// Online input: raw sensor signals or an already extracted feature vector.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    /// Sensor accelerations (sensors × states) or full-model accelerations.
    Signals(&'a DMatrix<f64>),
    Features(&'a [f64]),
}

/// Wall-clock seconds of the online stages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionTimings {
    pub features: f64,
    pub generation: f64,
    pub ensemble: f64,
    pub total: f64,
    /// Solve time of the mean-trajectory ROM alone.
    pub mean_rom: f64,
}

/// Mean response with its ±3σ ensemble envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub dt: f64,
    /// Displacement of the mean-latent basis at the mean parameters (dofs × states).
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// Successful ensemble members.
    pub ensemble_size: usize,
    pub failed: usize,
    pub parameters: ParameterEstimate,
    pub features: Vec<f64>,
    /// Relative error of `mean` against a supplied reference, in percent.
    pub error_pct: Option<f64>,
    pub timings: PredictionTimings,
}

impl PredictionBundle {
    /// Fraction of states where `reference` lies inside the envelope at `dof`.
    pub fn coverage(&self, reference: &DMatrix<f64>, dof: usize) -> f64 {
        let n = self.mean.ncols();
        let inside = (0..n)
            .filter(|&j| {
                let v = reference[(dof, j)];
                self.lower[(dof, j)] <= v && v <= self.upper[(dof, j)]
            })
            .count();
        inside as f64 / n as f64
    }
}

/// Online prediction.
///
/// Member `i` of the ensemble pairs basis draw `i mod n_basis` with parameter
/// draw `i mod n_param`; the ensemble has `max(n_basis, n_param)` members.
pub fn predict_online(
    artifact: &ModelArtifact,
    observation: Observation,
    ensemble: EnsembleConfig,
    seed: u64,
    reference: Option<&DMatrix<f64>>,
) -> Result<PredictionBundle> {
    let system = artifact.system()?;
    predict_with_system(artifact, &system, observation, ensemble, seed, reference)
}

pub(crate) fn predict_with_system(
    artifact: &ModelArtifact,
    system: &FomSystem,
    observation: Observation,
    ensemble: EnsembleConfig,
    seed: u64,
    reference: Option<&DMatrix<f64>>,
) -> Result<PredictionBundle> {
    let start = Instant::now();
    let cfg = &artifact.config;
    let w: Vec<f64> = match observation {
        Observation::Signals(s) => extract_features(s, &artifact.extractor)?.w.iter().copied().collect(),
        Observation::Features(f) => {
            let expected = artifact.extractor.out_dim().unwrap_or(0);
            if f.len() != expected {
                return Err(Error::dim(format!("{} features for a model expecting {expected}", f.len())));
            }
            f.to_vec()
        }
    };
    let t_features = start.elapsed().as_secs_f64();

    let v0 = artifact.v0()?;
    let (draws, mean_x) = generate_coefficients(&artifact.cvae, &w, ensemble.n_basis, seed)?;
    let estimate = infer_parameters(&artifact.inference, &w, ensemble.n_param, seed.wrapping_add(1))?;
    let t_generation = start.elapsed().as_secs_f64() - t_features;

    let hyper = Some((&artifact.weights, &artifact.global));
    let t_mean = Instant::now();
    let mean_v = reconstruct_basis(&mean_x, &artifact.global, &v0)?;
    let mean = rom_displacement(system, &mean_v, hyper, &estimate.mean, cfg.dt, cfg.t_end)?;
    let mean_rom = t_mean.elapsed().as_secs_f64();

    let members = ensemble.n_basis.max(ensemble.n_param);
    let runs: Vec<Option<DMatrix<f64>>> = (0..members)
        .into_par_iter()
        .map(|i| {
            let x = if draws.is_empty() { &mean_x } else { &draws[i % draws.len()] };
            let p: &ParameterVector =
                if estimate.samples.is_empty() { &estimate.mean } else { &estimate.samples[i % estimate.samples.len()] };
            let out = reconstruct_basis(x, &artifact.global, &v0)
                .and_then(|v| rom_displacement(system, &v, hyper, p, cfg.dt, cfg.t_end));
            match out {
                Ok(u) => Some(u),
                Err(e) => {
                    log::debug!("ensemble member {i} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ok: Vec<&DMatrix<f64>> = runs.iter().flatten().collect();
    let failed = members - ok.len();
    if failed * 2 > members {
        return Err(Error::Numeric(format!("{failed} of {members} ensemble members failed")));
    }
    let (lower, upper) = envelope(&mean, &ok);
    let error_pct = match reference {
        Some(r) => Some(error_metric(r, &mean, &cfg.error.dofs, &cfg.error.steps)?),
        None => None,
    };
    let total = start.elapsed().as_secs_f64();
    Ok(PredictionBundle {
        dt: cfg.dt,
        mean,
        lower,
        upper,
        ensemble_size: ok.len(),
        failed,
        parameters: estimate,
        features: w,
        error_pct,
        timings: PredictionTimings {
            features: t_features,
            generation: t_generation,
            ensemble: total - t_features - t_generation,
            total,
            mean_rom,
        },
    })
}

/// `mean ± 3·std` of the members, entrywise.
fn envelope(mean: &DMatrix<f64>, members: &[&DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = members.len() as f64;
    let mut sum = DMatrix::zeros(mean.nrows(), mean.ncols());
    for m in members {
        sum += *m;
    }
    let avg = if n > 0.0 { sum / n } else { mean.clone() };
    let mut var = DMatrix::zeros(mean.nrows(), mean.ncols());
    for m in members {
        var += (*m - &avg).map(|d| d * d);
    }
    let std = if n > 0.0 { (var / n).map(f64::sqrt) } else { var };
    (mean - &std * 3.0, mean + &std * 3.0)
}
