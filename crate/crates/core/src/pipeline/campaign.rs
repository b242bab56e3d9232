use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, CampaignConfig, Stream};
use crate::dynamics::{integrate_from_rest, make_perturbed_twin, sample_parameters_lhs, FomSystem, ParameterVector, TimeHistory};
use crate::error::Result;
use crate::monitoring::add_measurement_noise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One parameter sample: nominal response plus the noisy twin measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub params: ParameterVector,
    pub history: TimeHistory,
    /// Noisy sensor accelerations of the perturbed twin (sensors × states).
    pub measurement: DMatrix<f64>,
    /// Wall-clock seconds of the nominal full-order solve.
    pub fom_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Campaign {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn params(&self) -> Vec<ParameterVector> {
        self.samples.iter().map(|s| s.params.clone()).collect()
    }

    /// Parameters as rows.
    pub fn param_matrix(&self) -> DMatrix<f64> {
        let k = self.samples.first().map_or(0, |s| s.params.k());
        DMatrix::from_fn(self.len(), k, |i, j| self.samples[i].params.values[j])
    }
}

fn stream(split: Split) -> Stream {
    match split {
        Split::Train => Stream::TrainSampling,
        Split::Test => Stream::TestSampling,
    }
}

/// Samples a split by Latin hypercube design and runs the nominal model and its measurement twin.
pub fn run_campaign(config: &CampaignConfig, system: &FomSystem, split: Split) -> Result<Campaign> {
    let n = match split {
        Split::Train => config.n_train,
        Split::Test => config.n_test,
    };
    let params = sample_parameters_lhs(&config.parameters, n, derive_seed(config.seed, stream(split), 0))?;
    simulate_samples(config, system, split, params, 0)
}

/// Runs given parameter samples; `first_index` positions them within their
/// split so that twin and noise seeds match a full campaign run.
pub fn simulate_samples(
    config: &CampaignConfig,
    system: &FomSystem,
    split: Split,
    params: Vec<ParameterVector>,
    first_index: usize,
) -> Result<Campaign> {
    let layout = config.sensors.layout(system.n_dof)?;
    let offset = match split {
        Split::Train => 0,
        Split::Test => 1 << 32,
    };
    let samples = params
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| {
            let idx = offset + (first_index + i) as u64;
            let start = Instant::now();
            let history = integrate_from_rest(system, &p, config.dt, config.t_end)?;
            let fom_seconds = start.elapsed().as_secs_f64();
            let accel = if config.twin_sigma > 0.0 {
                let twin = make_perturbed_twin(system, &p, config.twin_sigma, derive_seed(config.seed, Stream::Twin, idx))?;
                integrate_from_rest(&twin, &p, config.dt, config.t_end)?.acceleration
            } else {
                history.acceleration.clone()
            };
            let measurement = add_measurement_noise(
                &layout.select(&accel),
                config.noise_ratio,
                derive_seed(config.seed, Stream::Noise, idx),
            )?;
            Ok(Sample { params: p, history, measurement, fom_seconds })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Campaign { split, samples })
}
