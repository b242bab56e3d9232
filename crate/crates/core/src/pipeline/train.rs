use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::artifact::{EcswSummary, ModelArtifact, StageTiming, TrainingReport, ARTIFACT_VERSION};
use super::campaign::{run_campaign, Campaign, Split};
use super::config::{derive_seed, CampaignConfig, Stream};
use super::solve::rom_displacement;
use crate::dynamics::{assemble_fom, FomSystem};
use crate::error::{Error, Result, StageExt};
use crate::generative::{train_cvae, AugmentContext};
use crate::hyperreduction::{build_ecsw_system, solve_sparse_nnls, EcswWeights, TrainingState};
use crate::inference::train_inference;
use crate::monitoring::FeatureExtractor;
use crate::reduction::{assemble_snapshots, compute_pod, compute_pod_order, encode_basis, GlobalBasis};
use crate::rom::error_metric;

/// Intermediate products of the offline phase.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub campaign: Campaign,
    /// Order-`r` local POD basis of every training sample.
    pub local_bases: Vec<DMatrix<f64>>,
    /// Indices of the samples used to train the networks.
    pub used: Vec<usize>,
    /// Monitoring features of the used samples (rows).
    pub features: DMatrix<f64>,
    /// Flattened coefficient matrices of the used samples (rows).
    pub coefficients: DMatrix<f64>,
}

struct Clock {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        log::info!("stage {stage}");
        let out = f().stage(stage)?;
        self.timings.push(StageTiming { stage: stage.to_string(), seconds: t.elapsed().as_secs_f64() });
        Ok(out)
    }
}

/// Runs the offline phase and returns the artifact.
pub fn train_offline(config: &CampaignConfig) -> Result<ModelArtifact> {
    Ok(train_offline_with_data(config)?.0)
}

/// Runs the offline phase and saves the artifact into `dir`.
pub fn train_and_save(config: &CampaignConfig, dir: &Path) -> Result<ModelArtifact> {
    let artifact = train_offline(config)?;
    artifact.save(dir).stage("persist")?;
    Ok(artifact)
}

/// Offline phase: sampling, full-order runs, local and global PODs, tangent
/// coefficients, features, cVAE, parameter inference and element selection.
pub fn train_offline_with_data(config: &CampaignConfig) -> Result<(ModelArtifact, TrainingData)> {
    config.validate().stage("config")?;
    let mut clock = Clock { start: Instant::now(), timings: Vec::new() };
    let system = assemble_fom(&config.fom).stage("config")?;

    let campaign = clock.run("sampling", || run_campaign(config, &system, Split::Train))?;

    let (global, r, local_orders, local_bases) = clock.run("reduction", || reduce(config, &campaign))?;
    let v0 = global.reference(r).stage("reduction")?;

    let encoded = clock.run("coefficients", || {
        Ok(local_bases
            .par_iter()
            .enumerate()
            .map(|(i, vi)| match encode_basis(vi, &v0, &global) {
                Ok(x) => Some(x.flatten()),
                Err(e) => {
                    log::warn!("training sample {i} skipped: {e}");
                    None
                }
            })
            .collect::<Vec<_>>())
    })?;
    let used: Vec<usize> = (0..encoded.len()).filter(|&i| encoded[i].is_some()).collect();
    let skipped: Vec<usize> = (0..encoded.len()).filter(|&i| encoded[i].is_none()).collect();
    if used.len() * 2 < encoded.len() || used.is_empty() {
        return Err(Error::Geometry(format!("{} of {} local bases could not be encoded", skipped.len(), encoded.len()))
            .in_stage("coefficients"));
    }
    let obs = global.r_tilde() * r;
    let coefficients = DMatrix::from_fn(used.len(), obs, |i, j| encoded[used[i]].as_ref().expect("used")[j]);

    let (extractor, features) = clock.run("features", || {
        let layout = config.sensors.layout(system.n_dof)?;
        let mut ex = FeatureExtractor::new(config.features.clone(), layout, config.dt);
        let raws = used
            .par_iter()
            .map(|&i| ex.raw(&campaign.samples[i].measurement))
            .collect::<Result<Vec<_>>>()?;
        let raw = DMatrix::from_fn(raws.len(), raws[0].len(), |i, j| raws[i][j]);
        let w = ex.fit(&raw)?;
        Ok((ex, w))
    })?;

    let cvae_cfg = {
        let mut c = config.cvae.clone();
        c.seed = derive_seed(config.seed, Stream::Cvae, c.seed);
        c
    };
    let (cvae, cvae_history) = clock.run("cvae", || {
        let references: Vec<DMatrix<f64>> = used
            .iter()
            .map(|&i| subsample(&campaign.samples[i].history.displacement, config.augment_stride))
            .collect();
        let rom_error = |k: usize, v: &DMatrix<f64>| -> Result<f64> {
            let s = &campaign.samples[used[k]];
            let u = rom_displacement(&system, v, None, &s.params, config.dt, config.t_end)?;
            let e = error_metric(&s.history.displacement, &u, &config.error.dofs, &config.error.steps)?;
            Ok(e / 100.0)
        };
        let ctx = AugmentContext { global: &global, references: &references, rom_error: Some(&rom_error) };
        train_cvae(&coefficients, &features, global.r_tilde(), r, &cvae_cfg, Some(&ctx))
    })?;

    let (inference, inference_report) = clock.run("inference", || {
        let mut cfg = config.inference.clone();
        cfg.seed = derive_seed(config.seed, Stream::Inference, cfg.seed);
        let ps = DMatrix::from_fn(used.len(), config.parameters.k(), |i, j| campaign.samples[used[i]].params.values[j]);
        train_inference(&features, &ps, config.parameters.names(), config.parameters.bounds(), &cfg)
    })?;

    let (weights, ecsw) = clock.run("ecsw", || select_elements(config, &system, &campaign, &global))?;

    let training_seconds = clock.start.elapsed().as_secs_f64();
    let mean_fom_seconds = campaign.samples.iter().map(|s| s.fom_seconds).sum::<f64>() / campaign.len() as f64;
    let report = TrainingReport {
        n_train: campaign.len(),
        local_orders,
        r,
        r_tilde: global.r_tilde(),
        skipped,
        ecsw,
        cvae: cvae_history,
        inference: inference_report,
        timings: clock.timings,
        training_seconds,
        mean_fom_seconds,
    };
    let artifact = ModelArtifact {
        version: ARTIFACT_VERSION,
        config: config.clone(),
        config_hash: config.hash()?,
        global,
        r,
        weights,
        extractor,
        cvae,
        inference,
        report,
    };
    let data = TrainingData { campaign, local_bases, used, features, coefficients };
    Ok((artifact, data))
}

/// Every `stride`-th column, always starting at the first.
pub fn subsample(m: &DMatrix<f64>, stride: usize) -> DMatrix<f64> {
    let cols: Vec<usize> = (0..m.ncols()).step_by(stride.max(1)).collect();
    m.select_columns(&cols)
}

type Reduction = (GlobalBasis, usize, Vec<usize>, Vec<DMatrix<f64>>);

fn reduce(config: &CampaignConfig, campaign: &Campaign) -> Result<Reduction> {
    let n = config.fom.n_dof;
    let pods = campaign
        .samples
        .par_iter()
        .map(|s| compute_pod(&s.history.displacement, config.pod_eps))
        .collect::<Result<Vec<_>>>()?;
    let local_orders: Vec<usize> = pods.iter().map(|p| p.r()).collect();
    let r = config.local_order.unwrap_or_else(|| local_orders.iter().copied().max().unwrap_or(1)).clamp(1, n);
    let local_bases = campaign
        .samples
        .par_iter()
        .zip(pods)
        .map(|(s, pod)| if pod.r() == r { Ok(pod.modes) } else { Ok(compute_pod_order(&s.history.displacement, r)?.modes) })
        .collect::<Result<Vec<_>>>()?;
    let histories: Vec<_> = campaign.samples.iter().map(|s| s.history.clone()).collect();
    let pooled = assemble_snapshots(&histories, &campaign.params())?;
    let r_tilde = match config.global_order {
        Some(g) => g,
        None => compute_pod(&pooled.data, config.global_eps)?.r().max(r),
    };
    if r_tilde < r || r_tilde > n {
        return Err(Error::Config(format!("global order {r_tilde} must lie in {r}..={n}")));
    }
    let global = GlobalBasis::new(compute_pod_order(&pooled.data, r_tilde)?);
    log::info!("local order {r}, global order {r_tilde}");
    Ok((global, r, local_orders, local_bases))
}

fn select_elements(
    config: &CampaignConfig,
    system: &FomSystem,
    campaign: &Campaign,
    global: &GlobalBasis,
) -> Result<(EcswWeights, EcswSummary)> {
    let n_samples = config.ecsw_samples.unwrap_or(campaign.len()).min(campaign.len());
    let mut states = Vec::new();
    for s in &campaign.samples[..n_samples] {
        let h = &s.history;
        for j in (0..h.n_states()).step_by(config.ecsw_stride) {
            states.push(TrainingState {
                u: h.displacement.column(j).into_owned(),
                v: h.velocity.column(j).into_owned(),
                p: s.params.clone(),
            });
        }
    }
    let (g, b) = build_ecsw_system(&states, &global.modes, system)?;
    let mut weights = solve_sparse_nnls(&g, &b, config.ecsw_tau)?;
    weights.basis_hash = global.hash();
    if !weights.converged {
        log::warn!(
            "element selection stopped at relative residual {:.3e} above τ = {}",
            weights.residual,
            config.ecsw_tau
        );
    }
    let summary = EcswSummary {
        selected: weights.n_selected(),
        total: system.n_elements(),
        residual: weights.residual,
        converged: weights.converged,
        states: states.len(),
    };
    Ok((weights, summary))
}
