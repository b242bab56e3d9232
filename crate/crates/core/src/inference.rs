//! Probabilistic parameter recovery: a shared ReLU layer feeding a mean head
//! and a softplus standard-deviation head, trained by Gaussian negative
//! log-likelihood with k-fold selection of the epoch count, and averaged over
//! a small ensemble of independently initialised members.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ParameterVector;
use crate::error::{Error, Result};
use crate::monitoring::Scaler;
use crate::neural::{adam_step, Activation, Adam, DenseNetwork, ForwardCache, Gradients};

/// Lower bound added to every predicted standard deviation (scaled units).
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_shared")]
    pub shared: usize,
    #[serde(default = "default_heads")]
    pub head: Vec<usize>,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Independently initialised networks averaged into the prediction.
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_members() -> usize {
    5
}
fn default_shared() -> usize {
    256
}
fn default_heads() -> Vec<usize> {
    vec![64, 16]
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_folds() -> usize {
    5
}

impl InferenceConfig {
    pub fn new(epochs: usize) -> Self {
        InferenceConfig {
            shared: default_shared(),
            head: default_heads(),
            epochs,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            folds: default_folds(),
            members: default_members(),
            seed: 0,
        }
    }
}

/// `½ (Σ ln σ² + Σ (p − μ)²/σ² + k ln 2π)`.
pub fn nll_loss(p: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if p.len() != mu.len() || p.len() != sigma.len() {
        return Err(Error::dim("p, μ and σ must share a length".to_string()));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::config("σ must be positive"));
    }
    let k = p.len() as f64;
    let s: f64 = p
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((p, m), s)| (s * s).ln() + (p - m).powi(2) / (s * s))
        .sum();
    Ok(0.5 * (s + k * (2.0 * PI).ln()))
}

/// One mean/std network pair behind a shared layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeads {
    pub shared: DenseNetwork,
    pub mean_head: DenseNetwork,
    pub std_head: DenseNetwork,
}

pub struct HeadsForward {
    pub shared: ForwardCache,
    pub mean: ForwardCache,
    pub std: ForwardCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsGradients {
    pub shared: Gradients,
    pub mean: Gradients,
    pub std: Gradients,
}

impl HeadsGradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.shared.flat();
        v.extend(self.mean.flat());
        v.extend(self.std.flat());
        v
    }
}

impl GaussianHeads {
    /// Dense(w_dim → shared) ReLU, then ReLU head layers ending in `k` linear
    /// (mean) or softplus (std) outputs.
    pub fn new(w_dim: usize, k: usize, shared: usize, head: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        use Activation::*;
        let shared_net = DenseNetwork::new(&[w_dim, shared], &[Relu], rng)?;
        let mut sizes = vec![shared];
        sizes.extend(head);
        sizes.push(k);
        let mut acts = vec![Relu; head.len()];
        acts.push(Linear);
        let mean_head = DenseNetwork::new(&sizes, &acts, rng)?;
        *acts.last_mut().expect("non-empty") = Softplus;
        let std_head = DenseNetwork::new(&sizes, &acts, rng)?;
        Ok(GaussianHeads { shared: shared_net, mean_head, std_head })
    }

    pub fn k(&self) -> usize {
        self.mean_head.out_dim()
    }

    pub fn w_dim(&self) -> usize {
        self.shared.in_dim()
    }

    pub fn n_params(&self) -> usize {
        self.shared.n_params() + self.mean_head.n_params() + self.std_head.n_params()
    }

    /// Forward pass on scaled inputs (one sample per column).
    pub fn forward(&self, w: &DMatrix<f64>) -> Result<HeadsForward> {
        let shared = self.shared.forward(w)?;
        let mean = self.mean_head.forward(shared.output())?;
        let std = self.std_head.forward(shared.output())?;
        Ok(HeadsForward { shared, mean, std })
    }

    /// Mean NLL over the batch columns and its gradients.
    pub fn loss_and_grads(&self, w: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<(f64, HeadsGradients)> {
        let f = self.forward(w)?;
        let mu = f.mean.output();
        let sigma = f.std.output().add_scalar(SIGMA_FLOOR);
        if p.shape() != mu.shape() {
            return Err(Error::dim(format!("targets {:?} for outputs {:?}", p.shape(), mu.shape())));
        }
        let b = w.ncols() as f64;
        let k = p.nrows() as f64;
        let mut loss = 0.0;
        let mut d_mu = DMatrix::zeros(mu.nrows(), mu.ncols());
        let mut d_sigma = DMatrix::zeros(mu.nrows(), mu.ncols());
        for c in 0..mu.ncols() {
            for i in 0..mu.nrows() {
                let (r, s) = (p[(i, c)] - mu[(i, c)], sigma[(i, c)]);
                loss += 0.5 * (2.0 * s.ln() + r * r / (s * s));
                d_mu[(i, c)] = -r / (s * s) / b;
                d_sigma[(i, c)] = (1.0 / s - r * r / (s * s * s)) / b;
            }
        }
        loss = loss / b + 0.5 * k * (2.0 * PI).ln();
        let (g_mean, dh_mean) = self.mean_head.backward(&f.mean, &d_mu);
        let (g_std, dh_std) = self.std_head.backward(&f.std, &d_sigma);
        let (g_shared, _) = self.shared.backward(&f.shared, &(dh_mean + dh_std));
        Ok((loss, HeadsGradients { shared: g_shared, mean: g_mean, std: g_std }))
    }

    fn validation_nll(&self, w: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
        let f = self.forward(w)?;
        let mu = f.mean.output();
        let sigma = f.std.output().add_scalar(SIGMA_FLOOR);
        let mut loss = 0.0;
        for c in 0..p.ncols() {
            for i in 0..p.nrows() {
                let (r, s) = (p[(i, c)] - mu[(i, c)], sigma[(i, c)]);
                loss += 0.5 * (2.0 * s.ln() + r * r / (s * s) + (2.0 * PI).ln());
            }
        }
        Ok(loss / p.ncols() as f64)
    }

    fn nets_mut(&mut self) -> [&mut DenseNetwork; 3] {
        [&mut self.shared, &mut self.mean_head, &mut self.std_head]
    }

    fn save(&self, dir: &Path, i: usize) -> Result<()> {
        self.shared.save(dir, &format!("inference_{i}_shared"))?;
        self.mean_head.save(dir, &format!("inference_{i}_mean"))?;
        self.std_head.save(dir, &format!("inference_{i}_std"))
    }

    fn load(dir: &Path, i: usize) -> Result<Self> {
        Ok(GaussianHeads {
            shared: DenseNetwork::load(dir, &format!("inference_{i}_shared"))?,
            mean_head: DenseNetwork::load(dir, &format!("inference_{i}_mean"))?,
            std_head: DenseNetwork::load(dir, &format!("inference_{i}_std"))?,
        })
    }
}

/// Ensemble of Gaussian heads with input and parameter scalers. The predicted
/// distribution matches the first two moments of the members' mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInferenceModel {
    pub members: Vec<GaussianHeads>,
    pub input_scaler: Scaler,
    pub param_scaler: Scaler,
    pub names: Vec<String>,
    /// Truncation bounds applied to drawn samples.
    pub bounds: Vec<(f64, f64)>,
}

impl ParamInferenceModel {
    pub fn k(&self) -> usize {
        self.members[0].k()
    }

    pub fn w_dim(&self) -> usize {
        self.members[0].w_dim()
    }

    fn scale_inputs(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.input_scaler.transform_rows(w)?.transpose())
    }

    /// Mixture mean and std in scaled parameter units, one sample per column.
    fn moments(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let m = self.members.len() as f64;
        let mut mean = DMatrix::zeros(self.k(), x.ncols());
        let mut second = DMatrix::zeros(self.k(), x.ncols());
        for h in &self.members {
            let f = h.forward(x)?;
            let mu = f.mean.output();
            let s = f.std.output().add_scalar(SIGMA_FLOOR);
            mean += mu / m;
            second += (mu.component_mul(mu) + s.component_mul(&s)) / m;
        }
        let var = second - mean.component_mul(&mean);
        Ok((mean, var.map(|v| v.max(SIGMA_FLOOR * SIGMA_FLOOR).sqrt())))
    }

    /// De-scaled mean and standard deviation for one feature vector.
    pub fn predict(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if w.len() != self.w_dim() {
            return Err(Error::dim(format!("feature width {} for a model expecting {}", w.len(), self.w_dim())));
        }
        let x = DMatrix::from_column_slice(w.len(), 1, &self.input_scaler.transform(w)?);
        let (mean, std) = self.moments(&x)?;
        let mu = self.param_scaler.inverse(mean.as_slice())?;
        let sigma = std.iter().enumerate().map(|(i, s)| s * span(&self.param_scaler, i)).collect();
        Ok((mu, sigma))
    }

    /// Mean Gaussian NLL of the predicted distribution in scaled parameter
    /// units, one sample per row.
    pub fn evaluate_nll(&self, ws: &DMatrix<f64>, ps: &DMatrix<f64>) -> Result<f64> {
        let x = self.scale_inputs(ws)?;
        let p = self.param_scaler.transform_rows(ps)?.transpose();
        let (mean, std) = self.moments(&x)?;
        let mut total = 0.0;
        for c in 0..p.ncols() {
            total += nll_loss(
                p.column(c).as_slice(),
                mean.column(c).as_slice(),
                std.column(c).as_slice(),
            )?;
        }
        Ok(total / p.ncols() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (i, h) in self.members.iter().enumerate() {
            h.save(dir, i)?;
        }
        let m = InferenceManifest {
            members: self.members.len(),
            input_scaler: self.input_scaler.clone(),
            param_scaler: self.param_scaler.clone(),
            names: self.names.clone(),
            bounds: self.bounds.clone(),
        };
        fs::write(dir.join("inference.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: InferenceManifest = serde_json::from_str(&fs::read_to_string(dir.join("inference.json"))?)?;
        if m.members == 0 {
            return Err(Error::Format("inference manifest lists no members".into()));
        }
        Ok(ParamInferenceModel {
            members: (0..m.members).map(|i| GaussianHeads::load(dir, i)).collect::<Result<_>>()?,
            input_scaler: m.input_scaler,
            param_scaler: m.param_scaler,
            names: m.names,
            bounds: m.bounds,
        })
    }
}

fn span(s: &Scaler, i: usize) -> f64 {
    let d = s.max[i] - s.min[i];
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InferenceManifest {
    members: usize,
    input_scaler: Scaler,
    param_scaler: Scaler,
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

/// Training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    /// Mean validation NLL per epoch, averaged over folds.
    pub validation_curve: Vec<f64>,
    /// Epoch count used for the final fit.
    pub selected_epochs: usize,
    /// Training NLL per epoch of each ensemble member.
    pub training_curves: Vec<Vec<f64>>,
}

/// Mini-batch Adam epochs. With validation data the per-epoch validation NLL
/// is recorded; without it the weights of the epoch with the lowest
/// full-data NLL are kept.
fn train_epochs(
    heads: &mut GaussianHeads,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    cfg: &InferenceConfig,
    epochs: usize,
    seed: u64,
    validation: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.ncols();
    let mut adam = Adam::new(heads.n_params(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_curve = Vec::with_capacity(epochs);
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, GaussianHeads)> = None;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (loss, g) = heads.loss_and_grads(&x.select_columns(chunk), &p.select_columns(chunk))?;
            total += loss * chunk.len() as f64 / n as f64;
            adam_step(&mut adam, &mut heads.nets_mut(), &[&g.shared, &g.mean, &g.std]);
        }
        if !total.is_finite() {
            return Err(Error::Numeric(format!("inference loss diverged at epoch {epoch}")));
        }
        train_curve.push(total);
        match validation {
            Some((vx, vp)) => val_curve.push(heads.validation_nll(vx, vp)?),
            None => {
                let fit = heads.validation_nll(x, p)?;
                if best.as_ref().is_none_or(|(b, _)| fit < *b) {
                    best = Some((fit, heads.clone()));
                }
            }
        }
    }
    if let Some((_, h)) = best {
        *heads = h;
    }
    Ok((train_curve, val_curve))
}

/// Trains the parameter-inference ensemble on features `ws` and parameters
/// `ps` (one sample per row).
///
/// k-fold cross-validation picks the epoch count with the lowest mean
/// validation NLL; every member is then fitted on all samples from its own
/// seed and keeps its best-fitting epoch.
pub fn train_inference(
    ws: &DMatrix<f64>,
    ps: &DMatrix<f64>,
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
    cfg: &InferenceConfig,
) -> Result<(ParamInferenceModel, InferenceReport)> {
    let n = ws.nrows();
    if n < 10 {
        return Err(Error::config(format!("parameter inference needs at least 10 samples, got {n}")));
    }
    if ps.nrows() != n || names.len() != ps.ncols() || bounds.len() != ps.ncols() {
        return Err(Error::dim("features, parameters, names and bounds disagree".to_string()));
    }
    if cfg.epochs == 0 || cfg.members == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::config("inference training needs epochs ≥ 1, members ≥ 1 and a positive learning rate"));
    }
    let input_scaler = Scaler::fit(ws)?;
    if input_scaler.min.iter().zip(&input_scaler.max).all(|(a, b)| a == b) {
        return Err(Error::config("monitoring features are constant across samples"));
    }
    let param_scaler = Scaler::fit(ps)?;
    let x = input_scaler.transform_rows(ws)?.transpose();
    let p = param_scaler.transform_rows(ps)?.transpose();
    let k = ps.ncols();
    let build = |seed: u64| GaussianHeads::new(ws.ncols(), k, cfg.shared, &cfg.head, &mut ChaCha8Rng::seed_from_u64(seed));

    let folds = cfg.folds.min(n);
    let selected_epochs;
    let mut validation_curve = Vec::new();
    if folds >= 2 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
        let curves = (0..folds)
            .into_par_iter()
            .map(|f| {
                let val: Vec<usize> = perm.iter().copied().skip(f).step_by(folds).collect();
                let tr: Vec<usize> = perm.iter().copied().filter(|i| !val.contains(i)).collect();
                let mut h = build(cfg.seed)?;
                let (_, vc) = train_epochs(
                    &mut h,
                    &x.select_columns(&tr),
                    &p.select_columns(&tr),
                    cfg,
                    cfg.epochs,
                    cfg.seed.wrapping_add(1 + f as u64),
                    Some((&x.select_columns(&val), &p.select_columns(&val))),
                )?;
                Ok(vc)
            })
            .collect::<Result<Vec<_>>>()?;
        validation_curve = (0..cfg.epochs)
            .map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / folds as f64)
            .collect();
        selected_epochs = 1 + validation_curve
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(e, _)| e)
            .unwrap_or(cfg.epochs - 1);
    } else {
        selected_epochs = cfg.epochs;
    }
    let fitted = (0..cfg.members)
        .into_par_iter()
        .map(|m| {
            let seed = cfg.seed.wrapping_add(1000 * (m as u64 + 1));
            let mut h = build(seed)?;
            let (curve, _) = train_epochs(&mut h, &x, &p, cfg, selected_epochs, seed, None)?;
            Ok((h, curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let (members, training_curves) = fitted.into_iter().unzip();
    let model = ParamInferenceModel { members, input_scaler, param_scaler, names, bounds };
    Ok((model, InferenceReport { validation_curve, selected_epochs, training_curves }))
}

/// Inferred parameter distribution and draws from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub mean: ParameterVector,
    pub std: Vec<f64>,
    pub samples: Vec<ParameterVector>,
}

/// Mean, std and `n_draws` Gaussian samples clamped to the truncation bounds.
pub fn infer_parameters(model: &ParamInferenceModel, w: &[f64], n_draws: usize, seed: u64) -> Result<ParameterEstimate> {
    let (mu, sigma) = model.predict(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n_draws)
        .map(|_| {
            let values = mu
                .iter()
                .zip(&sigma)
                .zip(&model.bounds)
                .map(|((m, s), (lo, hi))| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m + s * z).clamp(*lo, *hi)
                })
                .collect();
            ParameterVector { names: model.names.clone(), values }
        })
        .collect();
    let mean_values = mu.iter().zip(&model.bounds).map(|(m, (lo, hi))| m.clamp(*lo, *hi)).collect();
    Ok(ParameterEstimate {
        mean: ParameterVector { names: model.names.clone(), values: mean_values },
        std: sigma,
        samples,
    })
}

/// Column vector helper for single-sample use.
pub fn as_column(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
