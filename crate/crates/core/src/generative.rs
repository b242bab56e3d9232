//! Conditional variational autoencoder over flattened basis-coefficient
//! matrices, conditioned on monitoring features.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, thin_svd};
use crate::monitoring::Scaler;
use crate::neural::{adam_step, Activation, Adam, DenseNetwork, Gradients};
use crate::reduction::{CoefficientMatrix, GlobalBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Weight of the projection-error term of the augmented loss.
    #[serde(default)]
    pub gamma1: f64,
    /// Weight of the ROM-error score of the augmented loss.
    #[serde(default)]
    pub gamma2: f64,
    /// Fraction of epochs after which the augmented phase starts.
    #[serde(default = "default_augment_after")]
    pub augment_after: f64,
    /// Latent draws per sample and step.
    #[serde(default = "default_nv")]
    pub n_v: usize,
    /// Epoch interval of the augmented-phase selection score; the last epoch is always scored.
    #[serde(default = "default_selection_every")]
    pub selection_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_selection_every() -> usize {
    10
}

fn default_latent() -> usize {
    12
}
fn default_hidden() -> usize {
    64
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-4
}
fn default_augment_after() -> f64 {
    0.8
}
fn default_nv() -> usize {
    1
}

impl CvaeConfig {
    pub fn new(epochs: usize) -> Self {
        CvaeConfig {
            latent_dim: default_latent(),
            hidden: default_hidden(),
            epochs,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            gamma1: 0.0,
            gamma2: 0.0,
            augment_after: default_augment_after(),
            n_v: default_nv(),
            selection_every: default_selection_every(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.n_v == 0 || self.selection_every == 0 {
            return Err(Error::config("cVAE sizes, batch size, n_v and selection_every must be positive"));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(Error::config("augmented-loss weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.augment_after) || !(self.learning_rate > 0.0) {
            return Err(Error::config("augment_after must lie in [0, 1] and the learning rate be positive"));
        }
        Ok(())
    }
}

/// Encoder/decoder pair with the observation and condition scalers.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub r_tilde: usize,
    pub r: usize,
    pub scaler: Scaler,
    pub cond_scaler: Scaler,
}

impl CvaeModel {
    /// Fresh model: encoder `(obs + w) → h → h → h → 2J`, decoder `(J + w) → h → h → h → obs`.
    pub fn new(r_tilde: usize, r: usize, cond_dim: usize, scaler: Scaler, cfg: &CvaeConfig) -> Result<Self> {
        cfg.validate()?;
        let obs = r_tilde * r;
        if scaler.dim() != obs {
            return Err(Error::dim(format!("scaler of width {} for {obs} observations", scaler.dim())));
        }
        let (h, j) = (cfg.hidden, cfg.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        use Activation::*;
        let encoder = DenseNetwork::new(&[obs + cond_dim, h, h, h, 2 * j], &[Tanh, Tanh, Tanh, Linear], &mut rng)?;
        let decoder = DenseNetwork::new(&[j + cond_dim, h, h, h, obs], &[Linear, Tanh, Tanh, Linear], &mut rng)?;
        let cond_scaler = Scaler { min: vec![0.0; cond_dim], max: vec![1.0; cond_dim] };
        Ok(CvaeModel { encoder, decoder, latent_dim: j, cond_dim, r_tilde, r, scaler, cond_scaler })
    }

    pub fn obs_dim(&self) -> usize {
        self.r_tilde * self.r
    }

    /// Scaled condition vector.
    fn cond(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.cond_dim {
            return Err(Error::dim(format!("condition of width {} for a model expecting {}", w.len(), self.cond_dim)));
        }
        self.cond_scaler.transform(w)
    }

    /// Latent mean and standard deviation `σ = exp(½ logvar)` of one observation.
    pub fn encode(&self, x_flat: &[f64], w: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let w = self.cond(w)?;
        let xs = self.scaler.transform(x_flat)?;
        let input = DMatrix::from_iterator(self.obs_dim() + self.cond_dim, 1, xs.into_iter().chain(w));
        let out = self.encoder.predict(&input)?;
        let j = self.latent_dim;
        let mu = out.rows(0, j).column(0).into_owned();
        let sigma = out.rows(j, j).column(0).map(|lv| (0.5 * lv).exp());
        Ok((mu, sigma))
    }

    /// Decoded, de-scaled coefficient matrix for latent `z`.
    pub fn decode(&self, z: &[f64], w: &[f64]) -> Result<CoefficientMatrix> {
        let w = self.cond(w)?;
        if z.len() != self.latent_dim {
            return Err(Error::dim(format!("latent of width {} for J = {}", z.len(), self.latent_dim)));
        }
        let input = DMatrix::from_iterator(self.latent_dim + self.cond_dim, 1, z.iter().chain(&w).copied());
        let out = self.decoder.predict(&input)?;
        let flat = self.scaler.inverse(out.as_slice())?;
        CoefficientMatrix::from_flat(self.r_tilde, self.r, &flat)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.encoder.save(dir, "cvae_encoder")?;
        self.decoder.save(dir, "cvae_decoder")?;
        let manifest = CvaeManifest {
            latent_dim: self.latent_dim,
            cond_dim: self.cond_dim,
            r_tilde: self.r_tilde,
            r: self.r,
            scaler: self.scaler.clone(),
            cond_scaler: self.cond_scaler.clone(),
        };
        fs::write(dir.join("cvae.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: CvaeManifest = serde_json::from_str(&fs::read_to_string(dir.join("cvae.json"))?)?;
        Ok(CvaeModel {
            encoder: DenseNetwork::load(dir, "cvae_encoder")?,
            decoder: DenseNetwork::load(dir, "cvae_decoder")?,
            latent_dim: m.latent_dim,
            cond_dim: m.cond_dim,
            r_tilde: m.r_tilde,
            r: m.r,
            scaler: m.scaler,
            cond_scaler: m.cond_scaler,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CvaeManifest {
    latent_dim: usize,
    cond_dim: usize,
    r_tilde: usize,
    r: usize,
    scaler: Scaler,
    cond_scaler: Scaler,
}

/// `z = μ + η ⊙ σ`.
pub fn reparameterize(mu: &DVector<f64>, sigma: &DVector<f64>, eta: &DVector<f64>) -> Result<DVector<f64>> {
    if mu.len() != sigma.len() || mu.len() != eta.len() {
        return Err(Error::dim("μ, σ and η must share a length".to_string()));
    }
    Ok(mu + eta.component_mul(sigma))
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)`.
pub fn kl_gaussian(mu: &DVector<f64>, sigma: &DVector<f64>) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::dim("μ and σ must share a length".to_string()));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::config("σ must be positive"));
    }
    Ok(0.5 * mu.iter().zip(sigma).map(|(m, s)| m * m + s * s - 1.0 - (s * s).ln()).sum::<f64>())
}

/// Loss value split into its parts (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub reconstruction: f64,
    pub kl: f64,
    pub projection: f64,
    pub rom: f64,
}

impl LossParts {
    pub fn total(&self, gamma1: f64, gamma2: f64) -> f64 {
        let mut t = self.reconstruction + self.kl;
        if gamma1 != 0.0 {
            t += gamma1 * self.projection;
        }
        if gamma2 != 0.0 {
            t += gamma2 * self.rom;
        }
        t
    }
}

/// A mini-batch: scaled observations and conditions as columns, plus latent noise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// One `J × B` matrix per latent draw.
    pub eta: Vec<DMatrix<f64>>,
    /// Training-sample index of each column (used by the augmented terms).
    pub samples: Vec<usize>,
}

/// Gradients of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

/// Reference data of the augmented loss.
pub struct AugmentContext<'a> {
    pub global: &'a GlobalBasis,
    /// Reference snapshots `Û` of each training sample (already time-subsampled).
    pub references: &'a [DMatrix<f64>],
    /// Relative ROM error of a candidate basis for a training sample.
    pub rom_error: Option<&'a (dyn Fn(usize, &DMatrix<f64>) -> Result<f64> + Sync)>,
}

/// Projection-error machinery in global coordinates.
struct ProjectionTerm {
    /// `G = (V_gᵀÛ)(V_gᵀÛ)ᵀ / ‖Û‖²` per sample.
    grams: Vec<DMatrix<f64>>,
    /// `1 − ‖V_gV_gᵀÛ‖²/‖Û‖²`: the part of `Û` no basis inside `span(V_g)` can capture.
    floor: Vec<f64>,
    r_tilde: usize,
    r: usize,
}

impl ProjectionTerm {
    fn new(ctx: &AugmentContext, r: usize) -> Result<Self> {
        let vg = &ctx.global.modes;
        let mut grams = Vec::with_capacity(ctx.references.len());
        let mut floor = Vec::with_capacity(ctx.references.len());
        for u in ctx.references {
            let n2 = u.norm_squared();
            if n2 == 0.0 {
                return Err(Error::NoEnergy);
            }
            let c = vg.tr_mul(u);
            let g = (&c * c.transpose()) / n2;
            floor.push((1.0 - g.trace()).max(0.0));
            grams.push(g);
        }
        Ok(ProjectionTerm { grams, floor, r_tilde: vg.ncols(), r })
    }

    /// `‖ṼṼᵀÛ − Û‖/‖Û‖` for the basis generated by coefficients `x` (r̃×r, column-major).
    fn value(&self, sample: usize, x: &[f64]) -> Result<f64> {
        let y = generated_coordinates(self.r_tilde, self.r, x)?;
        let captured = (y.transpose() * &self.grams[sample] * &y).trace();
        Ok((1.0 - captured).max(self.floor[sample]).max(0.0).sqrt())
    }

    /// Central-difference gradient with respect to the coefficients; the
    /// leading `r` rows do not enter the generated basis and get zero.
    fn gradient(&self, sample: usize, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f0 = self.value(sample, x)?;
        let mut xp = x.to_vec();
        let mut g = vec![0.0; x.len()];
        for k in (0..x.len()).filter(|k| k % self.r_tilde >= self.r) {
            let h = 1e-6 * x[k].abs().max(1.0);
            let orig = xp[k];
            xp[k] = orig + h;
            let fp = self.value(sample, &xp)?;
            xp[k] = orig - h;
            let fm = self.value(sample, &xp)?;
            xp[k] = orig;
            g[k] = (fp - fm) / (2.0 * h);
        }
        Ok((f0, g))
    }
}

/// Coordinates `Y = V_gᵀṼ` of the basis generated from coefficients, with the
/// reference point at the leading `r` global modes.
pub fn generated_coordinates(r_tilde: usize, r: usize, x: &[f64]) -> Result<DMatrix<f64>> {
    let mut gamma = DMatrix::from_column_slice(r_tilde, r, x);
    gamma.rows_mut(0, r).fill(0.0);
    let mut y0 = DMatrix::zeros(r_tilde, r);
    y0.view_mut((0, 0), (r, r)).fill_with_identity();
    if gamma.iter().all(|&v| v == 0.0) {
        return Ok(y0);
    }
    let (u, s, w) = thin_svd(&gamma)?;
    let cos = DMatrix::from_diagonal(&s.map(f64::cos));
    let sin = DMatrix::from_diagonal(&s.map(f64::sin));
    orthonormalize(&((&y0 * &w * cos + u * sin) * w.transpose()))
}

/// `‖VVᵀÛ − Û‖_F / ‖Û‖_F`.
pub fn projection_error(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<f64> {
    let n = u.norm();
    if n == 0.0 {
        return Err(Error::NoEnergy);
    }
    Ok((v * v.tr_mul(u) - u).norm() / n)
}

fn split_latent(out: &DMatrix<f64>, j: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (out.rows(0, j).into_owned(), out.rows(j, j).into_owned())
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

fn batch_gradients(
    model: &CvaeModel,
    batch: &Batch,
    proj: Option<(&ProjectionTerm, f64)>,
) -> Result<(LossParts, CvaeGradients)> {
    let bsz = batch.x.ncols();
    if bsz == 0 || batch.w.ncols() != bsz || batch.eta.is_empty() {
        return Err(Error::dim("empty or inconsistent batch".to_string()));
    }
    let j = model.latent_dim;
    let nv = batch.eta.len() as f64;
    let scale = 1.0 / (bsz as f64 * nv);
    let enc_in = stack(&batch.x, &batch.w);
    let enc_cache = model.encoder.forward(&enc_in)?;
    let (mu, logvar) = split_latent(enc_cache.output(), j);
    let sigma = logvar.map(|lv| (0.5 * lv).exp());

    let mut parts = LossParts::default();
    let mut g_dec = Gradients::zeros_like(&model.decoder);
    let mut d_mu = DMatrix::zeros(j, bsz);
    let mut d_lv = DMatrix::zeros(j, bsz);

    for eta in &batch.eta {
        if eta.shape() != (j, bsz) {
            return Err(Error::dim(format!("latent noise {:?}, expected ({j}, {bsz})", eta.shape())));
        }
        let z = &mu + eta.component_mul(&sigma);
        let dec_cache = model.decoder.forward(&stack(&z, &batch.w))?;
        let xhat = dec_cache.output();
        let diff = xhat - &batch.x;
        parts.reconstruction += 0.5 * diff.norm_squared() * scale;
        let mut upstream = diff * scale;
        if let Some((term, gamma1)) = proj {
            for c in 0..bsz {
                let descaled = model.scaler.inverse(xhat.column(c).as_slice())?;
                let (val, grad) = term.gradient(batch.samples[c], &descaled)?;
                parts.projection += val * scale;
                for (k, gk) in grad.iter().enumerate() {
                    let span = model.scaler.max[k] - model.scaler.min[k];
                    let span = if span > 0.0 { span } else { 1.0 };
                    upstream[(k, c)] += gamma1 * scale * gk * span;
                }
            }
        }
        let (gd, d_in) = model.decoder.backward(&dec_cache, &upstream);
        g_dec.add_assign(&gd);
        let dz = d_in.rows(0, j);
        d_mu += &dz;
        d_lv += dz.component_mul(eta).component_mul(&sigma) * 0.5;
    }
    let kl_scale = 1.0 / bsz as f64;
    for c in 0..bsz {
        for i in 0..j {
            let (m, lv, s) = (mu[(i, c)], logvar[(i, c)], sigma[(i, c)]);
            parts.kl += 0.5 * (m * m + s * s - 1.0 - lv) * kl_scale;
            d_mu[(i, c)] += m * kl_scale;
            d_lv[(i, c)] += 0.5 * (s * s - 1.0) * kl_scale;
        }
    }
    let (g_enc, _) = model.encoder.backward(&enc_cache, &stack(&d_mu, &d_lv));
    Ok((parts, CvaeGradients { encoder: g_enc, decoder: g_dec }))
}

/// Batch-mean `½‖x − x̂‖² + KL` and its gradients.
pub fn elbo_loss(model: &CvaeModel, batch: &Batch) -> Result<(f64, LossParts, CvaeGradients)> {
    let (parts, g) = batch_gradients(model, batch, None)?;
    Ok((parts.reconstruction + parts.kl, parts, g))
}

/// ELBO plus `γ₁·(projection error)` and `γ₂·(ROM error)`.
///
/// Only the projection term contributes gradients (through the decoder); the
/// ROM term is a value-only score computed with the decoded batch.
pub fn augmented_loss(
    model: &CvaeModel,
    batch: &Batch,
    ctx: &AugmentContext,
    gamma1: f64,
    gamma2: f64,
) -> Result<(f64, LossParts, CvaeGradients)> {
    if gamma1 == 0.0 && gamma2 == 0.0 {
        return elbo_loss(model, batch);
    }
    let term = ProjectionTerm::new(ctx, model.r)?;
    let (mut parts, g) = batch_gradients(model, batch, (gamma1 != 0.0).then_some((&term, gamma1)))?;
    if gamma2 != 0.0 {
        if let Some(rom) = ctx.rom_error {
            let j = model.latent_dim;
            let enc = model.encoder.predict(&stack(&batch.x, &batch.w))?;
            let sigma = enc.rows(j, j).map(|lv| (0.5 * lv).exp());
            let z = enc.rows(0, j) + batch.eta[0].component_mul(&sigma);
            let xhat = model.decoder.predict(&stack(&z, &batch.w))?;
            let mut total = 0.0;
            for c in 0..batch.x.ncols() {
                let flat = model.scaler.inverse(xhat.column(c).as_slice())?;
                total += rom_score(rom, ctx.global, model, batch.samples[c], &flat);
            }
            parts.rom = total / batch.x.ncols() as f64;
        }
    }
    Ok((parts.total(gamma1, gamma2), parts, g))
}

/// Penalty used when a candidate basis makes the ROM fail.
const ROM_FAILURE_PENALTY: f64 = 1.0;

fn rom_score(
    rom: &(dyn Fn(usize, &DMatrix<f64>) -> Result<f64> + Sync),
    global: &GlobalBasis,
    model: &CvaeModel,
    sample: usize,
    flat: &[f64],
) -> f64 {
    let basis = generated_coordinates(model.r_tilde, model.r, flat).map(|y| &global.modes * y);
    match basis.and_then(|v| rom(sample, &v)) {
        Ok(e) if e.is_finite() => e.min(ROM_FAILURE_PENALTY),
        Ok(_) | Err(_) => {
            log::warn!("ROM evaluation failed for training sample {sample}; applying penalty");
            ROM_FAILURE_PENALTY
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub augmented: bool,
    /// Model-selection score of the augmented phase (mean-latent decode).
    #[serde(default)]
    pub selection_score: Option<f64>,
}

/// Trains a cVAE on coefficient matrices `xs` (flattened, one per row) with conditions `ws`.
pub fn train_cvae(
    xs: &DMatrix<f64>,
    ws: &DMatrix<f64>,
    r_tilde: usize,
    r: usize,
    cfg: &CvaeConfig,
    ctx: Option<&AugmentContext>,
) -> Result<(CvaeModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    let n = xs.nrows();
    if n == 0 || ws.nrows() != n || xs.ncols() != r_tilde * r {
        return Err(Error::dim(format!(
            "{} observations of width {} with {} conditions for a {r_tilde}×{r} coefficient layout",
            n,
            xs.ncols(),
            ws.nrows()
        )));
    }
    if let Some(c) = ctx {
        if c.references.len() != n {
            return Err(Error::dim(format!("{} references for {n} samples", c.references.len())));
        }
    }
    let scaler = Scaler::fit(xs)?;
    let mut model = CvaeModel::new(r_tilde, r, ws.ncols(), scaler, cfg)?;
    model.cond_scaler = Scaler::fit(ws)?;
    let xs_scaled = model.scaler.transform_rows(xs)?.transpose();
    let ws_t = model.cond_scaler.transform_rows(ws)?.transpose();
    let mut adam = Adam::new(model.encoder.n_params() + model.decoder.n_params(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let augmenting = ctx.is_some() && (cfg.gamma1 > 0.0 || cfg.gamma2 > 0.0);
    let start_aug = (cfg.augment_after * cfg.epochs as f64).floor() as usize;
    let proj = match (augmenting, ctx) {
        (true, Some(c)) => Some(ProjectionTerm::new(c, r)?),
        _ => None,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, CvaeModel)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let aug = augmenting && epoch >= start_aug;
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                x: xs_scaled.select_columns(chunk),
                w: ws_t.select_columns(chunk),
                eta: (0..cfg.n_v)
                    .map(|_| DMatrix::from_fn(model.latent_dim, chunk.len(), |_, _| StandardNormal.sample(&mut rng)))
                    .collect(),
                samples: chunk.to_vec(),
            };
            let term = if aug && cfg.gamma1 > 0.0 { proj.as_ref().map(|p| (p, cfg.gamma1)) } else { None };
            let (parts, g) = batch_gradients(&model, &batch, term)?;
            let weight = chunk.len() as f64 / n as f64;
            sums.reconstruction += parts.reconstruction * weight;
            sums.kl += parts.kl * weight;
            total += parts.total(cfg.gamma1, 0.0) * weight;
            let CvaeModel { encoder, decoder, .. } = &mut model;
            adam_step(&mut adam, &mut [encoder, decoder], &[&g.encoder, &g.decoder]);
        }
        if !total.is_finite() {
            return Err(Error::Numeric(format!("cVAE loss diverged at epoch {epoch}")));
        }
        let mut record = EpochRecord {
            epoch,
            loss: total,
            reconstruction: sums.reconstruction,
            kl: sums.kl,
            augmented: aug,
            selection_score: None,
        };
        let scored = (epoch - start_aug.min(epoch)) % cfg.selection_every == 0 || epoch + 1 == cfg.epochs;
        if aug && scored {
            if let (Some(c), Some(p)) = (ctx, proj.as_ref()) {
                let score = selection_score(&model, &xs_scaled, &ws_t, c, p, cfg)?;
                record.selection_score = Some(score);
                if best.as_ref().is_none_or(|(b, _)| score < *b) {
                    best = Some((score, model.clone()));
                }
            }
        }
        log::debug!("cVAE epoch {epoch}: loss {total:.6e}");
        history.push(record);
    }
    if let Some((_, m)) = best {
        model = m;
    }
    Ok((model, history))
}

/// Mean-latent score `recon + KL + γ₁·projection + γ₂·ROM error` over the training set.
fn selection_score(
    model: &CvaeModel,
    xs_scaled: &DMatrix<f64>,
    ws_t: &DMatrix<f64>,
    ctx: &AugmentContext,
    proj: &ProjectionTerm,
    cfg: &CvaeConfig,
) -> Result<f64> {
    let n = xs_scaled.ncols();
    let j = model.latent_dim;
    let enc = model.encoder.predict(&stack(xs_scaled, ws_t))?;
    let mu = enc.rows(0, j).into_owned();
    let logvar = enc.rows(j, j).into_owned();
    let xhat = model.decoder.predict(&stack(&mu, ws_t))?;
    let mut score = 0.5 * (&xhat - xs_scaled).norm_squared() / n as f64;
    for c in 0..n {
        for i in 0..j {
            let (m, lv) = (mu[(i, c)], logvar[(i, c)]);
            score += 0.5 * (m * m + lv.exp() - 1.0 - lv) / n as f64;
        }
    }
    let flats: Vec<Vec<f64>> = (0..n)
        .map(|c| model.scaler.inverse(xhat.column(c).as_slice()))
        .collect::<Result<_>>()?;
    if cfg.gamma1 > 0.0 {
        let p: f64 = (0..n).map(|c| proj.value(c, &flats[c])).sum::<Result<f64>>()?;
        score += cfg.gamma1 * p / n as f64;
    }
    if cfg.gamma2 > 0.0 {
        if let Some(rom) = ctx.rom_error {
            let e: f64 = (0..n)
                .into_par_iter()
                .map(|c| rom_score(rom, ctx.global, model, c, &flats[c]))
                .collect::<Vec<_>>()
                .into_iter()
                .sum();
            score += cfg.gamma2 * e / n as f64;
        }
    }
    Ok(score)
}

/// Decoded coefficient draws `decode(ε ⊕ w)` with `ε ~ N(0, I_J)`, plus the
/// prior-mean prediction `decode(0 ⊕ w)`.
pub fn generate_coefficients(
    model: &CvaeModel,
    w: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<(Vec<CoefficientMatrix>, CoefficientMatrix)> {
    model.cond(w)?;
    let j = model.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..n_draws)
        .map(|_| {
            let eps: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
            model.decode(&eps, w)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = model.decode(&vec![0.0; j], w)?;
    Ok((draws, mean))
}
