//! Monitoring features: sensor noise, ARX model fitting, statistical signal
//! descriptors, min-max scaling and PCA compression.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, rms, thin_svd};

/// Monitored dofs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub dofs: Vec<usize>,
    pub names: Vec<String>,
}

impl SensorLayout {
    pub fn new(dofs: Vec<usize>, n_dof: usize) -> Result<Self> {
        if dofs.is_empty() {
            return Err(Error::config("at least one sensor is required"));
        }
        let mut seen = vec![false; n_dof];
        for &d in &dofs {
            if d >= n_dof || seen[d] {
                return Err(Error::config(format!("sensor dof {d} is out of range or repeated")));
            }
            seen[d] = true;
        }
        let names = dofs.iter().map(|d| format!("dof{d}")).collect();
        Ok(SensorLayout { dofs, names })
    }

    /// `count` sensors spread evenly over `n_dof` dofs, always including the last.
    pub fn evenly_spaced(count: usize, n_dof: usize) -> Result<Self> {
        if count == 0 || count > n_dof {
            return Err(Error::config(format!("cannot place {count} sensors on {n_dof} dofs")));
        }
        let dofs = (1..=count).map(|s| (s * n_dof).div_ceil(count) - 1).collect();
        SensorLayout::new(dofs, n_dof)
    }

    /// Index (into `dofs`) of each sensor's closest neighboring sensor.
    pub fn nearest_neighbors(&self) -> Vec<usize> {
        (0..self.dofs.len())
            .map(|s| {
                (0..self.dofs.len())
                    .filter(|&o| o != s)
                    .min_by_key(|&o| (self.dofs[s].abs_diff(self.dofs[o]), o))
                    .unwrap_or(s)
            })
            .collect()
    }

    /// Rows of `signals` at the sensor dofs.
    pub fn select(&self, signals: &DMatrix<f64>) -> DMatrix<f64> {
        signals.select_rows(&self.dofs)
    }
}

/// Adds per-channel Gaussian noise with std `ratio·RMS(channel)`.
///
/// Channel `c` draws from its own stream of the seeded generator.
pub fn add_measurement_noise(signals: &DMatrix<f64>, ratio: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(ratio >= 0.0) {
        return Err(Error::config("noise ratio must be non-negative"));
    }
    let mut out = signals.clone();
    for (c, mut row) in out.row_iter_mut().enumerate() {
        let values: Vec<f64> = row.iter().copied().collect();
        let std = ratio * rms(&values);
        if std == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for x in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += std * z;
        }
    }
    Ok(out)
}

/// Fixed random tanh layer of the nonlinear ARX variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub width: usize,
}

/// Lagged regression `y[t] = Σ a_i y[t−i] + Σ b_j x[t−d−j] (+ Σ h_k tanh(...))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxModel {
    pub na: usize,
    pub nb: usize,
    pub delay: usize,
    /// `[a_1..a_na, b_0..b_{nb−1}]`, followed by the hidden-unit weights when nonlinear.
    pub coefficients: Vec<f64>,
    pub hidden: Option<HiddenLayer>,
    /// RMS of the one-step prediction error.
    pub residual: f64,
}

impl ArxModel {
    pub fn ar(&self) -> &[f64] {
        &self.coefficients[..self.na]
    }

    pub fn exogenous(&self) -> &[f64] {
        &self.coefficients[self.na..self.na + self.nb]
    }
}

fn regressors(y: &[f64], x: &[f64], na: usize, nb: usize, d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if na == 0 || nb == 0 {
        return Err(Error::config("ARX orders must be at least 1"));
    }
    if y.len() != x.len() {
        return Err(Error::dim(format!("output has {} samples, input {}", y.len(), x.len())));
    }
    if y.len() <= na + nb + d {
        return Err(Error::config(format!(
            "signal of {} samples is too short for orders ({na}, {nb}) and delay {d}",
            y.len()
        )));
    }
    let t0 = na.max(d + nb - 1);
    let rows = y.len() - t0;
    let phi = DMatrix::from_fn(rows, na + nb, |r, c| {
        let t = t0 + r;
        if c < na {
            y[t - 1 - c]
        } else {
            x[t - d - (c - na)]
        }
    });
    let target = DVector::from_fn(rows, |r, _| y[t0 + r]);
    Ok((phi, target))
}

fn ridge(phi: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::config("regularization must be non-negative"));
    }
    if lambda == 0.0 {
        let (c, _) = lstsq(phi, &DMatrix::from_column_slice(target.len(), 1, target.as_slice()))?;
        return Ok(c.column(0).into_owned());
    }
    let mut normal = phi.tr_mul(phi);
    for i in 0..normal.nrows() {
        normal[(i, i)] += lambda;
    }
    let rhs = phi.tr_mul(target);
    normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))
}

/// Linear ARX fit by (ridge-regularized) least squares.
pub fn fit_arx(y: &[f64], x: &[f64], na: usize, nb: usize, delay: usize, lambda: f64) -> Result<ArxModel> {
    let (phi, target) = regressors(y, x, na, nb, delay)?;
    let c = ridge(&phi, &target, lambda)?;
    let residual = (&target - &phi * &c).norm() / (target.len() as f64).sqrt();
    Ok(ArxModel { na, nb, delay, coefficients: c.iter().copied().collect(), hidden: None, residual })
}

/// ARX fit augmented with `width` tanh units of fixed seeded random weights.
pub fn fit_narx(
    y: &[f64],
    x: &[f64],
    na: usize,
    nb: usize,
    delay: usize,
    lambda: f64,
    width: usize,
    seed: u64,
) -> Result<ArxModel> {
    let (phi, target) = regressors(y, x, na, nb, delay)?;
    let p = na + nb;
    let scale = phi.iter().map(|v| v * v).sum::<f64>() / phi.len().max(1) as f64;
    let gain = 1.0 / (scale.sqrt().max(f64::MIN_POSITIVE) * (p as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..width * p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            gain * z
        })
        .collect();
    let bias: Vec<f64> = (0..width)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.1 * z
        })
        .collect();
    let w = DMatrix::from_column_slice(width, p, &weights);
    let hidden = (&phi * w.transpose()).map_with_location(|_, c, v| (v + bias[c]).tanh());
    let mut full = DMatrix::zeros(phi.nrows(), p + width);
    full.columns_mut(0, p).copy_from(&phi);
    full.columns_mut(p, width).copy_from(&hidden);
    let c = ridge(&full, &target, lambda)?;
    let residual = (&target - &full * &c).norm() / (target.len() as f64).sqrt();
    Ok(ArxModel {
        na,
        nb,
        delay,
        coefficients: c.iter().copied().collect(),
        hidden: Some(HiddenLayer { weights, bias, width }),
        residual,
    })
}

/// How raw features are computed from sensor signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureMode {
    /// Per channel: mean, std, RMS, peak, kurtosis, zero-crossing rate,
    /// dominant frequency and spectral centroid.
    Statistical,
    /// Coefficients of one ARX model per sensor, driven by its nearest neighbor.
    Arx {
        na: usize,
        nb: usize,
        #[serde(default)]
        delay: usize,
        #[serde(default)]
        lambda: f64,
        /// Width of the optional tanh hidden layer.
        #[serde(default)]
        hidden: Option<usize>,
    },
}

pub const STATISTICAL_PER_CHANNEL: usize = 8;

/// Statistical descriptors of one channel sampled at `dt`.
pub fn channel_statistics(x: &[f64], dt: f64) -> [f64; STATISTICAL_PER_CHANNEL] {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let crossings = x.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
    let duration = (x.len().saturating_sub(1)) as f64 * dt;
    let zcr = if duration > 0.0 { crossings as f64 / duration } else { 0.0 };

    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    let (mut dominant, mut centroid) = (0.0, 0.0);
    if buf.len() >= 2 {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let df = 1.0 / (buf.len() as f64 * dt);
        let half = buf.len() / 2;
        let mags: Vec<f64> = buf[1..=half].iter().map(|c| c.norm()).collect();
        let total: f64 = mags.iter().sum();
        if total > 0.0 {
            let k = mags
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k + 1)
                .unwrap_or(1);
            dominant = k as f64 * df;
            centroid = mags.iter().enumerate().map(|(k, m)| (k + 1) as f64 * df * m).sum::<f64>() / total;
        }
    }
    [mean, std, rms(x), peak, kurtosis, zcr, dominant, centroid]
}

/// Raw (unscaled) feature vector of one measurement, channels as rows.
pub fn raw_features(signals: &DMatrix<f64>, dt: f64, layout: &SensorLayout, mode: &FeatureMode) -> Result<Vec<f64>> {
    if signals.nrows() != layout.dofs.len() {
        return Err(Error::dim(format!(
            "{} signal channels for {} sensors",
            signals.nrows(),
            layout.dofs.len()
        )));
    }
    let rows: Vec<Vec<f64>> = signals.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut out = Vec::new();
    match *mode {
        FeatureMode::Statistical => {
            for r in &rows {
                out.extend_from_slice(&channel_statistics(r, dt));
            }
        }
        FeatureMode::Arx { na, nb, delay, lambda, hidden } => {
            for (s, nb_idx) in layout.nearest_neighbors().into_iter().enumerate() {
                let model = match hidden {
                    Some(width) if width > 0 => fit_narx(&rows[s], &rows[nb_idx], na, nb, delay, lambda, width, s as u64)?,
                    _ => fit_arx(&rows[s], &rows[nb_idx], na, nb, delay, lambda)?,
                };
                out.extend(model.coefficients);
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite raw feature".into()));
    }
    Ok(out)
}

/// Per-feature min-max scaling to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Fits on rows of `data` (one sample per row).
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::config("cannot fit a scaler on empty data"));
        }
        let min = data.column_iter().map(|c| c.min()).collect();
        let max = data.column_iter().map(|c| c.max()).collect();
        Ok(Scaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn span(&self, j: usize) -> f64 {
        let s = self.max[j] - self.min[j];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!("{} features for a scaler of width {}", x.len(), self.dim())));
        }
        Ok(x.iter().enumerate().map(|(j, v)| (v - self.min[j]) / self.span(j)).collect())
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!("{} features for a scaler of width {}", x.len(), self.dim())));
        }
        Ok(x.iter().enumerate().map(|(j, v)| self.min[j] + v * self.span(j)).collect())
    }

    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::dim(format!("{} columns for a scaler of width {}", data.ncols(), self.dim())));
        }
        Ok(DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| (data[(i, j)] - self.min[j]) / self.span(j)))
    }
}

/// Principal-component projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Components as columns, `d × k`.
    pub components: Vec<Vec<f64>>,
    /// Sample variances along each component, non-increasing.
    pub variances: Vec<f64>,
}

/// Fits `out_dim` principal components to the rows of `data`.
///
/// Component signs are fixed so that each component's largest-magnitude entry is positive.
pub fn pca_fit(data: &DMatrix<f64>, out_dim: usize) -> Result<Pca> {
    let (n, d) = data.shape();
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(Error::config(format!("PCA dimension {out_dim} exceeds min({n}, {d})")));
    }
    let mean: Vec<f64> = data.column_iter().map(|c| c.mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let (_, s, w) = thin_svd(&centered)?;
    let denom = (n.max(2) - 1) as f64;
    let mut components = Vec::with_capacity(out_dim);
    let mut variances = Vec::with_capacity(out_dim);
    for k in 0..out_dim {
        let mut c: Vec<f64> = w.column(k).iter().copied().collect();
        let pivot = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        variances.push(s[k] * s[k] / denom);
    }
    Ok(Pca { mean, components, variances })
}

impl Pca {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dim(format!("{} features for a PCA of width {}", x.len(), self.in_dim())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.out_dim() {
            return Err(Error::dim(format!("{} scores for {} components", z.len(), self.out_dim())));
        }
        let mut x = self.mean.clone();
        for (c, zk) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += zk * ci;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub mode: FeatureMode,
    /// Final feature dimension after PCA.
    pub pca_dim: usize,
    /// Trailing window (s) of the signal used for features; full history when absent.
    #[serde(default)]
    pub window: Option<f64>,
}

/// Conditioning vector `w` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitoringFeatures {
    pub w: DVector<f64>,
    pub raw_dim: usize,
}

/// Raw feature computation plus the fitted scaler and PCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub config: FeatureConfig,
    pub layout: SensorLayout,
    pub dt: f64,
    #[serde(default)]
    pub scaler: Option<Scaler>,
    #[serde(default)]
    pub pca: Option<Pca>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, layout: SensorLayout, dt: f64) -> Self {
        FeatureExtractor { config, layout, dt, scaler: None, pca: None }
    }

    /// Raw features of full-model signals (all dofs as rows).
    pub fn raw(&self, signals: &DMatrix<f64>) -> Result<Vec<f64>> {
        let sensed = if signals.nrows() == self.layout.dofs.len() {
            signals.clone()
        } else {
            self.layout.select(signals)
        };
        let windowed = match self.config.window {
            Some(w) if w > 0.0 => {
                let keep = ((w / self.dt).round() as usize + 1).min(sensed.ncols());
                sensed.columns(sensed.ncols() - keep, keep).into_owned()
            }
            _ => sensed,
        };
        raw_features(&windowed, self.dt, &self.layout, &self.config.mode)
    }

    /// Fits scaler and PCA on raw features (one sample per row) and returns
    /// the transformed training features.
    pub fn fit(&mut self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let scaler = Scaler::fit(raw)?;
        let scaled = scaler.transform_rows(raw)?;
        let pca = pca_fit(&scaled, self.config.pca_dim)?;
        let mut out = DMatrix::zeros(raw.nrows(), pca.out_dim());
        for i in 0..raw.nrows() {
            let row: Vec<f64> = scaled.row(i).iter().copied().collect();
            let z = pca.transform(&row)?;
            out.row_mut(i).copy_from_slice(&z);
        }
        self.scaler = Some(scaler);
        self.pca = Some(pca);
        Ok(out)
    }

    pub fn is_fitted(&self) -> bool {
        self.scaler.is_some() && self.pca.is_some()
    }

    pub fn transform_raw(&self, raw: &[f64]) -> Result<MonitoringFeatures> {
        let (Some(scaler), Some(pca)) = (&self.scaler, &self.pca) else {
            return Err(Error::Untrained("feature scaler/PCA".into()));
        };
        let z = pca.transform(&scaler.transform(raw)?)?;
        Ok(MonitoringFeatures { w: DVector::from_vec(z), raw_dim: raw.len() })
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.pca.as_ref().map(Pca::out_dim)
    }
}

/// Features of one measurement (full-model acceleration signals).
pub fn extract_features(signals: &DMatrix<f64>, extractor: &FeatureExtractor) -> Result<MonitoringFeatures> {
    if !extractor.is_fitted() {
        return Err(Error::Untrained("feature scaler/PCA".into()));
    }
    extractor.transform_raw(&extractor.raw(signals)?)
}
