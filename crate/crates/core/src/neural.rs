//! Batched dense networks with exact reverse-mode gradients and the Adam optimizer.
//!
//! Samples are columns: a batch of `B` inputs of width `d` is a `d × B` matrix.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer, then the network output.
    pub activations: Vec<DMatrix<f64>>,
    /// Pre-activation of every layer.
    pub pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Parameter gradients laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            w: net.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            b: net.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights and zero biases; `sizes` has one entry more than `acts`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], acts: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() != acts.len() + 1 || acts.is_empty() || sizes.contains(&0) {
            return Err(Error::config(format!(
                "{} layer sizes for {} activations",
                sizes.len(),
                acts.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(acts)
            .map(|(d, &act)| {
                let limit = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-limit..limit)),
                    b: DVector::zeros(d[1]),
                    act,
                }
            })
            .collect();
        Ok(DenseNetwork { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.act).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        if x.nrows() != self.in_dim() {
            return Err(Error::dim(format!("input width {} for a network expecting {}", x.nrows(), self.in_dim())));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for l in &self.layers {
            let mut z = &l.w * activations.last().expect("pushed");
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            let a = z.map(|v| l.act.apply(v));
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x)?.activations.pop().expect("non-empty"))
    }

    /// Gradients of a scalar loss given `∂loss/∂output`, plus `∂loss/∂input`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> (Gradients, DMatrix<f64>) {
        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[k];
            let a = &cache.activations[k + 1];
            let dz = delta.zip_zip_map(z, a, |d, z, a| d * l.act.derivative(z, a));
            gw.push(&dz * cache.activations[k].transpose());
            gb.push(dz.column_sum());
            delta = l.w.tr_mul(&dz);
        }
        gw.reverse();
        gb.reverse();
        (Gradients { w: gw, b: gb }, delta)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dim(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Writes `<stem>.bin` (flat parameters) and `<stem>.json` (layer layout).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let manifest = NetworkManifest { sizes: self.sizes(), activations: self.activations() };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
        io::write_vector(dir.join(format!("{stem}.bin")), &DVector::from_vec(self.params_flat()))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let manifest: NetworkManifest = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let params = io::read_vector(dir.join(format!("{stem}.bin")))?;
        let mut net = DenseNetwork::zeros(&manifest.sizes, &manifest.activations)?;
        net.set_params_flat(params.as_slice())?;
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Result<Self> {
        if sizes.len() != acts.len() + 1 || acts.is_empty() {
            return Err(Error::Format("network manifest is inconsistent".into()));
        }
        Ok(DenseNetwork {
            layers: sizes
                .windows(2)
                .zip(acts)
                .map(|(d, &act)| Layer { w: DMatrix::zeros(d[1], d[0]), b: DVector::zeros(d[1]), act })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkManifest {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Applies one Adam step to every parameter of `nets`, in order.
pub fn adam_step(state: &mut Adam, nets: &mut [&mut DenseNetwork], grads: &[&Gradients]) {
    let mut params: Vec<f64> = nets.iter().flat_map(|n| n.params_flat()).collect();
    let g: Vec<f64> = grads.iter().flat_map(|g| g.flat()).collect();
    state.update(&mut params, &g);
    let mut at = 0;
    for n in nets.iter_mut() {
        let k = n.n_params();
        n.set_params_flat(&params[at..at + k]).expect("sizes unchanged");
        at += k;
    }
}
