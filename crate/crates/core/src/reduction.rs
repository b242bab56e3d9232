//! Snapshot matrices, POD bases, Grassmann log/exp maps and the coefficient
//! matrices that express local bases in a shared global basis.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::dynamics::{ParameterVector, TimeHistory};
use crate::error::{Error, Result};
use crate::linalg::{left_singular, lstsq, matrix_hash, orthonormalize, thin_svd};

/// Displacement histories of several parameter samples, side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    /// Columns contributed by each sample.
    pub ranges: Vec<Range<usize>>,
    pub params: Vec<ParameterVector>,
}

pub fn assemble_snapshots(histories: &[TimeHistory], params: &[ParameterVector]) -> Result<SnapshotMatrix> {
    let first = histories.first().ok_or_else(|| Error::config("no histories to assemble"))?;
    if histories.len() != params.len() {
        return Err(Error::dim(format!("{} histories for {} parameter tags", histories.len(), params.len())));
    }
    let n = first.n_dof();
    if let Some(bad) = histories.iter().position(|h| h.n_dof() != n) {
        return Err(Error::dim(format!("history {bad} has {} dofs, expected {n}", histories[bad].n_dof())));
    }
    let total: usize = histories.iter().map(TimeHistory::n_states).sum();
    let mut data = DMatrix::zeros(n, total);
    let mut ranges = Vec::with_capacity(histories.len());
    let mut at = 0;
    for h in histories {
        let c = h.n_states();
        data.columns_mut(at, c).copy_from(&h.displacement);
        ranges.push(at..at + c);
        at += c;
    }
    Ok(SnapshotMatrix { data, ranges, params: params.to_vec() })
}

/// Orthonormal POD modes with the full singular-value spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn r(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    /// `‖S − VVᵀS‖²_F / ‖S‖²_F`.
    pub fn projection_error(&self, s: &DMatrix<f64>) -> f64 {
        projection_error(&self.modes, s)
    }
}

pub fn projection_error(v: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let total = s.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    let coeffs = v.transpose() * s;
    (s - v * coeffs).norm_squared() / total
}

/// Smallest `r ≥ 1` whose discarded energy fraction is at most `eps`.
pub fn truncation_order(singular_values: &[f64], eps: f64) -> usize {
    let energies: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let total: f64 = energies.iter().sum();
    let mut tail = total;
    for (r, e) in energies.iter().enumerate() {
        if r > 0 && tail <= eps * total {
            return r;
        }
        tail -= e;
        // Recompute the tail exactly once the running difference loses precision.
        if tail < 1e-8 * total {
            tail = energies[r + 1..].iter().sum();
        }
    }
    energies.len().max(1)
}

fn spectrum(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (u, sv) = left_singular(s)?;
    if sv.first().is_none_or(|&s0| !(s0 > 0.0)) {
        return Err(Error::NoEnergy);
    }
    Ok((u, sv))
}

/// POD basis truncated by the energy criterion.
pub fn compute_pod(s: &DMatrix<f64>, eps: f64) -> Result<PodBasis> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::config("POD tolerance must lie in (0, 1)"));
    }
    let (u, sv) = spectrum(s)?;
    let r = truncation_order(&sv, eps);
    Ok(PodBasis { modes: u.columns(0, r).into_owned(), singular_values: sv })
}

/// POD basis with a prescribed number of modes.
pub fn compute_pod_order(s: &DMatrix<f64>, r: usize) -> Result<PodBasis> {
    let (u, sv) = spectrum(s)?;
    if r == 0 || r > u.ncols() {
        return Err(Error::config(format!("cannot keep {r} modes out of {}", u.ncols())));
    }
    Ok(PodBasis { modes: u.columns(0, r).into_owned(), singular_values: sv })
}

/// Basis spanning the pooled snapshots of all training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBasis {
    pub modes: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl GlobalBasis {
    pub fn new(pod: PodBasis) -> Self {
        GlobalBasis { modes: pod.modes, singular_values: pod.singular_values }
    }

    pub fn r_tilde(&self) -> usize {
        self.modes.ncols()
    }

    /// Content hash used to bind dependent data (weights, coefficients).
    pub fn hash(&self) -> String {
        matrix_hash(&self.modes)
    }

    /// Tangent-space reference point: the leading `r` global modes.
    pub fn reference(&self, r: usize) -> Result<DMatrix<f64>> {
        if r == 0 || r > self.r_tilde() {
            return Err(Error::config(format!("reference order {r} outside 1..={}", self.r_tilde())));
        }
        Ok(self.modes.columns(0, r).into_owned())
    }
}

/// Tangent vector `Γ` at a reference subspace `V0`, with `V0ᵀΓ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub gamma: DMatrix<f64>,
}

/// Relative singular-value threshold below which `V0ᵀVi` counts as singular.
const SINGULAR_OVERLAP: f64 = 1e-10;

/// Logarithm map `Γ = U atan(Σ) Wᵀ` of `span(vi)` at `span(v0)`.
pub fn grassmann_log(v0: &DMatrix<f64>, vi: &DMatrix<f64>) -> Result<TangentVector> {
    if v0.shape() != vi.shape() {
        return Err(Error::dim(format!("bases of shape {:?} and {:?}", v0.shape(), vi.shape())));
    }
    let overlap = v0.transpose() * vi;
    let sv = overlap.singular_values();
    if !(sv.min() > SINGULAR_OVERLAP * sv.max().max(1.0)) {
        return Err(Error::Geometry(format!(
            "subspaces are (nearly) orthogonal; smallest cosine {:.3e}",
            sv.min()
        )));
    }
    let inv = overlap
        .try_inverse()
        .ok_or_else(|| Error::Geometry("reference overlap is singular".into()))?;
    let horizontal = (vi - v0 * (v0.transpose() * vi)) * inv;
    let (u, s, w) = thin_svd(&horizontal)?;
    let mut gamma = u * DMatrix::from_diagonal(&s.map(f64::atan)) * w.transpose();
    // Remove the rounding-level vertical component.
    gamma -= v0 * (v0.transpose() * &gamma);
    Ok(TangentVector { gamma })
}

/// Exponential map `V = V0 W cos(Σ) Wᵀ + U sin(Σ) Wᵀ`, re-orthonormalized.
pub fn grassmann_exp(v0: &DMatrix<f64>, gamma: &TangentVector) -> Result<DMatrix<f64>> {
    let g = &gamma.gamma;
    if v0.shape() != g.shape() {
        return Err(Error::dim(format!("basis {:?} vs tangent {:?}", v0.shape(), g.shape())));
    }
    if g.iter().all(|&x| x == 0.0) {
        return Ok(v0.clone());
    }
    let (u, s, w) = thin_svd(g)?;
    let cos = DMatrix::from_diagonal(&s.map(f64::cos));
    let sin = DMatrix::from_diagonal(&s.map(f64::sin));
    let v = (v0 * &w * cos + u * sin) * w.transpose();
    orthonormalize(&v)
}

/// Coefficients `X` minimizing `‖V_global X − target‖_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub x: DMatrix<f64>,
    pub tag: Option<ParameterVector>,
}

impl CoefficientMatrix {
    /// Column-major flattening, length `r̃·r`.
    pub fn flatten(&self) -> Vec<f64> {
        self.x.as_slice().to_vec()
    }

    pub fn from_flat(r_tilde: usize, r: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != r_tilde * r {
            return Err(Error::dim(format!("{} values for a {r_tilde}×{r} matrix", flat.len())));
        }
        Ok(CoefficientMatrix { x: DMatrix::from_column_slice(r_tilde, r, flat), tag: None })
    }
}

pub fn compute_coefficients(target: &DMatrix<f64>, global: &GlobalBasis) -> Result<CoefficientMatrix> {
    let (x, rank) = lstsq(&global.modes, target)?;
    if rank < global.r_tilde() {
        log::warn!("global basis is rank deficient ({rank} < {}); using the pseudo-inverse", global.r_tilde());
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coefficients".into()));
    }
    Ok(CoefficientMatrix { x, tag: None })
}

/// Coefficients of the tangent representative of `vi` at the reference `v0`.
pub fn encode_basis(vi: &DMatrix<f64>, v0: &DMatrix<f64>, global: &GlobalBasis) -> Result<CoefficientMatrix> {
    let gamma = grassmann_log(v0, vi)?;
    compute_coefficients(&gamma.gamma, global)
}

/// Local basis from coefficients: `Γ = V_global X`, made horizontal, then mapped by exp.
pub fn reconstruct_basis(x: &CoefficientMatrix, global: &GlobalBasis, v0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.x.nrows() != global.r_tilde() || x.x.ncols() != v0.ncols() || global.modes.nrows() != v0.nrows() {
        return Err(Error::dim(format!(
            "coefficients {:?}, global basis {:?}, reference {:?}",
            x.x.shape(),
            global.modes.shape(),
            v0.shape()
        )));
    }
    let mut gamma = &global.modes * &x.x;
    gamma -= v0 * (v0.transpose() * &gamma);
    grassmann_exp(v0, &TangentVector { gamma })
}
