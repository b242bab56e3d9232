//! Energy-conserving sampling and weighting (ECSW): a sparse, non-negative
//! element weighting that reproduces the reduced internal force on training data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Element, FomSystem, ParameterVector, Physical};
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::reduction::GlobalBasis;

/// One training state for the ECSW fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub p: ParameterVector,
}

/// Selected elements and their positive weights, bound to a basis by hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcswWeights {
    pub element_ids: Vec<usize>,
    pub weights: Vec<f64>,
    /// Achieved `‖Gξ − b‖ / ‖b‖`.
    pub residual: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub n_elements: usize,
    /// Hash of the basis the weights were trained against.
    #[serde(default)]
    pub basis_hash: String,
    /// Relative residual before the first and after every greedy iteration.
    #[serde(default)]
    pub residual_history: Vec<f64>,
}

impl EcswWeights {
    /// Every element with unit weight.
    pub fn full(n_elements: usize, basis_hash: String) -> Self {
        EcswWeights {
            element_ids: (0..n_elements).collect(),
            weights: vec![1.0; n_elements],
            residual: 0.0,
            tolerance: 0.0,
            converged: true,
            n_elements,
            basis_hash,
            residual_history: Vec::new(),
        }
    }

    pub fn n_selected(&self) -> usize {
        self.element_ids.len()
    }

    pub fn check_basis(&self, global: &GlobalBasis) -> Result<()> {
        let found = global.hash();
        if found != self.basis_hash {
            return Err(Error::StaleWeights { expected: self.basis_hash.clone(), found });
        }
        Ok(())
    }
}

/// Element projected onto a basis: extension is `b·q` with `b = V_i − V_j`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ReducedElement {
    pub elem: Element,
    pub weight: f64,
    pub b: DVector<f64>,
}

pub(crate) fn reduce_elements(system: &FomSystem, v: &DMatrix<f64>, ids: &[usize], weights: &[f64]) -> Vec<ReducedElement> {
    ids.iter()
        .zip(weights)
        .map(|(&id, &w)| {
            let elem = system.elements[id];
            let mut b = v.row(elem.i).transpose();
            if let Some(j) = elem.j {
                b -= v.row(j).transpose();
            }
            ReducedElement { elem, weight: w, b }
        })
        .collect()
}

/// Weighted element part of the reduced internal force.
pub(crate) fn reduced_element_force(
    elems: &[ReducedElement],
    alpha_k: f64,
    ph: &Physical,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    out: &mut DVector<f64>,
) {
    for re in elems {
        let r = re.elem.respond(ph, alpha_k, re.b.dot(q), re.b.dot(qd));
        out.axpy(re.weight * r.force, &re.b, 1.0);
    }
}

/// Adds `Σ ξ_e (c_d α_K k_e + k_t,e) b_e b_eᵀ` to `out`.
pub(crate) fn add_reduced_tangent(
    elems: &[ReducedElement],
    alpha_k: f64,
    ph: &Physical,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    c_d: f64,
    out: &mut DMatrix<f64>,
) {
    for re in elems {
        let r = re.elem.respond(ph, alpha_k, re.b.dot(q), re.b.dot(qd));
        let s = re.weight * (c_d * r.viscous + r.tangent);
        out.ger(s, &re.b, &re.b, 1.0);
    }
}

/// ECSW least-squares system: column `e` stacks `Vᵀ g_e` over all training states.
pub fn build_ecsw_system(
    states: &[TrainingState],
    v: &DMatrix<f64>,
    system: &FomSystem,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if states.is_empty() {
        return Err(Error::config("ECSW needs at least one training state"));
    }
    if v.nrows() != system.n_dof {
        return Err(Error::dim(format!("basis has {} rows, model {} dofs", v.nrows(), system.n_dof)));
    }
    let r = v.ncols();
    let n_e = system.n_elements();
    let all: Vec<usize> = (0..n_e).collect();
    let elems = reduce_elements(system, v, &all, &vec![1.0; n_e]);
    let mut g = DMatrix::zeros(r * states.len(), n_e);
    for (s, st) in states.iter().enumerate() {
        if st.u.len() != system.n_dof || st.v.len() != system.n_dof {
            return Err(Error::dim(format!("training state {s} has the wrong length")));
        }
        let ph = system.physical(&st.p)?;
        for (e, re) in elems.iter().enumerate() {
            let f = re.elem.respond(&ph, system.alpha_k, re.elem.extension(&st.u), re.elem.extension(&st.v)).force;
            g.view_mut((s * r, e), (r, 1)).copy_from(&(&re.b * f));
        }
    }
    let b = g.column_sum();
    Ok((g, b))
}

/// Restricted least squares on the columns in `set`.
fn restricted_solve(g: &DMatrix<f64>, c: &DVector<f64>, set: &[usize]) -> Result<DVector<f64>> {
    let sub = g.select_columns(set);
    let (x, _) = lstsq(&sub, &DMatrix::from_column_slice(c.len(), 1, c.as_slice()))?;
    Ok(x.column(0).into_owned())
}

/// Greedy sparse non-negative least squares.
///
/// Repeatedly adds the inactive column most correlated with the residual and
/// re-solves the restricted problem with Lawson–Hanson active-set steps, until
/// `‖Gξ − b‖ ≤ τ‖b‖`. If the tolerance cannot be reached the best iterate is
/// returned with `converged = false`.
pub fn solve_sparse_nnls(g: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Result<EcswWeights> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::config("ECSW tolerance must lie in [0, 1)"));
    }
    if g.nrows() != b.len() {
        return Err(Error::dim(format!("G has {} rows, b has {}", g.nrows(), b.len())));
    }
    let n_e = g.ncols();
    let b_norm = b.norm();
    // Tall systems are compressed with a QR factorization; the part of b
    // outside range(G) only adds a constant to the squared residual.
    let (gc, c, offset2) = if g.nrows() > 2 * n_e && n_e > 0 {
        let qr = g.clone().qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        let c = qtb.rows(0, n_e).into_owned();
        let off = (b - qr.q() * &c).norm_squared();
        (qr.r(), c, off)
    } else {
        (g.clone(), b.clone(), 0.0)
    };
    let residual_of = |xi: &DVector<f64>| ((&gc * xi - &c).norm_squared() + offset2).sqrt();
    let col_norms: Vec<f64> = (0..n_e).map(|e| gc.column(e).norm()).collect();

    let mut xi = DVector::zeros(n_e);
    let mut active: Vec<usize> = Vec::new();
    let mut res = residual_of(&xi);
    let target = tau * b_norm;
    let relative = |res: f64| if b_norm > 0.0 { res / b_norm } else { 0.0 };
    let mut history = vec![relative(res)];
    let mut outer = 0;
    while res > target {
        let r = &c - &gc * &xi;
        let corr = gc.transpose() * &r;
        let pick = (0..n_e)
            .filter(|e| !active.contains(e) && col_norms[*e] > 0.0)
            .map(|e| (e, corr[e] / col_norms[e]))
            .filter(|&(_, s)| s > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((e, _)) = pick else { break };
        active.push(e);
        loop {
            let z = restricted_solve(&gc, &c, &active)?;
            if z.iter().all(|&v| v > 0.0) {
                for (k, &id) in active.iter().enumerate() {
                    xi[id] = z[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &id) in active.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = xi[id] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(xi[id] / denom);
                    }
                }
            }
            for (k, &id) in active.iter().enumerate() {
                xi[id] += alpha * (z[k] - xi[id]);
            }
            active.retain(|&id| {
                let keep = xi[id] > 1e-14 * xi.amax().max(1.0);
                if !keep {
                    xi[id] = 0.0;
                }
                keep
            });
            if active.is_empty() {
                break;
            }
        }
        res = residual_of(&xi);
        history.push(relative(res));
        outer += 1;
        if outer >= 3 * n_e {
            break;
        }
    }
    let mut ids: Vec<usize> = (0..n_e).filter(|&e| xi[e] > 0.0).collect();
    ids.sort_unstable();
    Ok(EcswWeights {
        weights: ids.iter().map(|&e| xi[e]).collect(),
        element_ids: ids,
        residual: relative(res),
        tolerance: tau,
        converged: res <= target,
        n_elements: n_e,
        basis_hash: String::new(),
        residual_history: history,
    })
}

/// Hyper-reduced element force `Σ_{e∈E} ξ_e Vᵀ g_e(Vq)` and its tangent.
///
/// `global` is the basis the weights were trained against; `v` must lie in its span.
pub fn reduced_force_hyper(
    weights: &EcswWeights,
    global: &GlobalBasis,
    system: &FomSystem,
    v: &DMatrix<f64>,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    p: &ParameterVector,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    weights.check_basis(global)?;
    if v.nrows() != system.n_dof || q.len() != v.ncols() || qd.len() != v.ncols() {
        return Err(Error::dim("reduced state does not match the basis".to_string()));
    }
    let ph = system.physical(p)?;
    let elems = reduce_elements(system, v, &weights.element_ids, &weights.weights);
    let mut g = DVector::zeros(v.ncols());
    reduced_element_force(&elems, system.alpha_k, &ph, q, qd, &mut g);
    let mut k = DMatrix::zeros(v.ncols(), v.ncols());
    add_reduced_tangent(&elems, system.alpha_k, &ph, q, qd, 0.0, &mut k);
    Ok((g, k))
}
