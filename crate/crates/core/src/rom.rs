//! Galerkin reduced-order models, reduced time integration, full-field
//! reconstruction and the relative error measure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{combine, newmark, step_count, FomSystem, ParameterVector, Physical, SecondOrder, TimeHistory};
use crate::error::{Error, Result};
use crate::hyperreduction::{add_reduced_tangent, reduce_elements, reduced_element_force, EcswWeights, ReducedElement};
use crate::linalg::{matrix_hash, orthonormality_defect, BandMatrix};
use crate::reduction::GlobalBasis;

/// Largest accepted `|VᵀV − I|` entry for a projection basis.
const ORTHONORMAL_TOL: f64 = 1e-8;

/// Full-order model projected onto an orthonormal basis.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub basis: DMatrix<f64>,
    /// Reduced mass `VᵀMV`.
    pub mass: DMatrix<f64>,
    mass_diag: Option<DVector<f64>>,
    mass_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    elements: Vec<ReducedElement>,
    primary: DVector<f64>,
    secondary: DVector<f64>,
    system: FomSystem,
    pub hyper: bool,
    pub basis_id: String,
}

/// Projects `system` onto `v`. With `weights`, only the selected elements are
/// assembled; the weights must be bound to `global`.
pub fn galerkin_project(
    system: &FomSystem,
    v: &DMatrix<f64>,
    weights: Option<(&EcswWeights, &GlobalBasis)>,
) -> Result<ReducedSystem> {
    if v.nrows() != system.n_dof || v.ncols() == 0 {
        return Err(Error::dim(format!("basis {:?} for {} dofs", v.shape(), system.n_dof)));
    }
    let defect = orthonormality_defect(v);
    if !(defect <= ORTHONORMAL_TOL) {
        return Err(Error::Geometry(format!("basis is not orthonormal (defect {defect:.2e})")));
    }
    let mut mv = v.clone();
    for (i, mut row) in mv.row_iter_mut().enumerate() {
        row *= system.mass[i];
    }
    let mass = v.transpose() * mv;
    let mass_chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Geometry("reduced mass is not positive definite".into()))?;
    let is_diag = (0..mass.nrows()).all(|i| (0..mass.ncols()).all(|j| i == j || mass[(i, j)] == 0.0));
    let mass_diag = is_diag.then(|| mass.diagonal());
    let (ids, ws): (Vec<usize>, Vec<f64>) = match weights {
        Some((w, global)) => {
            w.check_basis(global)?;
            if w.n_elements != system.n_elements() {
                return Err(Error::dim(format!(
                    "weights cover {} elements, model has {}",
                    w.n_elements,
                    system.n_elements()
                )));
            }
            (w.element_ids.clone(), w.weights.clone())
        }
        None => ((0..system.n_elements()).collect(), vec![1.0; system.n_elements()]),
    };
    Ok(ReducedSystem {
        basis: v.clone(),
        mass,
        mass_diag,
        mass_chol,
        elements: reduce_elements(system, v, &ids, &ws),
        primary: v.tr_mul(&system.excitation.primary),
        secondary: v.tr_mul(&system.excitation.secondary),
        system: system.clone(),
        hyper: weights.is_some(),
        basis_id: matrix_hash(v),
    })
}

impl ReducedSystem {
    pub fn r(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of elements evaluated per force assembly.
    pub fn n_active_elements(&self) -> usize {
        self.elements.len()
    }

    /// Reduced internal force `g̃(q, q̇)`.
    pub fn internal_force(&self, q: &DVector<f64>, qd: &DVector<f64>, p: &ParameterVector) -> Result<DVector<f64>> {
        let ph = self.system.physical(p)?;
        Ok(At { red: self, ph }.internal(q, qd))
    }
}

struct At<'a> {
    red: &'a ReducedSystem,
    ph: Physical,
}

impl SecondOrder for At<'_> {
    fn dim(&self) -> usize {
        self.red.r()
    }

    fn mass_mul(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.red.mass * a
    }

    fn load(&self, t: f64) -> DVector<f64> {
        let ex = &self.red.system.excitation;
        combine(&self.red.primary, &self.red.secondary, self.ph.direction) * ex.scalar(t, &self.ph)
    }

    fn internal(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let mut g = (&self.red.mass * qd) * self.red.system.alpha_m;
        reduced_element_force(&self.red.elements, self.red.system.alpha_k, &self.ph, q, qd, &mut g);
        g
    }

    fn solve_effective(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        c_m: f64,
        c_d: f64,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let sys = &self.red.system;
        let mut a = &self.red.mass * (c_m + c_d * sys.alpha_m);
        add_reduced_tangent(&self.red.elements, sys.alpha_k, &self.ph, q, qd, c_d, &mut a);
        BandMatrix::from(&a).solve(rhs)
    }

    fn solve_mass(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match &self.red.mass_diag {
            Some(d) => rhs.component_div(d),
            None => self.red.mass_chol.solve(rhs),
        })
    }
}

/// Reduced coordinates over time, tagged with the basis they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedHistory {
    pub coords: TimeHistory,
    pub basis_id: String,
}

/// Integrates the reduced model from rest.
pub fn integrate_rom(red: &ReducedSystem, p: &ParameterVector, dt: f64, t_end: f64) -> Result<ReducedHistory> {
    let z = DVector::zeros(red.r());
    integrate_rom_from(red, p, dt, t_end, &z, &z)
}

pub fn integrate_rom_from(
    red: &ReducedSystem,
    p: &ParameterVector,
    dt: f64,
    t_end: f64,
    q0: &DVector<f64>,
    qd0: &DVector<f64>,
) -> Result<ReducedHistory> {
    let ph = red.system.physical(p)?;
    let n_steps = step_count(dt, t_end)?;
    let coords = newmark(&At { red, ph }, &red.system.integrator, dt, n_steps, q0, qd0)?;
    Ok(ReducedHistory { coords, basis_id: red.basis_id.clone() })
}

/// `u = V q` for displacement, velocity and acceleration.
pub fn reconstruct_full(q: &ReducedHistory, v: &DMatrix<f64>) -> Result<TimeHistory> {
    let c = &q.coords;
    if v.ncols() != c.n_dof() {
        return Err(Error::dim(format!("basis has {} columns, history {} coordinates", v.ncols(), c.n_dof())));
    }
    Ok(TimeHistory {
        dt: c.dt,
        displacement: v * &c.displacement,
        velocity: v * &c.velocity,
        acceleration: v * &c.acceleration,
    })
}

/// Index subset used by [`error_metric`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Selection {
    #[default]
    All,
    Indices(Vec<usize>),
}

impl Selection {
    fn resolve(&self, len: usize, what: &str) -> Result<Vec<usize>> {
        let idx = match self {
            Selection::All => (0..len).collect::<Vec<_>>(),
            Selection::Indices(v) => v.clone(),
        };
        if idx.is_empty() {
            return Err(Error::config(format!("empty {what} selection")));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= len) {
            return Err(Error::dim(format!("{what} index {bad} out of range {len}")));
        }
        Ok(idx)
    }
}

/// Relative error in percent, `100 ‖q − q̃‖ / ‖q‖` over the selected rows and columns.
pub fn error_metric(
    reference: &DMatrix<f64>,
    approx: &DMatrix<f64>,
    dofs: &Selection,
    steps: &Selection,
) -> Result<f64> {
    if reference.shape() != approx.shape() {
        return Err(Error::dim(format!("histories {:?} and {:?}", reference.shape(), approx.shape())));
    }
    let rows = dofs.resolve(reference.nrows(), "dof")?;
    let cols = steps.resolve(reference.ncols(), "step")?;
    let (mut num, mut den) = (0.0, 0.0);
    for &j in &cols {
        for &i in &rows {
            let q = reference[(i, j)];
            num += (q - approx[(i, j)]).powi(2);
            den += q * q;
        }
    }
    if den == 0.0 {
        return Err(Error::Numeric("reference history has zero energy".into()));
    }
    Ok(100.0 * (num / den).sqrt())
}
