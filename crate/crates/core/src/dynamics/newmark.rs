use nalgebra::{DMatrix, DVector};

use super::params::ParameterVector;
use super::system::{FomSystem, IntegratorConfig, Physical};
use crate::error::{Error, Result};

/// Displacement, velocity and acceleration sampled at `t = j·dt`, `j = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeHistory {
    pub dt: f64,
    pub displacement: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
    pub acceleration: DMatrix<f64>,
}

impl TimeHistory {
    pub fn n_dof(&self) -> usize {
        self.displacement.nrows()
    }

    /// Number of stored states, including the initial one.
    pub fn n_states(&self) -> usize {
        self.displacement.ncols()
    }

    pub fn n_steps(&self) -> usize {
        self.n_states().saturating_sub(1)
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Dof with the largest absolute displacement over the whole history.
    pub fn max_response_dof(&self) -> usize {
        (0..self.n_dof())
            .max_by(|&a, &b| {
                let ma = self.displacement.row(a).amax();
                let mb = self.displacement.row(b).amax();
                ma.total_cmp(&mb)
            })
            .unwrap_or(0)
    }
}

/// Second-order system `M ü + g(u, u̇) = F(t)` seen by the Newmark driver.
pub(crate) trait SecondOrder {
    fn dim(&self) -> usize;
    fn mass_mul(&self, a: &DVector<f64>) -> DVector<f64>;
    fn load(&self, t: f64) -> DVector<f64>;
    fn internal(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    /// Solves `(c_m M + c_d C(u) + K_t(u)) x = rhs`.
    fn solve_effective(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        c_m: f64,
        c_d: f64,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>>;
    fn solve_mass(&self, rhs: &DVector<f64>) -> Result<DVector<f64>>;
}

pub(crate) fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("dt must be positive"));
    }
    if !(t_end >= dt * (1.0 - 1e-12)) || !t_end.is_finite() {
        return Err(Error::config("T must be at least dt"));
    }
    Ok((t_end / dt).round().max(1.0) as usize)
}

/// Implicit Newmark integration with a full Newton solve per step.
pub(crate) fn newmark<S: SecondOrder>(
    sys: &S,
    cfg: &IntegratorConfig,
    dt: f64,
    n_steps: usize,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
) -> Result<TimeHistory> {
    let n = sys.dim();
    if u0.len() != n || v0.len() != n {
        return Err(Error::dim(format!("initial state length {} for {n} dofs", u0.len())));
    }
    let IntegratorConfig { beta, gamma, newton_tol, max_iterations } = *cfg;
    let c_m = 1.0 / (beta * dt * dt);
    let c_d = gamma / (beta * dt);

    let mut hist = TimeHistory {
        dt,
        displacement: DMatrix::zeros(n, n_steps + 1),
        velocity: DMatrix::zeros(n, n_steps + 1),
        acceleration: DMatrix::zeros(n, n_steps + 1),
    };
    let mut u = u0.clone();
    let mut v = v0.clone();
    let f0 = sys.load(0.0);
    let mut a = sys.solve_mass(&(f0 - sys.internal(&u, &v)))?;
    hist.displacement.set_column(0, &u);
    hist.velocity.set_column(0, &v);
    hist.acceleration.set_column(0, &a);

    for step in 1..=n_steps {
        let f = sys.load(step as f64 * dt);
        let (un, vn, an) = (u.clone(), v.clone(), a.clone());
        let base = &un + &vn * dt;
        let a_shift = &an * (1.0 / (2.0 * beta) - 1.0);
        let v_base = &vn + &an * ((1.0 - gamma) * dt);
        u = &base + &an * (0.5 * dt * dt);
        let mut iter = 0;
        loop {
            a = (&u - &base) * c_m - &a_shift;
            v = &v_base + &a * (gamma * dt);
            let ma = sys.mass_mul(&a);
            let g = sys.internal(&u, &v);
            let scale = f.norm().max(g.norm()).max(ma.norm());
            let r = ma + g - &f;
            let rn = r.norm();
            if rn <= newton_tol * scale {
                break;
            }
            if iter == max_iterations || !rn.is_finite() {
                return Err(Error::Integration { step, residual: rn / scale.max(f64::MIN_POSITIVE) });
            }
            let du = sys.solve_effective(&u, &v, c_m, c_d, &(-r))?;
            u += du;
            iter += 1;
        }
        hist.displacement.set_column(step, &u);
        hist.velocity.set_column(step, &v);
        hist.acceleration.set_column(step, &a);
    }
    Ok(hist)
}

struct FomAt<'a> {
    sys: &'a FomSystem,
    ph: Physical,
}

impl SecondOrder for FomAt<'_> {
    fn dim(&self) -> usize {
        self.sys.n_dof
    }

    fn mass_mul(&self, a: &DVector<f64>) -> DVector<f64> {
        self.sys.mass_mul(a)
    }

    fn load(&self, t: f64) -> DVector<f64> {
        self.sys.load(t, &self.ph)
    }

    fn internal(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.sys.restoring_force(u, v, &self.ph)
    }

    fn solve_effective(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        c_m: f64,
        c_d: f64,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.sys.effective_matrix(u, v, &self.ph, c_m, c_d).solve(rhs)
    }

    fn solve_mass(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(rhs.component_div(&self.sys.mass))
    }
}

/// Integrates the full-order model from `(u0, v0)` over `[0, T]`.
pub fn integrate_newmark(
    system: &FomSystem,
    p: &ParameterVector,
    dt: f64,
    t_end: f64,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
) -> Result<TimeHistory> {
    let ph = system.physical(p)?;
    let n_steps = step_count(dt, t_end)?;
    newmark(&FomAt { sys: system, ph }, &system.integrator, dt, n_steps, u0, v0)
}

/// Integrates from rest.
pub fn integrate_from_rest(system: &FomSystem, p: &ParameterVector, dt: f64, t_end: f64) -> Result<TimeHistory> {
    let z = DVector::zeros(system.n_dof);
    integrate_newmark(system, p, dt, t_end, &z, &z)
}
