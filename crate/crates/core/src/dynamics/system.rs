use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParameterRole, ParameterVector};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;

/// Connectivity of the mass chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Spring from dof 0 to ground, then one spring between each pair of neighbors.
    #[default]
    FixedFree,
    /// Like `FixedFree` plus a spring from the last dof to ground.
    FixedFixed,
    /// Explicit element list.
    Custom { elements: Vec<ElementSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub i: usize,
    /// Second dof; `None` ties the element to ground.
    #[serde(default)]
    pub j: Option<usize>,
    /// Multiplier on the nominal linear stiffness.
    #[serde(default = "one")]
    pub stiffness_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DampingConfig {
    /// Mass-proportional coefficient (1/s).
    #[serde(default)]
    pub alpha_m: f64,
    /// Stiffness-proportional coefficient (s).
    #[serde(default)]
    pub alpha_k: f64,
}

/// Scalar time signal multiplying the load pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalConfig {
    #[default]
    None,
    /// Constant load switched on at t = 0.
    Step { level: f64 },
    /// `sqrt(2/C) Σ sin(2π f_c t + φ_c)` over `C` equally spaced frequencies
    /// with seeded random phases; unit RMS.
    MultiSine { components: usize, f_min: f64, f_max: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExcitationConfig {
    #[serde(default)]
    pub signal: SignalConfig,
    /// Dofs loaded at direction 0; defaults to the last dof.
    #[serde(default)]
    pub primary_dofs: Option<Vec<usize>>,
    /// Dofs loaded at direction π/2; defaults to the middle dof.
    #[serde(default)]
    pub secondary_dofs: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_iters")]
    pub max_iterations: usize,
}

fn default_beta() -> f64 {
    0.25
}
fn default_gamma() -> f64 {
    0.5
}
fn default_tol() -> f64 {
    1e-8
}
fn default_iters() -> usize {
    25
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            beta: default_beta(),
            gamma: default_gamma(),
            newton_tol: default_tol(),
            max_iterations: default_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomConfig {
    pub n_dof: usize,
    /// Lumped mass of every dof, unless `masses` is given.
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
    pub k_lin: f64,
    #[serde(default)]
    pub k_cub: f64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub damping: DampingConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    /// Role of each entry of the parameter vector, in order.
    #[serde(default)]
    pub parameter_roles: Vec<ParameterRole>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

impl FomConfig {
    /// Fixed-free chain with no damping, no load and no parameters.
    pub fn chain(n_dof: usize, mass: f64, k_lin: f64, k_cub: f64) -> Self {
        FomConfig {
            n_dof,
            mass,
            masses: None,
            k_lin,
            k_cub,
            topology: Topology::FixedFree,
            damping: DampingConfig::default(),
            excitation: ExcitationConfig::default(),
            parameter_roles: Vec::new(),
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Spring between dof `i` and dof `j` (or ground).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub i: usize,
    pub j: Option<usize>,
    pub k_lin: f64,
    pub k_cub: f64,
    pub stiffness_factor: f64,
}

/// Parameter-dependent multipliers resolved from a [`ParameterVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physical {
    pub stiffness_scale: f64,
    pub cubic_scale: f64,
    pub amplitude: f64,
    pub direction: f64,
}

impl Default for Physical {
    fn default() -> Self {
        Physical { stiffness_scale: 1.0, cubic_scale: 1.0, amplitude: 1.0, direction: 0.0 }
    }
}

/// Force, tangent stiffness and viscous coefficient of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementResponse {
    pub force: f64,
    pub tangent: f64,
    pub viscous: f64,
}

impl Element {
    #[inline]
    pub fn stiffness(&self, ph: &Physical) -> f64 {
        self.k_lin * self.stiffness_factor * ph.stiffness_scale
    }

    #[inline]
    pub fn cubic(&self, ph: &Physical) -> f64 {
        self.k_cub * ph.cubic_scale
    }

    /// Element law `f = k (δ + α_K δ̇) + c δ³` for extension `δ` and rate `δ̇`.
    #[inline]
    pub fn respond(&self, ph: &Physical, alpha_k: f64, delta: f64, rate: f64) -> ElementResponse {
        let k = self.stiffness(ph);
        let c = self.cubic(ph);
        let d2 = delta * delta;
        ElementResponse {
            force: k * (delta + alpha_k * rate) + c * d2 * delta,
            tangent: k + 3.0 * c * d2,
            viscous: alpha_k * k,
        }
    }

    #[inline]
    pub fn extension(&self, u: &DVector<f64>) -> f64 {
        match self.j {
            Some(j) => u[self.i] - u[j],
            None => u[self.i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Signal {
    None,
    Step(f64),
    MultiSine { freqs: Vec<f64>, phases: Vec<f64>, norm: f64 },
}

impl Signal {
    fn compile(cfg: &SignalConfig) -> Result<Self> {
        Ok(match *cfg {
            SignalConfig::None => Signal::None,
            SignalConfig::Step { level } => Signal::Step(level),
            SignalConfig::MultiSine { components, f_min, f_max, seed } => {
                if components == 0 || !(f_min > 0.0) || f_max < f_min {
                    return Err(Error::config("multi-sine needs components ≥ 1 and 0 < f_min ≤ f_max"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let freqs: Vec<f64> = (0..components)
                    .map(|c| {
                        if components == 1 {
                            f_min
                        } else {
                            f_min + (f_max - f_min) * c as f64 / (components - 1) as f64
                        }
                    })
                    .collect();
                let phases = (0..components).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                Signal::MultiSine { freqs, phases, norm: (2.0 / components as f64).sqrt() }
            }
        })
    }

    fn value(&self, t: f64) -> f64 {
        match self {
            Signal::None => 0.0,
            Signal::Step(level) => *level,
            Signal::MultiSine { freqs, phases, norm } => {
                norm * freqs
                    .iter()
                    .zip(phases)
                    .map(|(f, phi)| (2.0 * PI * f * t + phi).sin())
                    .sum::<f64>()
            }
        }
    }
}

/// Parametric load `F(t, p) = A s(t) (cos θ b₁ + sin θ b₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    signal: Signal,
    pub primary: DVector<f64>,
    pub secondary: DVector<f64>,
}

impl Excitation {
    /// Scalar factor `A s(t)`.
    #[inline]
    pub fn scalar(&self, t: f64, ph: &Physical) -> f64 {
        ph.amplitude * self.signal.value(t)
    }

    /// Spatial pattern for a given direction.
    pub fn pattern(&self, ph: &Physical) -> DVector<f64> {
        combine(&self.primary, &self.secondary, ph.direction)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.signal, Signal::None)
    }
}

pub(crate) fn combine(a: &DVector<f64>, b: &DVector<f64>, theta: f64) -> DVector<f64> {
    let (s, c) = theta.sin_cos();
    a * c + b * s
}

/// Chain of lumped masses joined by linear-plus-cubic springs.
#[derive(Debug, Clone, PartialEq)]
pub struct FomSystem {
    pub n_dof: usize,
    /// Diagonal of the lumped mass matrix.
    pub mass: DVector<f64>,
    pub alpha_m: f64,
    pub alpha_k: f64,
    pub elements: Vec<Element>,
    pub excitation: Excitation,
    pub roles: Vec<ParameterRole>,
    pub integrator: IntegratorConfig,
    bandwidth: usize,
}

pub fn assemble_fom(config: &FomConfig) -> Result<FomSystem> {
    let n = config.n_dof;
    if n == 0 {
        return Err(Error::config("n_dof must be at least 1"));
    }
    let masses = match &config.masses {
        Some(m) if m.len() != n => {
            return Err(Error::config(format!("{} masses for {n} dofs", m.len())))
        }
        Some(m) => m.clone(),
        None => vec![config.mass; n],
    };
    if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::config("masses must be positive and finite"));
    }
    if !config.k_lin.is_finite() || !config.k_cub.is_finite() || config.k_lin < 0.0 {
        return Err(Error::config("k_lin must be non-negative and k_cub finite"));
    }
    let specs: Vec<ElementSpec> = match &config.topology {
        Topology::FixedFree | Topology::FixedFixed => {
            let mut e = vec![ElementSpec { i: 0, j: None, stiffness_factor: 1.0 }];
            e.extend((1..n).map(|i| ElementSpec { i, j: Some(i - 1), stiffness_factor: 1.0 }));
            if config.topology == Topology::FixedFixed {
                e.push(ElementSpec { i: n - 1, j: None, stiffness_factor: 1.0 });
            }
            e
        }
        Topology::Custom { elements } => elements.clone(),
    };
    if specs.is_empty() {
        return Err(Error::config("the model has no elements"));
    }
    let mut covered = vec![false; n];
    let mut bandwidth = 0;
    let mut elements = Vec::with_capacity(specs.len());
    for (idx, s) in specs.iter().enumerate() {
        let in_range = s.i < n && s.j.is_none_or(|j| j < n && j != s.i);
        if !in_range || !(s.stiffness_factor > 0.0) {
            return Err(Error::config(format!("element {idx} is malformed")));
        }
        covered[s.i] = true;
        if let Some(j) = s.j {
            covered[j] = true;
            bandwidth = bandwidth.max(s.i.abs_diff(j));
        }
        elements.push(Element {
            i: s.i,
            j: s.j,
            k_lin: config.k_lin,
            k_cub: config.k_cub,
            stiffness_factor: s.stiffness_factor,
        });
    }
    if let Some(d) = covered.iter().position(|c| !c) {
        return Err(Error::config(format!("dof {d} belongs to no element")));
    }
    let DampingConfig { alpha_m, alpha_k } = config.damping;
    if alpha_m < 0.0 || alpha_k < 0.0 {
        return Err(Error::config("damping coefficients must be non-negative"));
    }
    let indicator = |dofs: &[usize]| -> Result<DVector<f64>> {
        let mut v = DVector::zeros(n);
        for &d in dofs {
            if d >= n {
                return Err(Error::config(format!("load dof {d} out of range")));
            }
            v[d] += 1.0;
        }
        Ok(v)
    };
    let primary = indicator(config.excitation.primary_dofs.as_deref().unwrap_or(&[n - 1]))?;
    let secondary = indicator(config.excitation.secondary_dofs.as_deref().unwrap_or(&[n / 2]))?;
    let ic = config.integrator;
    if !(ic.beta > 0.0) || !(ic.gamma > 0.0) || !(ic.newton_tol > 0.0) || ic.max_iterations == 0 {
        return Err(Error::config("integrator needs β, γ, tolerance and iterations > 0"));
    }
    Ok(FomSystem {
        n_dof: n,
        mass: DVector::from_vec(masses),
        alpha_m,
        alpha_k,
        elements,
        excitation: Excitation {
            signal: Signal::compile(&config.excitation.signal)?,
            primary,
            secondary,
        },
        roles: config.parameter_roles.clone(),
        integrator: ic,
        bandwidth,
    })
}

impl FomSystem {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Resolves parameter roles; absent roles keep their neutral values.
    pub fn physical(&self, p: &ParameterVector) -> Result<Physical> {
        if p.k() != self.roles.len() {
            return Err(Error::dim(format!(
                "model declares {} parameters, got {}",
                self.roles.len(),
                p.k()
            )));
        }
        let mut ph = Physical::default();
        for (role, &v) in self.roles.iter().zip(&p.values) {
            match role {
                ParameterRole::StiffnessScale => ph.stiffness_scale = v,
                ParameterRole::CubicScale => ph.cubic_scale = v,
                ParameterRole::Amplitude => ph.amplitude = v,
                ParameterRole::Direction => ph.direction = v,
            }
        }
        Ok(ph)
    }

    pub fn load(&self, t: f64, ph: &Physical) -> DVector<f64> {
        self.excitation.pattern(ph) * self.excitation.scalar(t, ph)
    }

    /// Mass-matrix product `M a`.
    pub fn mass_mul(&self, a: &DVector<f64>) -> DVector<f64> {
        self.mass.component_mul(a)
    }

    /// Restoring force contributed by each element, unassembled.
    pub fn element_forces(&self, u: &DVector<f64>, v: &DVector<f64>, ph: &Physical) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| e.respond(ph, self.alpha_k, e.extension(u), e.extension(v)).force)
            .collect()
    }

    pub(crate) fn restoring_force(&self, u: &DVector<f64>, v: &DVector<f64>, ph: &Physical) -> DVector<f64> {
        let mut g = self.mass_mul(v) * self.alpha_m;
        for e in &self.elements {
            let f = e.respond(ph, self.alpha_k, e.extension(u), e.extension(v)).force;
            g[e.i] += f;
            if let Some(j) = e.j {
                g[j] -= f;
            }
        }
        g
    }

    /// `c_m M + c_d C(u) + K_t(u)` in band storage.
    pub(crate) fn effective_matrix(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        ph: &Physical,
        c_m: f64,
        c_d: f64,
    ) -> BandMatrix {
        let mut a = BandMatrix::zeros(self.n_dof, self.bandwidth);
        let diag = c_m + c_d * self.alpha_m;
        for i in 0..self.n_dof {
            a.add(i, i, diag * self.mass[i]);
        }
        for e in &self.elements {
            let r = e.respond(ph, self.alpha_k, e.extension(u), e.extension(v));
            let s = c_d * r.viscous + r.tangent;
            a.add(e.i, e.i, s);
            if let Some(j) = e.j {
                a.add(j, j, s);
                a.add(e.i, j, -s);
            }
        }
        a
    }

    fn check_state(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        if u.len() != self.n_dof || v.len() != self.n_dof {
            return Err(Error::dim(format!(
                "state has lengths ({}, {}), model has {} dofs",
                u.len(),
                v.len(),
                self.n_dof
            )));
        }
        Ok(())
    }

    /// Reference frequency `sqrt(k/m)` of the first element and dof (rad/s).
    pub fn reference_frequency(&self) -> f64 {
        (self.elements[0].k_lin / self.mass[0]).sqrt()
    }
}

/// Restoring force `g(u, u̇, p)` and its analytic tangent `∂g/∂u`.
pub fn evaluate_restoring(
    system: &FomSystem,
    u: &DVector<f64>,
    v: &DVector<f64>,
    p: &ParameterVector,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    system.check_state(u, v)?;
    let ph = system.physical(p)?;
    let g = system.restoring_force(u, v, &ph);
    let mut kt = DMatrix::zeros(system.n_dof, system.n_dof);
    for e in &system.elements {
        let r = e.respond(&ph, system.alpha_k, e.extension(u), e.extension(v));
        kt[(e.i, e.i)] += r.tangent;
        if let Some(j) = e.j {
            kt[(j, j)] += r.tangent;
            kt[(e.i, j)] -= r.tangent;
            kt[(j, e.i)] -= r.tangent;
        }
    }
    Ok((g, kt))
}
