use nalgebra::DMatrix;

use crate::dynamics::{FomSystem, ParameterVector};
use crate::error::Result;
use crate::hyperreduction::EcswWeights;
use crate::reduction::GlobalBasis;
use crate::rom::{galerkin_project, integrate_rom, reconstruct_full};

/// Full-field displacement of the (optionally hyper-reduced) ROM on basis `v`.
pub fn rom_displacement(
    system: &FomSystem,
    v: &DMatrix<f64>,
    hyper: Option<(&EcswWeights, &GlobalBasis)>,
    p: &ParameterVector,
    dt: f64,
    t_end: f64,
) -> Result<DMatrix<f64>> {
    let red = galerkin_project(system, v, hyper)?;
    let q = integrate_rom(&red, p, dt, t_end)?;
    Ok(reconstruct_full(&q, v)?.displacement)
}
