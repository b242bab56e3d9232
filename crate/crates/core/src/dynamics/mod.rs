//! Parametric nonlinear full-order model, its perturbed measurement twin,
//! implicit Newmark integration and Latin-hypercube parameter sampling.

mod newmark;
mod params;
mod system;
mod twin;

pub(crate) use newmark::{newmark, step_count, SecondOrder};
pub use newmark::{integrate_from_rest, integrate_newmark, TimeHistory};
pub use params::{sample_parameters_lhs, Marginal, ParameterRole, ParameterSpace, ParameterSpec, ParameterVector};
pub(crate) use system::combine;
pub use system::{
    assemble_fom, evaluate_restoring, DampingConfig, Element, ElementResponse, ElementSpec, Excitation,
    ExcitationConfig, FomConfig, FomSystem, IntegratorConfig, Physical, SignalConfig, Topology,
};
pub use twin::make_perturbed_twin;
