use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::ParameterVector;
use super::system::FomSystem;
use crate::error::{Error, Result};

/// Smallest stiffness a perturbed element may take, relative to its nominal value.
const MIN_RELATIVE_STIFFNESS: f64 = 1e-3;

/// Measurement twin: every element's linear stiffness `k_e(p)` is replaced by
/// an independent draw from `N(k_e(p), σ²)`, clamped to stay positive.
pub fn make_perturbed_twin(
    system: &FomSystem,
    p: &ParameterVector,
    sigma: f64,
    seed: u64,
) -> Result<FomSystem> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config("perturbation std must be non-negative"));
    }
    let ph = system.physical(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut twin = system.clone();
    for e in &mut twin.elements {
        let nominal = e.stiffness(&ph);
        let z: f64 = StandardNormal.sample(&mut rng);
        if nominal <= 0.0 {
            continue;
        }
        let draw = (nominal + sigma * z).max(MIN_RELATIVE_STIFFNESS * nominal);
        e.stiffness_factor *= draw / nominal;
    }
    Ok(twin)
}
