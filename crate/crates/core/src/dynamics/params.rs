use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// What a parameter does to the full-order model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterRole {
    /// Multiplies every element's linear stiffness.
    StiffnessScale,
    /// Multiplies every element's cubic coefficient.
    CubicScale,
    /// Multiplies the excitation signal.
    Amplitude,
    /// Angle (rad) blending the primary and secondary load patterns.
    Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::dim(format!(
                "{} parameter names for {} values",
                names.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("parameter {} is not finite", names[bad])));
        }
        Ok(ParameterVector { names, values })
    }

    /// Parameter vector with generated names `p0, p1, ...`.
    pub fn unnamed(values: Vec<f64>) -> Self {
        let names = (0..values.len()).map(|i| format!("p{i}")).collect();
        ParameterVector { names, values }
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Uniform { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub marginal: Marginal,
    /// Truncation bounds; normal marginals default to mean ± 4 std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

impl ParameterSpec {
    pub fn normal(name: &str, mean: f64, std: f64) -> Self {
        ParameterSpec { name: name.into(), marginal: Marginal::Normal { mean, std }, bounds: None }
    }

    pub fn uniform(name: &str, lower: f64, upper: f64) -> Self {
        ParameterSpec { name: name.into(), marginal: Marginal::Uniform { lower, upper }, bounds: None }
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.bounds = Some([lower, upper]);
        self
    }

    pub fn effective_bounds(&self) -> (f64, f64) {
        match (self.bounds, self.marginal) {
            (Some([lo, hi]), _) => (lo, hi),
            (None, Marginal::Uniform { lower, upper }) => (lower, upper),
            (None, Marginal::Normal { mean, std }) => (mean - 4.0 * std, mean + 4.0 * std),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.marginal {
            Marginal::Normal { mean, std } => {
                if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::config(format!(
                        "parameter {}: normal marginal needs std > 0",
                        self.name
                    )));
                }
            }
            Marginal::Uniform { lower, upper } => {
                if !(lower < upper) {
                    return Err(Error::config(format!(
                        "parameter {}: uniform marginal needs lower < upper",
                        self.name
                    )));
                }
            }
        }
        let (lo, hi) = self.effective_bounds();
        if !(lo < hi) {
            return Err(Error::config(format!("parameter {}: empty truncation bounds", self.name)));
        }
        Ok(())
    }

    /// Maps a probability level `u ∈ [0, 1]` of the truncated marginal to a value.
    fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.effective_bounds();
        match self.marginal {
            Marginal::Uniform { .. } => lo + u * (hi - lo),
            Marginal::Normal { mean, std } => {
                let n = Normal::new(mean, std).expect("validated");
                let (flo, fhi) = (n.cdf(lo), n.cdf(hi));
                let level = (flo + u * (fhi - flo)).clamp(1e-300, 1.0 - 1e-16);
                n.inverse_cdf(level).clamp(lo, hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub parameters: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(parameters: Vec<ParameterSpec>) -> Result<Self> {
        let s = ParameterSpace { parameters };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(Error::config("parameter space is empty"));
        }
        self.parameters.iter().try_for_each(ParameterSpec::validate)
    }

    pub fn k(&self) -> usize {
        self.parameters.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(ParameterSpec::effective_bounds).collect()
    }

    pub fn clamp(&self, values: &mut [f64]) {
        for (v, (lo, hi)) in values.iter_mut().zip(self.bounds()) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Latin-hypercube design of `n` samples.
///
/// Each marginal's probability axis is cut into `n` equiprobable strata and
/// every stratum receives exactly one sample; normal marginals are realized
/// through the inverse CDF restricted to their truncation bounds.
pub fn sample_parameters_lhs(
    space: &ParameterSpace,
    n: usize,
    seed: u64,
) -> Result<Vec<ParameterVector>> {
    space.validate()?;
    if n == 0 {
        return Err(Error::config("LHS needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(space.k());
    for spec in &space.parameters {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let col: Vec<f64> = strata
            .iter()
            .map(|&s| {
                let u = (s as f64 + rng.random::<f64>()) / n as f64;
                spec.quantile(u)
            })
            .collect();
        columns.push(col);
    }
    let names = space.names();
    Ok((0..n)
        .map(|i| ParameterVector {
            names: names.clone(),
            values: columns.iter().map(|c| c[i]).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_space() -> ParameterSpace {
        ParameterSpace::new(vec![
            ParameterSpec::uniform("a", 0.0, 1.0),
            ParameterSpec::uniform("b", -2.0, 3.0),
        ])
        .unwrap()
    }

    #[test]
    fn single_sample_respects_bounds() {
        let space = ParameterSpace::new(vec![ParameterSpec::normal("E", 210.0, 8.0).with_bounds(200.0, 220.0)])
            .unwrap();
        let s = sample_parameters_lhs(&space, 1, 3).unwrap();
        assert_eq!(s.len(), 1);
        assert!((200.0..=220.0).contains(&s[0].values[0]));
    }

    #[test]
    fn every_decile_holds_one_sample() {
        let space = uniform_space();
        let samples = sample_parameters_lhs(&space, 10, 42).unwrap();
        for (d, (lo, hi)) in space.bounds().into_iter().enumerate() {
            let mut counts = [0usize; 10];
            for s in &samples {
                let bin = (((s.values[d] - lo) / (hi - lo)) * 10.0).floor() as usize;
                counts[bin.min(9)] += 1;
            }
            assert_eq!(counts, [1; 10], "marginal {d}");
        }
    }

    #[test]
    fn same_seed_same_design() {
        let space = uniform_space();
        assert_eq!(
            sample_parameters_lhs(&space, 17, 9).unwrap(),
            sample_parameters_lhs(&space, 17, 9).unwrap()
        );
        assert_ne!(
            sample_parameters_lhs(&space, 17, 9).unwrap(),
            sample_parameters_lhs(&space, 17, 10).unwrap()
        );
    }

    #[test]
    fn degenerate_marginals_are_rejected() {
        let bad = ParameterSpace { parameters: vec![ParameterSpec::normal("x", 1.0, 0.0)] };
        assert!(matches!(sample_parameters_lhs(&bad, 4, 0), Err(Error::Config(_))));
        let bad = ParameterSpace { parameters: vec![ParameterSpec::uniform("x", 1.0, 1.0)] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normal_strata_are_equiprobable() {
        let spec = ParameterSpec::normal("E", 0.0, 1.0).with_bounds(-3.0, 3.0);
        let space = ParameterSpace::new(vec![spec.clone()]).unwrap();
        let n = 8;
        let samples = sample_parameters_lhs(&space, n, 5).unwrap();
        let dist = Normal::new(0.0, 1.0).unwrap();
        let (flo, fhi) = (dist.cdf(-3.0), dist.cdf(3.0));
        let mut counts = vec![0; n];
        for s in samples {
            let u = (dist.cdf(s.values[0]) - flo) / (fhi - flo);
            counts[((u * n as f64).floor() as usize).min(n - 1)] += 1;
        }
        assert_eq!(counts, vec![1; n]);
    }
}
