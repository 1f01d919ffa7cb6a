//! Prior constants, MH tuning and the named prior presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Constants of every prior in the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// `σ²_j ~ IGa(d0_z, d1_z)` for free latent variances.
    pub d0_z: f64,
    pub d1_z: f64,
    /// `σ²_μl ~ IGa(d0_mu, d1_mu)` for the base-measure variances.
    pub d0_mu: f64,
    pub d1_mu: f64,
    /// Weight of the point mass at `a = 0`.
    pub alpha: f64,
    pub d0_a: f64,
    pub d1_a: f64,
    /// `b + a ~ Ga(d0_b, d1_b)`.
    pub d0_b: f64,
    pub d1_b: f64,
}

impl Default for Priors {
    fn default() -> Self {
        PriorPreset::C.priors()
    }
}

impl Priors {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("d0_z", self.d0_z),
            ("d1_z", self.d1_z),
            ("d0_mu", self.d0_mu),
            ("d1_mu", self.d1_mu),
            ("d0_a", self.d0_a),
            ("d1_a", self.d1_a),
            ("d0_b", self.d0_b),
            ("d1_b", self.d1_b),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Hyper(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Hyper(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Variance prior presets used in the simulation studies; the
/// Poisson–Dirichlet constants are shared (`α = 0.5`, all `d = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorPreset {
    A,
    B,
    C,
}

impl PriorPreset {
    pub const ALL: [PriorPreset; 3] = [PriorPreset::A, PriorPreset::B, PriorPreset::C];

    pub fn priors(self) -> Priors {
        let (d0, d1) = match self {
            PriorPreset::A => (0.1, 0.1),
            PriorPreset::B => (1.0, 1.0),
            PriorPreset::C => (2.1, 30.0),
        };
        Priors {
            d0_z: d0,
            d1_z: d1,
            d0_mu: d0,
            d1_mu: d1,
            alpha: 0.5,
            d0_a: 1.0,
            d1_a: 1.0,
            d0_b: 1.0,
            d1_b: 1.0,
        }
    }
}

impl fmt::Display for PriorPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorPreset::A => "A",
            PriorPreset::B => "B",
            PriorPreset::C => "C",
        })
    }
}

impl FromStr for PriorPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(PriorPreset::A),
            "B" | "b" => Ok(PriorPreset::B),
            "C" | "c" => Ok(PriorPreset::C),
            other => Err(Error::Config(format!("unknown prior preset {other:?}"))),
        }
    }
}

/// Proposal scales of the Metropolis–Hastings steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Shape of the gamma proposal for free variances.
    pub phi_sigma: f64,
    /// Correlation window is `support length / phi_rho` on each side.
    pub phi_rho: f64,
    /// Half-width of the uniform random walk on `b`.
    pub phi_b: f64,
    /// Fault injection for sampler-correctness checks. Never set outside tests.
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "Faults::is_none")]
    pub faults: Faults,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            phi_sigma: 5.0,
            phi_rho: 4.0,
            phi_b: 2.0,
            faults: Faults::default(),
        }
    }
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Faults {
    pub drop_variance_hastings: bool,
    pub drop_correlation_hastings: bool,
}

impl Faults {
    pub fn is_none(&self) -> bool {
        *self == Faults::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let c = PriorPreset::C.priors();
        assert_eq!((c.d0_z, c.d1_z, c.d0_mu, c.d1_mu), (2.1, 30.0, 2.1, 30.0));
        let a = PriorPreset::A.priors();
        assert_eq!((a.d0_z, a.d1_z, a.d0_mu, a.d1_mu), (0.1, 0.1, 0.1, 0.1));
        let b = PriorPreset::B.priors();
        assert_eq!((b.alpha, b.d0_a, b.d1_a, b.d0_b, b.d1_b), (0.5, 1.0, 1.0, 1.0, 1.0));
        assert!(c.validate().is_ok());
        assert_eq!("c".parse::<PriorPreset>().unwrap(), PriorPreset::C);
        assert!("D".parse::<PriorPreset>().is_err());
    }

    #[test]
    fn preset_c_prior_moments() {
        // IGa(2.1, 30): mean 30/1.1, variance mean²/(0.1)
        let c = PriorPreset::C.priors();
        let mean = c.d1_z / (c.d0_z - 1.0);
        let var = mean * mean / (c.d0_z - 2.0);
        assert!((mean - 27.27).abs() < 0.01);
        assert!((var - 7438.0).abs() < 1.0);
    }
}
