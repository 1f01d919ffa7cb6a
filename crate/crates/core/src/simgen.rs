//! Seeded generators for the two simulation studies.
//!
//! Study 1 draws from a three-component trivariate Gaussian mixture and
//! observes it fully (I), through two binaries (II), or through the
//! binaries plus a three-level ordinal and pure noise (III). Study 2
//! places one uniform draw in each of 200 consecutive intervals of a
//! five-component univariate mixture and weights the records by the
//! interval probabilities.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{norm_cdf, norm_pdf, std_normal};
use crate::error::{Error, Result};
use crate::sampler::WeightMode;
use crate::schema::{build_schema, Column, Dataset, Schema, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [Scenario::I, Scenario::II, Scenario::III, Scenario::IV, Scenario::V, Scenario::VI];

    pub fn study(self) -> u8 {
        match self {
            Scenario::I | Scenario::II | Scenario::III => 1,
            _ => 2,
        }
    }

    pub fn default_n(self) -> usize {
        if self.study() == 1 {
            100
        } else {
            STUDY2_INTERVALS
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
            Scenario::IV => "IV",
            Scenario::V => "V",
            Scenario::VI => "VI",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            n: scenario.default_n(),
            seed,
        }
    }
}

/// Generated data with everything a run needs.
#[derive(Debug, Clone)]
pub struct SimData {
    pub specs: Vec<VariableSpec>,
    pub schema: Schema,
    pub dataset: Dataset,
    pub weight_mode: WeightMode,
    pub kappa: f64,
    /// Generating component of each record (study 1 only).
    pub true_labels: Option<Vec<usize>>,
    /// The full latent triples (study 1) or the single latent (study 2).
    pub latents: Vec<Vec<f64>>,
}

pub const STUDY1_MEANS: [[f64; 3]; 3] = [[2.0, 2.0, 5.0], [6.0, 4.0, 2.0], [1.0, 6.0, 2.0]];
pub const STUDY1_VARIANCES: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [0.1, 2.0, 0.1], [2.0, 0.1, 0.1]];

/// `y1 = 1(z1 > 5)`.
pub fn study1_y1(z1: f64) -> usize {
    (z1 > 5.0) as usize
}

/// `y3 = 1(z3 > 3)`.
pub fn study1_y3(z3: f64) -> usize {
    (z3 > 3.0) as usize
}

/// `y2 = 1(4 < z2 ≤ 5) + 2·1(z2 > 5)`.
pub fn study1_y2(z2: f64) -> usize {
    (z2 > 4.0) as usize + (z2 > 5.0) as usize
}

pub fn gen_study1<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<SimData> {
    if spec.scenario.study() != 1 {
        return Err(Error::Config(format!("scenario {} is not part of study 1", spec.scenario)));
    }
    let n = spec.n;
    let mut labels = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..3);
        let z: Vec<f64> = (0..3)
            .map(|l| STUDY1_MEANS[k][l] + STUDY1_VARIANCES[k][l].sqrt() * std_normal(rng))
            .collect();
        labels.push(k);
        latents.push(z);
    }
    let cat = |f: fn(f64) -> usize, l: usize| Column::Categorical(latents.iter().map(|z| f(z[l])).collect());
    let (specs, columns) = match spec.scenario {
        Scenario::I => (
            vec![VariableSpec::continuous("y1"), VariableSpec::continuous("y2"), VariableSpec::continuous("y3")],
            (0..3).map(|l| Column::Continuous(latents.iter().map(|z| z[l]).collect())).collect(),
        ),
        Scenario::II => (
            vec![VariableSpec::binary("y1"), VariableSpec::binary("y3")],
            vec![cat(study1_y1, 0), cat(study1_y3, 2)],
        ),
        _ => {
            let noise = Column::Continuous((0..n).map(|_| std_normal(rng)).collect());
            (
                vec![
                    VariableSpec::binary("y1"),
                    VariableSpec::ordinal("y2", 3),
                    VariableSpec::binary("y3"),
                    VariableSpec::continuous("y4"),
                ],
                vec![cat(study1_y1, 0), cat(study1_y2, 1), cat(study1_y3, 2), noise],
            )
        }
    };
    let schema = build_schema(&specs)?;
    let dataset = Dataset::from_input_order(&schema, columns, None)?;
    Ok(SimData {
        specs,
        schema,
        dataset,
        weight_mode: WeightMode::Ignore,
        kappa: 1.0,
        true_labels: Some(labels),
        latents,
    })
}

/// Finite mixture of univariate normals; `variances`, not standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl NormalMixture {
    /// The five-component target of study 2.
    pub fn study2() -> Self {
        NormalMixture {
            weights: vec![0.1, 0.05, 0.3, 0.25, 0.3],
            means: vec![10.0, 17.0, 20.0, 23.0, 32.0],
            variances: vec![4.0, 0.49, 1.0, 1.21, 25.0],
        }
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, &m), &v)| (w, m, v.sqrt()))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, s)| w * norm_pdf((x - m) / s) / s).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components().map(|(w, m, s)| w * norm_cdf((x - m) / s)).sum()
    }

    /// `Pr((lo, hi])`.
    pub fn interval_prob(&self, lo: f64, hi: f64) -> f64 {
        self.components()
            .map(|(w, m, s)| w * (norm_cdf((hi - m) / s) - norm_cdf((lo - m) / s)))
            .sum()
    }
}

pub const STUDY2_INTERVALS: usize = 200;
pub const STUDY2_WIDTH: f64 = 0.25;

/// Study-2 data plus the interval probabilities behind its weights.
#[derive(Debug, Clone)]
pub struct Study2Data {
    pub data: SimData,
    pub density: NormalMixture,
    /// `p_i = Pr(A_i)`.
    pub interval_probs: Vec<f64>,
}

/// Interval endpoints `τ_0 = 0, τ_i = τ_{i−1} + 0.25`.
pub fn study2_breaks(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 * STUDY2_WIDTH).collect()
}

pub fn gen_study2<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Study2Data> {
    let (weight_mode, divisor) = match spec.scenario {
        Scenario::IV => (WeightMode::Ignore, None),
        Scenario::V => (WeightMode::Design, Some(15.0)),
        Scenario::VI => (WeightMode::Design, Some(25.0)),
        other => return Err(Error::Config(format!("scenario {other} is not part of study 2"))),
    };
    let n = spec.n;
    let density = NormalMixture::study2();
    let tau = study2_breaks(n);
    let probs: Vec<f64> = tau.windows(2).map(|w| density.interval_prob(w[0], w[1])).collect();
    // (τ_{i−1}, τ_i]: 1 − u lies in (0, 1]
    let z: Vec<f64> = tau
        .windows(2)
        .map(|w| w[0] + (w[1] - w[0]) * (1.0 - rng.random::<f64>()))
        .collect();
    let p_bar = probs.iter().sum::<f64>() / n as f64;
    let weights: Vec<f64> = probs.iter().map(|p| p / p_bar).collect();
    let w_bar = weights.iter().sum::<f64>() / n as f64;
    let kappa = divisor.map_or(1.0, |d| w_bar / d);

    let specs = vec![VariableSpec::continuous("y")];
    let schema = build_schema(&specs)?;
    let dataset = Dataset::from_input_order(&schema, vec![Column::Continuous(z.clone())], Some(weights))?;
    Ok(Study2Data {
        data: SimData {
            specs,
            schema,
            dataset,
            weight_mode,
            kappa,
            true_labels: None,
            latents: z.into_iter().map(|x| vec![x]).collect(),
        },
        density,
        interval_probs: probs,
    })
}

/// Generate any scenario from its seed alone.
pub fn generate(spec: &ScenarioSpec) -> Result<SimData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.scenario.study() == 1 {
        gen_study1(spec, &mut rng)
    } else {
        Ok(gen_study2(spec, &mut rng)?.data)
    }
}
