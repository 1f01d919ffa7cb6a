//! Joint-distribution test of the sampler: ancestral draws of
//! (parameters, data) against a chain that alternates a full sweep with a
//! fresh draw of the data given the parameters. Both target the same joint,
//! so every test statistic should agree in mean.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gibbs_sweep, Acceptance, ChainState, MixtureState, Problem};
use crate::config::{Priors, Tuning};
use crate::covariance::{self, CovarianceState};
use crate::density;
use crate::diagnostics::{batch_means_variance, mean_var};
use crate::error::Result;
use crate::latent::{decode_ordinal, LatentState};
use crate::pdprocess::{urn_prior_weights, BaseMeasure, PdHyper};
use crate::schema::{build_schema, Column, Dataset, Schema, VariableSpec};

/// Model and run length of the test. The model has one continuous and one
/// binary variable.
#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub probs: Vec<f64>,
    pub kappa: f64,
    pub priors: Priors,
    pub tuning: Tuning,
    pub marginal_draws: usize,
    pub successive_draws: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            probs: vec![0.5, 1.0, 0.25, 0.8],
            kappa: 1.0,
            // finite second moments for every statistic
            priors: Priors {
                d0_z: 3.0,
                d1_z: 3.0,
                d0_mu: 3.0,
                d1_mu: 3.0,
                alpha: 0.5,
                d0_a: 1.0,
                d1_a: 1.0,
                d0_b: 2.0,
                d1_b: 1.0,
            },
            tuning: Tuning::default(),
            marginal_draws: 20_000,
            successive_draws: 60_000,
            batches: 50,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStatistic {
    pub name: &'static str,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub statistics: Vec<GewekeStatistic>,
    pub acceptance: Acceptance,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

const NAMES: [&str; 12] = [
    "a",
    "a is zero",
    "b",
    "clusters",
    "log variance",
    "log variance squared",
    "correlation",
    "correlation squared",
    "log base variance 1",
    "log base variance 2",
    "location of record 0",
    "binary fraction",
];

fn statistics(state: &ChainState, ys: &[usize]) -> [f64; 12] {
    let ln_s2 = state.cov.variance(0).ln();
    let rho = state.cov.omega()[(0, 1)];
    [
        state.hyper.a,
        (state.hyper.a == 0.0) as u8 as f64,
        state.hyper.b,
        state.mixture.r() as f64,
        ln_s2,
        ln_s2 * ln_s2,
        rho,
        rho * rho,
        state.base.variances[0].ln(),
        state.base.variances[1].ln(),
        state.mixture.location_of(0)[0],
        ys.iter().sum::<usize>() as f64 / ys.len() as f64,
    ]
}

fn schema() -> Schema {
    build_schema(&[VariableSpec::continuous("x"), VariableSpec::binary("y")]).expect("static schema")
}

/// Draw `z_i ~ N(μ_i, κπ_iΣ)` for every record and decode the binary.
fn draw_data<R: Rng + ?Sized>(
    mixture: &MixtureState,
    cov: &CovarianceState,
    probs: &[f64],
    kappa: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<usize>) {
    let n = probs.len();
    let l = &cov.factor().chol;
    let mut z = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for (i, &p) in probs.iter().enumerate() {
        let mu = mixture.location_of(i);
        let e = [density::std_normal(rng), density::std_normal(rng)];
        let s = (kappa * p).sqrt();
        let z0 = mu[0] + s * l[(0, 0)] * e[0];
        let z1 = mu[1] + s * (l[(1, 0)] * e[0] + l[(1, 1)] * e[1]);
        z.extend([z0, z1]);
        ys.push(decode_ordinal(z1, &[f64::NEG_INFINITY, 0.0, f64::INFINITY]));
    }
    (z, ys)
}

fn dataset(z: &[f64], ys: &[usize], probs: &[f64]) -> Dataset {
    let xs = z.chunks(2).map(|r| r[0]).collect();
    Dataset::new(
        vec![Column::Continuous(xs), Column::Categorical(ys.to_vec())],
        Some(probs.iter().map(|p| 1.0 / p).collect()),
    )
    .expect("consistent columns")
}

/// Ancestral draw of every parameter and of the data.
fn prior_draw(config: &GewekeConfig, mut rng: ChaCha8Rng) -> Result<(ChainState, Vec<usize>)> {
    let p = &config.priors;
    let n = config.probs.len();
    let mut hyper = PdHyper::new(0.0, 1.0, p, config.tuning.phi_b)?;
    hyper.sample_prior(&mut rng);
    let mut base = BaseMeasure::new(vec![1.0; 2], p.d0_mu, p.d1_mu)?;
    base.sample_prior(&mut rng);

    let mut labels = Vec::with_capacity(n);
    let mut sizes: Vec<usize> = Vec::new();
    for i in 0..n {
        let w = urn_prior_weights(hyper.a, hyper.b, &sizes, i + 1)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = w.len() - 1;
        for (k, x) in w.iter().enumerate() {
            acc += x;
            if u < acc {
                pick = k;
                break;
            }
        }
        if pick == 0 {
            labels.push(sizes.len());
            sizes.push(1);
        } else {
            labels.push(pick - 1);
            sizes[pick - 1] += 1;
        }
    }
    let locations = (0..sizes.len())
        .map(|_| base.variances.iter().map(|v| v.sqrt() * density::std_normal(&mut rng)).collect())
        .collect();
    let mixture = MixtureState::from_parts(labels, locations)?;

    let sd0 = density::inv_gamma(&mut rng, p.d0_z, p.d1_z).sqrt();
    let omega: DMatrix<f64> = covariance::sample_correlation_prior(2, &mut rng);
    let cov = CovarianceState::with_correlation(vec![true, false], vec![sd0, 1.0], omega, p.d0_z, p.d1_z, config.tuning)?;

    let (z, ys) = draw_data(&mixture, &cov, &config.probs, config.kappa, &mut rng);
    let latent = LatentState::from_rows(n, 2, z)?;
    Ok((
        ChainState {
            latent,
            mixture,
            cov,
            base,
            hyper,
            rng,
            iteration: 0,
        },
        ys,
    ))
}

/// Run both simulators and compare the means of twelve statistics.
pub fn geweke_joint_test(config: &GewekeConfig) -> Result<GewekeReport> {
    let schema = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut marginal = vec![Vec::with_capacity(config.marginal_draws); NAMES.len()];
    for _ in 0..config.marginal_draws {
        let (state, ys) = prior_draw(config, ChaCha8Rng::from_rng(&mut rng))?;
        for (k, s) in statistics(&state, &ys).into_iter().enumerate() {
            marginal[k].push(s);
        }
    }

    let (mut state, mut ys) = prior_draw(config, ChaCha8Rng::from_rng(&mut rng))?;
    let mut successive = vec![Vec::with_capacity(config.successive_draws); NAMES.len()];
    let mut acceptance = Acceptance::default();
    for _ in 0..config.successive_draws {
        let data = dataset(state.latent.as_slice(), &ys, &config.probs);
        let problem = Problem {
            schema: &schema,
            dataset: &data,
            probs: &config.probs,
            kappa: config.kappa,
        };
        gibbs_sweep(&mut state, &problem, &mut acceptance, false)?;
        let (z, fresh) = draw_data(&state.mixture, &state.cov, &config.probs, config.kappa, &mut state.rng);
        state.latent = LatentState::from_rows(config.probs.len(), 2, z)?;
        ys = fresh;
        for (k, s) in statistics(&state, &ys).into_iter().enumerate() {
            successive[k].push(s);
        }
    }

    let statistics = NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let (m_mean, m_var) = mean_var(&marginal[k]);
            let (s_mean, _) = mean_var(&successive[k]);
            let se2 = m_var / marginal[k].len() as f64 + batch_means_variance(&successive[k], config.batches);
            GewekeStatistic {
                name,
                marginal_mean: m_mean,
                successive_mean: s_mean,
                z: (m_mean - s_mean) / se2.sqrt(),
            }
        })
        .collect();
    Ok(GewekeReport { statistics, acceptance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Faults;

    fn report(faults: Faults) -> GewekeReport {
        let mut config = GewekeConfig::default();
        config.tuning.faults = faults;
        let r = geweke_joint_test(&config).unwrap();
        for s in &r.statistics {
            eprintln!("{:<24} {:>10.4} {:>10.4} {:>7.2}", s.name, s.marginal_mean, s.successive_mean, s.z);
        }
        r
    }

    #[test]
    fn correct_sampler_agrees_with_ancestral_draws() {
        let r = report(Faults::default());
        assert!(r.max_abs_z() < 3.0, "max |z| = {}", r.max_abs_z());
    }

    #[test]
    fn missing_variance_hastings_term_is_detected() {
        let r = report(Faults {
            drop_variance_hastings: true,
            ..Faults::default()
        });
        assert!(r.max_abs_z() > 5.0, "max |z| = {}", r.max_abs_z());
    }

    #[test]
    fn missing_correlation_hastings_term_is_detected() {
        let r = report(Faults {
            drop_correlation_hastings: true,
            ..Faults::default()
        });
        assert!(r.max_abs_z() > 5.0, "max |z| = {}", r.max_abs_z());
    }
}
