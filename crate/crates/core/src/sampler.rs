//! The Gibbs sampler: collapsed Pólya-urn reallocation of the record means,
//! refresh of the cluster locations, the covariance and hyperparameter
//! updates, and latent resampling, chained into sweeps with burn-in and
//! thinning.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Priors, Tuning};
use crate::covariance::{self, CovarianceState};
use crate::density::{self, log_sum_exp, LN_2PI};
use crate::error::{Error, Result};
use crate::latent::{self, LatentState};
use crate::pdprocess::{self, BaseMeasure, PdHyper};
use crate::schema::{validate_dataset, Dataset, Schema, VariableKind};

mod geweke;

pub use geweke::{geweke_joint_test, GewekeConfig, GewekeReport, GewekeStatistic};

/// Cluster allocation of every record and the unique locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    labels: Vec<usize>,
    locations: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

const UNASSIGNED: usize = usize::MAX;

impl MixtureState {
    /// Every record in one cluster at `location`.
    pub fn single_cluster(n: usize, location: Vec<f64>) -> Self {
        MixtureState {
            labels: vec![0; n],
            locations: vec![location],
            counts: vec![n],
        }
    }

    pub fn from_parts(labels: Vec<usize>, locations: Vec<Vec<f64>>) -> Result<Self> {
        let mut counts = vec![0; locations.len()];
        for &l in &labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::Dimension(format!("label {l} without a location")))? += 1;
        }
        if counts.contains(&0) {
            return Err(Error::Dimension("a location has no members".into()));
        }
        Ok(MixtureState {
            labels,
            locations,
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of clusters.
    pub fn r(&self) -> usize {
        self.counts.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        &self.locations
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `μ_i`, the location of record `i`'s cluster.
    pub fn location_of(&self, i: usize) -> &[f64] {
        &self.locations[self.labels[i]]
    }

    fn remove(&mut self, i: usize) {
        let c = self.labels[i];
        self.labels[i] = UNASSIGNED;
        self.counts[c] -= 1;
        if self.counts[c] == 0 {
            let last = self.counts.len() - 1;
            self.counts.swap_remove(c);
            self.locations.swap_remove(c);
            if c != last {
                for l in self.labels.iter_mut().filter(|l| **l == last) {
                    *l = c;
                }
            }
        }
    }

    fn assign(&mut self, i: usize, c: usize) {
        self.labels[i] = c;
        self.counts[c] += 1;
    }

    fn open(&mut self, i: usize, location: Vec<f64>) {
        self.labels[i] = self.counts.len();
        self.counts.push(1);
        self.locations.push(location);
    }

    /// Relabel clusters in order of first appearance.
    pub fn compact(&mut self) {
        let r = self.r();
        let mut map = vec![UNASSIGNED; r];
        let mut next = 0;
        for &l in &self.labels {
            if map[l] == UNASSIGNED {
                map[l] = next;
                next += 1;
            }
        }
        let mut locations = vec![Vec::new(); r];
        let mut counts = vec![0; r];
        for old in 0..r {
            locations[map[old]] = std::mem::take(&mut self.locations[old]);
            counts[map[old]] = self.counts[old];
        }
        for l in &mut self.labels {
            *l = map[*l];
        }
        self.locations = locations;
        self.counts = counts;
    }

    /// Counts sum to `n`, every cluster is occupied and labels are `0..r`.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mut tally = vec![0; self.r()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.r() {
                return Err(format!("record {i} has label {l} with r = {}", self.r()));
            }
            tally[l] += 1;
        }
        if tally != self.counts {
            return Err("cluster counts out of sync with labels".into());
        }
        if self.counts.iter().sum::<usize>() != self.n() || self.counts.contains(&0) {
            return Err("cluster counts do not partition the records".into());
        }
        Ok(())
    }
}

/// Starting allocation of the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Every record in its own cluster, located at its latent vector.
    #[default]
    Singletons,
    /// All records in one cluster at the mean latent vector.
    OneCluster,
}

/// How design weights enter the kernel variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `π_i = 1` for every record.
    Ignore,
    /// `π_i = 1/w_i`.
    Design,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub kappa: f64,
    pub seed: u64,
    /// Independent rng stream, used to separate parallel chains.
    #[serde(default)]
    pub stream: u64,
    pub weight_mode: WeightMode,
    pub priors: Priors,
    pub tuning: Tuning,
    /// Verify every structural invariant after each sweep.
    #[serde(default)]
    pub check_invariants: bool,
    #[serde(default)]
    pub init: InitStrategy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 4700,
            burn_in: 200,
            thinning: 3,
            kappa: 1.0,
            seed: 0,
            stream: 0,
            weight_mode: WeightMode::Ignore,
            priors: Priors::default(),
            tuning: Tuning::default(),
            check_invariants: false,
            init: InitStrategy::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        let t = &self.tuning;
        if !(t.phi_sigma > 0.0 && t.phi_rho > 0.0 && t.phi_b > 0.0) {
            return Err(Error::Config("tuning constants must be positive".into()));
        }
        self.priors.validate()
    }

    /// Number of stored draws: `⌊(iterations − burn-in)/thinning⌋`.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thinning)
    }

    /// Effective sampling probabilities for `dataset` under the weight mode.
    pub fn sampling_probs(&self, dataset: &Dataset) -> Vec<f64> {
        match self.weight_mode {
            WeightMode::Ignore => vec![1.0; dataset.n()],
            WeightMode::Design => dataset.sampling_probs().to_vec(),
        }
    }
}

/// Everything the sampler mutates, including the rng position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub latent: LatentState,
    pub mixture: MixtureState,
    pub cov: CovarianceState,
    pub base: BaseMeasure,
    pub hyper: PdHyper,
    pub rng: ChaCha8Rng,
    pub iteration: usize,
}

impl ChainState {
    /// Starting point: the allocation chosen by `config.init`, identity
    /// correlation, free variances and base variances taken from
    /// the latent columns, `a = 0`, `b = 1`.
    pub fn init(schema: &Schema, dataset: &Dataset, config: &SamplerConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.stream);
        let latent = LatentState::new(schema, dataset)?;
        let (n, q) = (latent.n(), latent.q());
        let mut mean = vec![0.0; q];
        let mut second = vec![0.0; q];
        for i in 0..n {
            for (j, &z) in latent.row(i).iter().enumerate() {
                mean[j] += z / n as f64;
                second[j] += z * z / n as f64;
            }
        }
        let var: Vec<f64> = (0..q)
            .map(|j| {
                let v = second[j] - mean[j] * mean[j];
                if v > 1e-8 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let sd = var.iter().map(|v| v.sqrt()).collect();
        let cov = CovarianceState::new(
            schema.free_variance().to_vec(),
            sd,
            config.priors.d0_z,
            config.priors.d1_z,
            config.tuning,
        )?;
        let base_var = second.iter().map(|&s| s.max(1.0)).collect();
        let base = BaseMeasure::new(base_var, config.priors.d0_mu, config.priors.d1_mu)?;
        let hyper = PdHyper::new(0.0, 1.0, &config.priors, config.tuning.phi_b)?;
        Ok(ChainState {
            mixture: match config.init {
                InitStrategy::OneCluster => MixtureState::single_cluster(n, mean),
                InitStrategy::Singletons => MixtureState {
                    labels: (0..n).collect(),
                    locations: (0..n).map(|i| latent.row(i).to_vec()).collect(),
                    counts: vec![1; n],
                },
            },
            latent,
            cov,
            base,
            hyper,
            rng,
            iteration: 0,
        })
    }
}

/// Versioned snapshot of a chain; restoring it continues the chain exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: SamplerConfig,
    pub state: ChainState,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;
}

/// Read-only inputs of a sweep.
pub struct Problem<'a> {
    pub schema: &'a Schema,
    pub dataset: &'a Dataset,
    /// Effective `π_i`.
    pub probs: &'a [f64],
    pub kappa: f64,
}

/// Log density of `N(x | mean, scale·Σ)`.
fn ln_kernel(factor: &covariance::SigmaFactor, x: &[f64], mean: &[f64], scale: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(x.iter().zip(mean).map(|(a, b)| a - b));
    let q = x.len() as f64;
    -0.5 * (q * LN_2PI + q * scale.ln() + factor.log_det + factor.mahalanobis(buf) / scale)
}

/// Per-sweep cache of `N(· | 0, sΣ + Σ_μ)` factorisations keyed by `s`.
#[derive(Default)]
struct PredictiveCache {
    scale: Option<f64>,
    factor: Option<covariance::SigmaFactor>,
}

impl PredictiveCache {
    fn get(&mut self, scale: f64, cov: &CovarianceState, base: &BaseMeasure) -> Result<&covariance::SigmaFactor> {
        if self.scale != Some(scale) || self.factor.is_none() {
            let mut m = cov.sigma() * scale;
            for (l, v) in base.variances.iter().enumerate() {
                m[(l, l)] += v;
            }
            self.factor = Some(covariance::SigmaFactor::new(m)?);
            self.scale = Some(scale);
        }
        Ok(self.factor.as_ref().expect("just filled"))
    }
}

/// Mean and covariance of a Gaussian given its precision `P` and linear term
/// `h = Pν`, plus a draw from it.
fn gaussian_from_precision<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = precision
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("location posterior precision"))?;
    let mean = chol.solve(&linear);
    let eps = DVector::from_fn(mean.len(), |_, _| density::std_normal(rng));
    // x = ν + L⁻ᵀ ε has covariance (LLᵀ)⁻¹
    let shift = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("triangular factor is invertible");
    Ok((mean.clone(), mean + shift))
}

/// `(ν_i, V_i)` for a record opening a new cluster:
/// `V_i = ((sΣ)⁻¹ + Σ_μ⁻¹)⁻¹`, `ν_i = V_i (sΣ)⁻¹ z_i` with `s = κπ_i`.
pub fn new_cluster_posterior(z: &[f64], scale: f64, cov: &CovarianceState, base: &BaseMeasure) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let kernel_precision = cov.precision() / scale;
    let mut p = kernel_precision.clone();
    for (l, v) in base.variances.iter().enumerate() {
        p[(l, l)] += 1.0 / v;
    }
    let v = p
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("new-cluster precision"))?
        .inverse();
    let nu = &v * (kernel_precision * DVector::from_column_slice(z));
    Ok((nu, v))
}

/// `(ν*_j, V*_j)` for a cluster with the given members:
/// `V* = ((Σ 1/π_i)/κ · Σ⁻¹ + Σ_μ⁻¹)⁻¹`, `ν* = V* Σ⁻¹ (Σ z_i/π_i)/κ`.
pub fn cluster_posterior(
    members: &[usize],
    latent: &LatentState,
    probs: &[f64],
    kappa: f64,
    cov: &CovarianceState,
    base: &BaseMeasure,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (precision, linear) = cluster_precision(members, latent, probs, kappa, cov, base);
    let v = precision
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("cluster location precision"))?
        .inverse();
    Ok((&v * linear, v))
}

fn cluster_precision(
    members: &[usize],
    latent: &LatentState,
    probs: &[f64],
    kappa: f64,
    cov: &CovarianceState,
    base: &BaseMeasure,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = latent.q();
    let mut weight = 0.0;
    let mut sum = DVector::zeros(q);
    for &i in members {
        let w = 1.0 / probs[i];
        weight += w;
        for (l, z) in latent.row(i).iter().enumerate() {
            sum[l] += w * z;
        }
    }
    let mut p = cov.precision() * (weight / kappa);
    for (l, v) in base.variances.iter().enumerate() {
        p[(l, l)] += 1.0 / v;
    }
    let linear = cov.precision() * sum / kappa;
    (p, linear)
}

/// Reallocate record `i` by its collapsed Pólya-urn conditional. Returns the
/// selection probabilities (new cluster first).
#[allow(clippy::too_many_arguments)]
pub fn update_mu_i<R: Rng + ?Sized>(
    i: usize,
    latent: &LatentState,
    mixture: &mut MixtureState,
    cov: &CovarianceState,
    base: &BaseMeasure,
    hyper: &PdHyper,
    prob_i: f64,
    kappa: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    update_mu_i_cached(i, latent, mixture, cov, base, hyper, prob_i, kappa, rng, &mut PredictiveCache::default())
}

#[allow(clippy::too_many_arguments)]
fn update_mu_i_cached<R: Rng + ?Sized>(
    i: usize,
    latent: &LatentState,
    mixture: &mut MixtureState,
    cov: &CovarianceState,
    base: &BaseMeasure,
    hyper: &PdHyper,
    prob_i: f64,
    kappa: f64,
    rng: &mut R,
    cache: &mut PredictiveCache,
) -> Result<Vec<f64>> {
    mixture.remove(i);
    let z = latent.row(i);
    let scale = kappa * prob_i;
    let r = mixture.r();
    let (a, b) = (hyper.a, hyper.b);
    let mut buf = Vec::with_capacity(z.len());

    let mut log_w = Vec::with_capacity(r + 1);
    if r == 0 {
        log_w.push(0.0);
    } else {
        let zeros = vec![0.0; z.len()];
        let predictive = cache.get(scale, cov, base)?;
        log_w.push((b + a * r as f64).ln() + ln_kernel(predictive, z, &zeros, 1.0, &mut buf));
        for j in 0..r {
            let lk = ln_kernel(cov.factor(), z, &mixture.locations[j], scale, &mut buf);
            log_w.push((mixture.counts[j] as f64 - a).ln() + lk);
        }
    }
    let norm = log_sum_exp(&log_w);
    let probs: Vec<f64> = log_w.iter().map(|w| (w - norm).exp()).collect();

    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = probs.len() - 1;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = k;
            break;
        }
    }
    if pick == 0 {
        let kernel_precision = cov.precision() / scale;
        let mut precision = kernel_precision.clone();
        for (l, v) in base.variances.iter().enumerate() {
            precision[(l, l)] += 1.0 / v;
        }
        let linear = kernel_precision * DVector::from_column_slice(z);
        let (_, draw) = gaussian_from_precision(precision, linear, rng)?;
        mixture.open(i, draw.iter().copied().collect());
    } else {
        mixture.assign(i, pick - 1);
    }
    Ok(probs)
}

/// Redraw every cluster location from its Gaussian full conditional.
pub fn update_unique_mus<R: Rng + ?Sized>(
    latent: &LatentState,
    mixture: &mut MixtureState,
    cov: &CovarianceState,
    base: &BaseMeasure,
    kappa: f64,
    probs: &[f64],
    rng: &mut R,
) -> Result<()> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); mixture.r()];
    for (i, &l) in mixture.labels.iter().enumerate() {
        members[l].push(i);
    }
    for (j, m) in members.iter().enumerate() {
        let (precision, linear) = cluster_precision(m, latent, probs, kappa, cov, base);
        let (_, draw) = gaussian_from_precision(precision, linear, rng)?;
        mixture.locations[j] = draw.iter().copied().collect();
    }
    Ok(())
}

/// MH acceptance counts of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub variance: (usize, usize),
    pub correlation: (usize, usize),
    pub a: (usize, usize),
    pub b: (usize, usize),
}

impl Acceptance {
    fn tally(slot: &mut (usize, usize), accepted: bool) {
        slot.0 += accepted as usize;
        slot.1 += 1;
    }
}

/// One full scan: (a) reallocations, (b) locations, (c) base variances,
/// (d) free variances, (e) correlations, (f) `a`, (g) `b`, (h) latents.
pub fn gibbs_sweep(state: &mut ChainState, problem: &Problem<'_>, acceptance: &mut Acceptance, check: bool) -> Result<()> {
    let ChainState {
        latent,
        mixture,
        cov,
        base,
        hyper,
        rng,
        iteration,
    } = state;
    *iteration += 1;
    let n = latent.n();
    let fail = |message: String| Error::Invariant {
        iteration: *iteration,
        message,
    };

    let mut cache = PredictiveCache::default();
    for i in 0..n {
        let p = update_mu_i_cached(i, latent, mixture, cov, base, hyper, problem.probs[i], problem.kappa, rng, &mut cache)?;
        if check {
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-10 || p.iter().any(|&x| !(x >= 0.0)) {
                return Err(fail(format!("selection probabilities for record {i} sum to {total}")));
            }
        }
    }
    mixture.compact();

    update_unique_mus(latent, mixture, cov, base, problem.kappa, problem.probs, rng)?;
    pdprocess::update_sigma_mu(base, &mixture.locations, rng);

    let scatter = covariance::scatter_matrix(latent, mixture, problem.probs, problem.kappa);
    for j in 0..cov.q() {
        if cov.free()[j] {
            let ok = covariance::update_variance(cov, j, &scatter, n, rng)?;
            Acceptance::tally(&mut acceptance.variance, ok);
        }
    }
    for j in 0..cov.q() {
        for k in j + 1..cov.q() {
            let ok = covariance::update_correlation(cov, j, k, &scatter, n, rng)?;
            Acceptance::tally(&mut acceptance.correlation, ok);
            if check && ok {
                cov.check().map_err(&fail)?;
            }
        }
    }

    let sizes = mixture.counts.clone();
    let ok = pdprocess::update_a(hyper, &sizes, rng)?;
    Acceptance::tally(&mut acceptance.a, ok);
    let ok = pdprocess::update_b(hyper, &sizes, rng)?;
    Acceptance::tally(&mut acceptance.b, ok);

    latent::resample_latents(latent, problem.schema, problem.dataset, mixture, cov, problem.kappa, problem.probs, rng)?;

    if check {
        mixture.check().map_err(&fail)?;
        cov.check().map_err(&fail)?;
        latent::check_decode(latent, problem.schema, problem.dataset).map_err(&fail)?;
        if !(0.0..1.0).contains(&hyper.a) || !(hyper.b > -hyper.a) {
            return Err(fail(format!("(a, b) = ({}, {}) left its domain", hyper.a, hyper.b)));
        }
    }
    Ok(())
}

/// Stored output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    /// Cluster labels per kept iteration, relabelled by first appearance.
    pub partitions: Vec<Vec<u32>>,
    pub kept_iterations: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: Vec<usize>,
    /// Free latent variances per kept iteration.
    pub sigma2: Vec<Vec<f64>>,
    pub sigma2_mu: Vec<Vec<f64>>,
    /// Number of clusters after every sweep, burn-in included.
    pub r_all: Vec<usize>,
    pub acceptance: Acceptance,
    /// Sweeps whose invariants were verified.
    pub invariant_checks: usize,
    pub elapsed_secs: f64,
}

impl ChainOutput {
    /// Equality of everything except timing.
    pub fn same_draws(&self, other: &ChainOutput) -> bool {
        let mut a = self.clone();
        a.elapsed_secs = other.elapsed_secs;
        a == *other
    }

    /// Posterior probability of each cluster count, indexed by `r`.
    pub fn r_histogram(&self) -> Vec<f64> {
        let max = self.r.iter().copied().max().unwrap_or(0);
        let mut h = vec![0.0; max + 1];
        for &r in &self.r {
            h[r] += 1.0;
        }
        let total = self.r.len().max(1) as f64;
        h.iter_mut().for_each(|x| *x /= total);
        h
    }

    /// Most frequent cluster count (smallest on ties).
    pub fn modal_r(&self) -> usize {
        let h = self.r_histogram();
        let mut best = 0;
        for (r, &p) in h.iter().enumerate() {
            if p > h[best] {
                best = r;
            }
        }
        best
    }
}

/// A chain bound to its data.
pub struct Chain<'a> {
    schema: &'a Schema,
    dataset: &'a Dataset,
    probs: Vec<f64>,
    config: SamplerConfig,
    state: ChainState,
    acceptance: Acceptance,
}

impl<'a> Chain<'a> {
    pub fn new(schema: &'a Schema, dataset: &'a Dataset, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let issues = validate_dataset(dataset, schema);
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let state = ChainState::init(schema, dataset, &config)?;
        Ok(Self::with_state(schema, dataset, config, state))
    }

    pub fn resume(schema: &'a Schema, dataset: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.version != Checkpoint::VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", checkpoint.version)));
        }
        checkpoint.config.validate()?;
        if checkpoint.state.latent.n() != dataset.n() || checkpoint.state.latent.q() != schema.q() {
            return Err(Error::Dimension("checkpoint does not match the dataset".into()));
        }
        Ok(Self::with_state(schema, dataset, checkpoint.config, checkpoint.state))
    }

    fn with_state(schema: &'a Schema, dataset: &'a Dataset, config: SamplerConfig, state: ChainState) -> Self {
        let probs = config.sampling_probs(dataset);
        Chain {
            schema,
            dataset,
            probs,
            config,
            state,
            acceptance: Acceptance::default(),
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: Checkpoint::VERSION,
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn sweep(&mut self) -> Result<()> {
        let problem = Problem {
            schema: self.schema,
            dataset: self.dataset,
            probs: &self.probs,
            kappa: self.config.kappa,
        };
        gibbs_sweep(&mut self.state, &problem, &mut self.acceptance, self.config.check_invariants)
    }

    /// Sweep until `config.iterations`, storing kept iterations. The chain
    /// stays usable afterwards, e.g. for a checkpoint.
    pub fn run(&mut self) -> Result<ChainOutput> {
        let start = Instant::now();
        let kept = self.config.kept();
        let mut out = ChainOutput {
            partitions: Vec::with_capacity(kept),
            kept_iterations: Vec::with_capacity(kept),
            a: Vec::with_capacity(kept),
            b: Vec::with_capacity(kept),
            r: Vec::with_capacity(kept),
            sigma2: Vec::with_capacity(kept),
            sigma2_mu: Vec::with_capacity(kept),
            r_all: Vec::with_capacity(self.config.iterations),
            acceptance: Acceptance::default(),
            invariant_checks: 0,
            elapsed_secs: 0.0,
        };
        let free = self.schema.free_variance_indices();
        while self.state.iteration < self.config.iterations {
            self.sweep()?;
            let t = self.state.iteration;
            if self.config.check_invariants {
                out.invariant_checks += 1;
            }
            let mix = &self.state.mixture;
            out.r_all.push(mix.r());
            if self.config.keeps(t) {
                out.partitions.push(mix.labels().iter().map(|&l| l as u32).collect());
                out.kept_iterations.push(t);
                out.a.push(self.state.hyper.a);
                out.b.push(self.state.hyper.b);
                out.r.push(mix.r());
                out.sigma2.push(free.iter().map(|&j| self.state.cov.variance(j)).collect());
                out.sigma2_mu.push(self.state.base.variances.clone());
            }
        }
        out.acceptance = self.acceptance.clone();
        out.elapsed_secs = start.elapsed().as_secs_f64();
        Ok(out)
    }
}

/// Run one chain from its default starting point.
pub fn run_chain(dataset: &Dataset, schema: &Schema, config: &SamplerConfig) -> Result<ChainOutput> {
    Chain::new(schema, dataset, config.clone())?.run()
}

/// Categorical latent coordinates of the schema (those resampled in (h)).
pub fn categorical_coordinates(schema: &Schema) -> Vec<usize> {
    schema
        .variables()
        .iter()
        .filter(|v| !matches!(v.spec.kind, VariableKind::Continuous { .. }))
        .flat_map(|v| v.latent.clone())
        .collect()
}

/// Traces of a chain whose likelihood terms are switched off, so that each
/// update targets its prior alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorTrace {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// First free latent variance.
    pub sigma2: Vec<f64>,
    /// First base-measure variance.
    pub sigma2_mu: Vec<f64>,
    /// Every off-diagonal correlation, upper triangle row-major.
    pub rho: Vec<Vec<f64>>,
}

/// Run updates (c)–(g) with zero data: `n = 0`, a zero scatter matrix, no
/// cluster locations and an empty partition. Draws are kept every `thin`
/// sweeps.
pub fn run_prior_only(q: usize, priors: &Priors, tuning: Tuning, sweeps: usize, thin: usize, seed: u64) -> Result<PriorTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = CovarianceState::new(vec![true; q], vec![1.0; q], priors.d0_z, priors.d1_z, tuning)?;
    let mut base = BaseMeasure::new(vec![1.0; q], priors.d0_mu, priors.d1_mu)?;
    let mut hyper = PdHyper::new(0.0, 1.0, priors, tuning.phi_b)?;
    let zero = DMatrix::zeros(q, q);
    let mut trace = PriorTrace {
        rho: vec![Vec::new(); q * (q - 1) / 2],
        ..PriorTrace::default()
    };
    for t in 1..=sweeps {
        pdprocess::update_sigma_mu(&mut base, &[], &mut rng);
        for j in 0..q {
            covariance::update_variance(&mut cov, j, &zero, 0, &mut rng)?;
        }
        for j in 0..q {
            for k in j + 1..q {
                covariance::update_correlation(&mut cov, j, k, &zero, 0, &mut rng)?;
            }
        }
        pdprocess::update_a(&mut hyper, &[], &mut rng)?;
        pdprocess::update_b(&mut hyper, &[], &mut rng)?;
        if t % thin.max(1) == 0 {
            trace.a.push(hyper.a);
            trace.b.push(hyper.b);
            trace.sigma2.push(cov.variance(0));
            trace.sigma2_mu.push(base.variances[0]);
            let mut m = 0;
            for j in 0..q {
                for k in j + 1..q {
                    trace.rho[m].push(cov.omega()[(j, k)]);
                    m += 1;
                }
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PriorPreset;
    use crate::schema::{build_schema, Column, VariableSpec};

    fn unit_cov(q: usize) -> CovarianceState {
        CovarianceState::new(vec![true; q], vec![1.0; q], 1.0, 1.0, Tuning::default()).unwrap()
    }

    #[test]
    fn single_record_opens_its_own_cluster() {
        let latent = LatentState::from_rows(1, 2, vec![0.3, -1.0]).unwrap();
        let mut mix = MixtureState::single_cluster(1, vec![0.0, 0.0]);
        let base = BaseMeasure::new(vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let hyper = PdHyper::new(0.2, 1.0, &PriorPreset::C.priors(), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = update_mu_i(0, &latent, &mut mix, &unit_cov(2), &base, &hyper, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(p, vec![1.0]);
        assert_eq!(mix.r(), 1);
        mix.check().unwrap();
    }

    #[test]
    fn selection_probability_by_hand() {
        // record 1 at z = 0; record 0 sits alone in a cluster at μ* = 0
        let latent = LatentState::from_rows(2, 1, vec![5.0, 0.0]).unwrap();
        let mut mix = MixtureState::from_parts(vec![0, 1], vec![vec![0.0], vec![0.0]]).unwrap();
        let base = BaseMeasure::new(vec![1.0], 1.0, 1.0).unwrap();
        let hyper = PdHyper::new(0.0, 1.0, &PriorPreset::C.priors(), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = update_mu_i(1, &latent, &mut mix, &unit_cov(1), &base, &hyper, 1.0, 1.0, &mut rng).unwrap();
        // D0 = 1·N(0|0,2), D1 = 1·N(0|0,1)
        let d0 = (2.0 * std::f64::consts::PI * 2.0).sqrt().recip();
        let d1 = (2.0 * std::f64::consts::PI).sqrt().recip();
        let expected = d0 / (d0 + d1);
        assert!((p[0] - expected).abs() < 1e-14);
        assert!((p[0] - 0.414_213_562_373_095).abs() < 1e-12);
        assert_eq!(mix.counts().iter().sum::<usize>(), 2);
    }

    #[test]
    fn singleton_posterior_matches_new_cluster_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omega = covariance::sample_correlation_prior(3, &mut rng);
        let cov = CovarianceState::with_correlation(vec![true; 3], vec![1.5, 0.7, 2.0], omega, 1.0, 1.0, Tuning::default()).unwrap();
        let base = BaseMeasure::new(vec![3.0, 0.5, 10.0], 1.0, 1.0).unwrap();
        let latent = LatentState::from_rows(2, 3, vec![0.1, 2.0, -1.0, 4.0, 0.3, 0.9]).unwrap();
        let probs = [0.4, 0.25];
        let kappa = 1.7;
        let (nu, v) = new_cluster_posterior(latent.row(1), kappa * probs[1], &cov, &base).unwrap();
        let (nu2, v2) = cluster_posterior(&[1], &latent, &probs, kappa, &cov, &base).unwrap();
        assert!((nu - nu2).amax() < 1e-12);
        assert!((v - v2).amax() < 1e-12);
    }

    #[test]
    fn flat_base_gives_weighted_mean() {
        let cov = unit_cov(2);
        let base = BaseMeasure::new(vec![1e8, 1e8], 1.0, 1.0).unwrap();
        let latent = LatentState::from_rows(3, 2, vec![1.0, 2.0, 3.0, -1.0, 5.0, 0.0]).unwrap();
        let probs = [1.0, 0.5, 0.25];
        let (nu, _) = cluster_posterior(&[0, 1, 2], &latent, &probs, 1.0, &cov, &base).unwrap();
        let w: Vec<f64> = probs.iter().map(|p| 1.0 / p).collect();
        let tw: f64 = w.iter().sum();
        for l in 0..2 {
            let m: f64 = (0..3).map(|i| w[i] * latent.row(i)[l]).sum::<f64>() / tw;
            assert!((nu[l] - m).abs() < 1e-4);
        }
    }

    #[test]
    fn equal_weights_posterior_covariance() {
        let cov = unit_cov(2);
        let base = BaseMeasure::new(vec![2.0, 4.0], 1.0, 1.0).unwrap();
        let latent = LatentState::from_rows(3, 2, vec![0.0; 6]).unwrap();
        let (_, v) = cluster_posterior(&[0, 1, 2], &latent, &[1.0; 3], 1.0, &cov, &base).unwrap();
        assert!((v[(0, 0)] - 1.0 / (3.0 + 0.5)).abs() < 1e-14);
        assert!((v[(1, 1)] - 1.0 / (3.0 + 0.25)).abs() < 1e-14);
        assert!(v[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn compact_relabels_by_first_appearance() {
        let mut mix = MixtureState::from_parts(vec![2, 0, 2, 1], vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        mix.compact();
        assert_eq!(mix.labels(), &[0, 1, 0, 2]);
        assert_eq!(mix.locations(), &[vec![2.0], vec![0.0], vec![1.0]]);
        assert_eq!(mix.counts(), &[2, 1, 1]);
        mix.check().unwrap();
    }

    #[test]
    fn removal_keeps_bookkeeping() {
        let mut mix = MixtureState::from_parts(vec![0, 1, 2, 2], vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        mix.remove(1);
        assert_eq!(mix.r(), 2);
        assert_eq!(mix.labels()[2], 1);
        assert_eq!(mix.locations()[1], vec![2.0]);
        mix.assign(1, 0);
        mix.check().unwrap();
    }

    fn tiny_problem() -> (Schema, Dataset) {
        let schema = build_schema(&[VariableSpec::continuous("x"), VariableSpec::binary("b"), VariableSpec::nominal("t", 3)]).unwrap();
        let ds = Dataset::new(
            vec![
                Column::Continuous(vec![0.1, 2.0, -1.0, 3.5, 0.7, 1.1]),
                Column::Categorical(vec![0, 1, 1, 0, 1, 0]),
                Column::Categorical(vec![0, 1, 2, 2, 0, 1]),
            ],
            Some(vec![1.0, 2.0, 3.0, 1.5, 1.0, 4.0]),
        )
        .unwrap();
        (schema, ds)
    }

    #[test]
    fn stored_draw_count() {
        let (schema, ds) = tiny_problem();
        let cfg = SamplerConfig {
            iterations: 30,
            burn_in: 5,
            thinning: 4,
            ..SamplerConfig::default()
        };
        assert_eq!(cfg.kept(), 6);
        let out = run_chain(&ds, &schema, &cfg).unwrap();
        assert_eq!(out.partitions.len(), 6);
        assert_eq!(out.kept_iterations, vec![9, 13, 17, 21, 25, 29]);
        let one = SamplerConfig {
            iterations: 11,
            burn_in: 10,
            thinning: 1,
            ..SamplerConfig::default()
        };
        assert_eq!(run_chain(&ds, &schema, &one).unwrap().partitions.len(), 1);
        let paper = SamplerConfig::default();
        assert_eq!(paper.kept(), 1500);
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig {
            iterations: 10,
            burn_in: 10,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            thinning: 0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            kappa: 0.0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sweeps_keep_invariants_and_are_deterministic() {
        let (schema, ds) = tiny_problem();
        let cfg = SamplerConfig {
            iterations: 200,
            burn_in: 100,
            thinning: 1,
            weight_mode: WeightMode::Design,
            kappa: 0.5,
            seed: 17,
            check_invariants: true,
            ..SamplerConfig::default()
        };
        let a = run_chain(&ds, &schema, &cfg).unwrap();
        let b = run_chain(&ds, &schema, &cfg).unwrap();
        assert!(a.same_draws(&b));
        assert_eq!(a.invariant_checks, 200);
        let other = run_chain(&ds, &schema, &SamplerConfig { seed: 18, ..cfg }).unwrap();
        assert!(!a.same_draws(&other));
    }

    #[test]
    fn continuous_only_sweep_leaves_latents_untouched() {
        let schema = build_schema(&[VariableSpec::continuous("x"), VariableSpec::continuous("y")]).unwrap();
        let ds = Dataset::new(
            vec![Column::Continuous(vec![0.0, 1.0, 5.0]), Column::Continuous(vec![2.0, -2.0, 0.5])],
            None,
        )
        .unwrap();
        let cfg = SamplerConfig {
            iterations: 10,
            burn_in: 0,
            thinning: 1,
            ..SamplerConfig::default()
        };
        let mut chain = Chain::new(&schema, &ds, cfg).unwrap();
        let before = chain.state().latent.clone();
        for _ in 0..5 {
            chain.sweep().unwrap();
        }
        assert_eq!(chain.state().latent.as_slice(), before.as_slice());
    }

    #[test]
    fn checkpoint_resumes_bit_exactly() {
        let (schema, ds) = tiny_problem();
        let cfg = SamplerConfig {
            iterations: 40,
            burn_in: 10,
            thinning: 2,
            seed: 5,
            ..SamplerConfig::default()
        };
        let full = run_chain(&ds, &schema, &cfg).unwrap();

        let mut chain = Chain::new(&schema, &ds, cfg.clone()).unwrap();
        for _ in 0..10 {
            chain.sweep().unwrap();
        }
        let json = serde_json::to_string(&chain.checkpoint()).unwrap();
        let restored: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(restored, chain.checkpoint());
        let resumed = Chain::resume(&schema, &ds, restored).unwrap().run().unwrap();
        assert_eq!(resumed.partitions, full.partitions);
        assert_eq!(resumed.a, full.a);
        assert_eq!(resumed.sigma2, full.sigma2);
    }

    fn prior_test_priors() -> Priors {
        Priors {
            d0_z: 3.0,
            d1_z: 2.0,
            d0_mu: 3.0,
            d1_mu: 2.0,
            alpha: 0.3,
            d0_a: 1.0,
            d1_a: 1.0,
            d0_b: 2.0,
            d1_b: 1.0,
        }
    }

    #[test]
    fn prior_only_chain_recovers_the_priors() {
        use crate::diagnostics::{batch_means_variance, ks_test, mean_var};
        use statrs::distribution::{ContinuousCDF, Gamma, InverseGamma};

        let p = prior_test_priors();
        // the correlation chain is sticky; heavy thinning keeps the KS test honest
        let t = run_prior_only(3, &p, Tuning::default(), 600_000, 150, 5).unwrap();
        let n = t.a.len();
        assert_eq!(n, 4000);
        for rho in &t.rho {
            let ks = ks_test(rho, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
            assert!(ks.passes(), "rho {ks:?}");
        }
        let ga = Gamma::new(p.d0_b, p.d1_b).unwrap();
        let sum: Vec<f64> = t.a.iter().zip(&t.b).map(|(a, b)| a + b).collect();
        assert!(ks_test(&sum, |x| ga.cdf(x)).passes());
        let ig = InverseGamma::new(p.d0_z, p.d1_z).unwrap();
        assert!(ks_test(&t.sigma2, |x| ig.cdf(x)).passes());
        assert!(ks_test(&t.sigma2_mu, |x| ig.cdf(x)).passes());
        let zero: Vec<f64> = t.a.iter().map(|&a| (a == 0.0) as u8 as f64).collect();
        let (m, _) = mean_var(&zero);
        let se = batch_means_variance(&zero, 40).sqrt();
        assert!((m - p.alpha).abs() < 3.0 * se, "P(a = 0) = {m} ± {se}");
    }

    #[test]
    fn one_dimensional_variance_step_matches_inverse_gamma() {
        use crate::diagnostics::ks_test;
        use statrs::distribution::{ContinuousCDF, InverseGamma};

        // with n records of scatter s the full conditional is IGa(d0 + n/2, d1 + s/2)
        let (d0, d1, n, s) = (2.1, 30.0, 40, 55.0);
        let mut cov = CovarianceState::new(vec![true], vec![1.0], d0, d1, Tuning::default()).unwrap();
        let scatter = DMatrix::from_element(1, 1, s);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut draws = Vec::new();
        for t in 1..=40_000 {
            covariance::update_variance(&mut cov, 0, &scatter, n, &mut rng).unwrap();
            if t % 10 == 0 {
                draws.push(cov.variance(0));
            }
        }
        let exact = InverseGamma::new(d0 + n as f64 / 2.0, d1 + s / 2.0).unwrap();
        let ks = ks_test(&draws, |x| exact.cdf(x));
        assert!(ks.passes(), "{ks:?}");
        let direct: Vec<f64> = (0..4000).map(|_| density::inv_gamma(&mut rng, d0 + n as f64 / 2.0, d1 + s / 2.0)).collect();
        assert!(ks_test(&direct, |x| exact.cdf(x)).passes());
    }
}
