//! Kernel covariance `Σ = ΛΩΛ` split into standard deviations and a
//! correlation matrix, with Metropolis–Hastings updates for both parts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Tuning;
use crate::density::{self, ln_gamma_pdf};
use crate::error::{Error, Result};
use crate::latent::LatentState;
use crate::sampler::MixtureState;

/// `Σ` with its Cholesky factor, inverse and log-determinant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFactor {
    pub sigma: DMatrix<f64>,
    /// Lower-triangular `L` with `Σ = LLᵀ`.
    pub chol: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub log_det: f64,
}

impl SigmaFactor {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("kernel covariance"))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(SigmaFactor {
            sigma,
            chol: l,
            precision,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `xᵀ Σ⁻¹ x`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        let p = &self.precision;
        let q = x.len();
        let mut acc = 0.0;
        for j in 0..q {
            let mut row = 0.0;
            for k in 0..q {
                row += p[(j, k)] * x[k];
            }
            acc += x[j] * row;
        }
        acc
    }
}

/// `Σ = ΛΩΛ`, factorised. Fails when the result is not numerically PD.
pub fn compose_sigma(sd: &[f64], omega: &DMatrix<f64>) -> Result<SigmaFactor> {
    let q = sd.len();
    if omega.nrows() != q || omega.ncols() != q {
        return Err(Error::Dimension(format!(
            "{q} standard deviations for a {}x{} correlation matrix",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let sigma = DMatrix::from_fn(q, q, |j, k| sd[j] * sd[k] * omega[(j, k)]);
    SigmaFactor::new(sigma)
}

/// `S = Σ_i (z_i − μ_i)(z_i − μ_i)ᵀ / (κ π_i)` from per-record residuals.
pub fn scatter_from_residuals<'a>(
    residuals: impl IntoIterator<Item = (&'a [f64], f64)>,
    q: usize,
) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(q, q);
    for (r, scale) in residuals {
        let inv = 1.0 / scale;
        for j in 0..q {
            let rj = r[j] * inv;
            for k in 0..=j {
                s[(j, k)] += rj * r[k];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            s[(k, j)] = s[(j, k)];
        }
    }
    s
}

/// Scatter of the latents around their cluster locations, each record scaled
/// by `1/(κπ_i)`.
pub fn scatter_matrix(latent: &LatentState, mixture: &MixtureState, probs: &[f64], kappa: f64) -> DMatrix<f64> {
    let q = latent.q();
    let residuals: Vec<Vec<f64>> = (0..latent.n())
        .map(|i| {
            let mu = mixture.location_of(i);
            latent.row(i).iter().zip(mu).map(|(z, m)| z - m).collect()
        })
        .collect();
    scatter_from_residuals(
        residuals.iter().zip(probs).map(|(r, &p)| (r.as_slice(), kappa * p)),
        q,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceState {
    sd: Vec<f64>,
    free: Vec<bool>,
    omega: DMatrix<f64>,
    factor: SigmaFactor,
    pub d0: f64,
    pub d1: f64,
    pub tuning: Tuning,
}

impl CovarianceState {
    /// Identity correlation; standard deviations from `sd` (fixed coordinates
    /// are forced to exactly 1).
    pub fn new(free: Vec<bool>, sd: Vec<f64>, d0: f64, d1: f64, tuning: Tuning) -> Result<Self> {
        let q = free.len();
        if sd.len() != q {
            return Err(Error::Dimension("free flags and standard deviations differ in length".into()));
        }
        let sd: Vec<f64> = sd
            .into_iter()
            .zip(&free)
            .map(|(s, &f)| if f { s } else { 1.0 })
            .collect();
        Self::with_correlation(free, sd, DMatrix::identity(q, q), d0, d1, tuning)
    }

    pub fn with_correlation(
        free: Vec<bool>,
        sd: Vec<f64>,
        omega: DMatrix<f64>,
        d0: f64,
        d1: f64,
        tuning: Tuning,
    ) -> Result<Self> {
        if sd.iter().zip(&free).any(|(&s, &f)| !(s > 0.0) || (!f && s != 1.0)) {
            return Err(Error::Dimension("standard deviations must be positive and 1 where fixed".into()));
        }
        let factor = compose_sigma(&sd, &omega)?;
        Ok(CovarianceState {
            sd,
            free,
            omega,
            factor,
            d0,
            d1,
            tuning,
        })
    }

    pub fn q(&self) -> usize {
        self.sd.len()
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.sd[j] * self.sd[j]
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn factor(&self) -> &SigmaFactor {
        &self.factor
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.factor.sigma
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.factor.precision
    }

    /// Cheap structural check: unit diagonal, symmetry, fixed variances and
    /// a cache matching `(Λ, Ω)`.
    pub fn check(&self) -> std::result::Result<(), String> {
        let q = self.q();
        for j in 0..q {
            if self.omega[(j, j)] != 1.0 {
                return Err(format!("Ω[{j},{j}] = {}", self.omega[(j, j)]));
            }
            if !self.free[j] && self.sd[j] != 1.0 {
                return Err(format!("fixed standard deviation {j} drifted to {}", self.sd[j]));
            }
            for k in 0..j {
                if (self.omega[(j, k)] - self.omega[(k, j)]).abs() > 1e-12 {
                    return Err(format!("Ω not symmetric at ({j},{k})"));
                }
            }
        }
        if self.omega.clone().cholesky().is_none() {
            return Err("Ω failed to factorise".into());
        }
        let fresh = compose_sigma(&self.sd, &self.omega).map_err(|e| e.to_string())?;
        if fresh.sigma != self.factor.sigma {
            return Err("cached Σ is stale".into());
        }
        Ok(())
    }
}

/// Log of the full conditional of a free variance, up to a constant.
fn ln_variance_target(var: f64, d0: f64, d1: f64, n: f64, trace: f64) -> f64 {
    -(d0 + n / 2.0 + 1.0) * var.ln() - d1 / var - 0.5 * trace
}

fn trace_product(a: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    a.iter().zip(s.iter()).map(|(x, y)| x * y).sum()
}

/// One MH step on `σ²_j` with proposal `Ga(φ, φ/σ²_j)`. `n = 0` with a zero
/// scatter matrix samples the prior. Returns whether the move was accepted.
pub fn update_variance<R: Rng + ?Sized>(
    state: &mut CovarianceState,
    j: usize,
    scatter: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<bool> {
    if !state.free[j] {
        return Err(Error::Dimension(format!("latent coordinate {j} has a fixed variance")));
    }
    let phi = state.tuning.phi_sigma;
    let current = state.variance(j);
    let proposal = density::gamma(rng, phi, phi / current);
    if !(proposal > 0.0 && proposal.is_finite()) {
        return Ok(false);
    }
    let mut sd = state.sd.clone();
    sd[j] = proposal.sqrt();
    let candidate = match compose_sigma(&sd, &state.omega) {
        Ok(f) => f,
        Err(_) => return Ok(false),
    };
    let n = n as f64;
    let mut log_ratio = ln_variance_target(
        proposal,
        state.d0,
        state.d1,
        n,
        trace_product(&candidate.precision, scatter),
    ) - ln_variance_target(
        current,
        state.d0,
        state.d1,
        n,
        trace_product(&state.factor.precision, scatter),
    );
    if !state.tuning.faults.drop_variance_hastings {
        log_ratio += ln_gamma_pdf(current, phi, phi / proposal) - ln_gamma_pdf(proposal, phi, phi / current);
    }
    if accept(log_ratio, rng) {
        state.sd = sd;
        state.factor = candidate;
        Ok(true)
    } else {
        Ok(false)
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn determinant(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant()
}

/// Interval of values for the `(j, k)` entry of `Ω` that keep it positive
/// definite, obtained from the quadratic `h(ρ) = det Ω(ρ)`.
pub fn correlation_support(omega: &DMatrix<f64>, j: usize, k: usize) -> Result<(f64, f64)> {
    if j == k || j >= omega.nrows() || k >= omega.nrows() {
        return Err(Error::Dimension(format!("({j}, {k}) is not an off-diagonal entry")));
    }
    let mut m = omega.clone();
    let mut h = |rho: f64| {
        m[(j, k)] = rho;
        m[(k, j)] = rho;
        determinant(&m)
    };
    let (h1, hm1, h0) = (h(1.0), h(-1.0), h(0.0));
    let current = omega[(j, k)];
    let t1 = (h1 + hm1 - 2.0 * h0) / 2.0;
    let t2 = (h1 - hm1) / 2.0;
    let t3 = h0;

    let scale = h1.abs().max(hm1.abs()).max(h0.abs()).max(f64::MIN_POSITIVE);
    let (lo, hi) = if t1.abs() <= 1e-14 * scale {
        if t2 == 0.0 {
            (-1.0, 1.0)
        } else {
            let root = -t3 / t2;
            if current > root {
                (root, 1.0)
            } else {
                (-1.0, root)
            }
        }
    } else {
        let disc = t2 * t2 - 4.0 * t1 * t3;
        if disc < 0.0 {
            return Err(Error::NotPositiveDefinite("correlation support is empty"));
        }
        // stable quadratic roots
        let sq = disc.sqrt();
        let qv = -0.5 * (t2 + t2.signum() * sq);
        let (r1, r2) = if qv == 0.0 {
            let r = (-t3 / t1).sqrt();
            (-r, r)
        } else {
            (qv / t1, t3 / qv)
        };
        (r1.min(r2), r1.max(r2))
    };
    let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
    if !(lo <= current && current <= hi) {
        return Err(Error::NotPositiveDefinite("current correlation outside its PD support"));
    }
    Ok((lo, hi))
}

/// Log of the conditional density of `Ω` up to a constant. Returns `None`
/// when `Ω` is not positive definite.
fn ln_correlation_target(omega: &DMatrix<f64>, scaled_scatter: &DMatrix<f64>, n: usize) -> Option<f64> {
    let q = omega.nrows() as f64;
    let chol = omega.clone().cholesky()?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = chol.inverse();
    // |Ω_jj| = |Ω| (Ω⁻¹)_jj
    let ln_minors: f64 = (0..omega.nrows()).map(|j| log_det + inv[(j, j)].ln()).sum();
    Some(
        -0.5 * (q + 1.0) * ln_minors - 0.5 * (n as f64 + 2.0 - q * (q - 1.0)) * log_det
            - 0.5 * trace_product(&inv, scaled_scatter),
    )
}

/// One MH step on `ρ_jk` using a uniform window clipped to the PD support.
pub fn update_correlation<R: Rng + ?Sized>(
    state: &mut CovarianceState,
    j: usize,
    k: usize,
    scatter: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<bool> {
    let (lo_s, hi_s) = correlation_support(&state.omega, j, k)?;
    let len = hi_s - lo_s;
    let step = len / state.tuning.phi_rho;
    let current = state.omega[(j, k)];
    let window = |centre: f64| ((centre - step).max(lo_s), (centre + step).min(hi_s));
    let (lo, hi) = window(current);
    if !(hi > lo) {
        return Ok(false);
    }
    let proposal = rng.random_range(lo..hi);
    let (rlo, rhi) = window(proposal);

    let mut candidate = state.omega.clone();
    candidate[(j, k)] = proposal;
    candidate[(k, j)] = proposal;

    let q = state.q();
    let scaled = DMatrix::from_fn(q, q, |a, b| scatter[(a, b)] / (state.sd[a] * state.sd[b]));
    let Some(new_lp) = ln_correlation_target(&candidate, &scaled, n) else {
        return Ok(false);
    };
    let old_lp = ln_correlation_target(&state.omega, &scaled, n)
        .ok_or(Error::NotPositiveDefinite("current correlation matrix"))?;
    let mut log_ratio = new_lp - old_lp;
    if !state.tuning.faults.drop_correlation_hastings {
        log_ratio += (hi - lo).ln() - (rhi - rlo).ln();
    }
    if !accept(log_ratio, rng) {
        return Ok(false);
    }
    let factor = match compose_sigma(&state.sd, &candidate) {
        Ok(f) => f,
        Err(_) => return Ok(false),
    };
    state.omega = candidate;
    state.factor = factor;
    Ok(true)
}

/// Draw `Ω` from its marginally uniform prior: the correlation matrix of an
/// inverse-Wishart(q + 1, I) draw.
pub fn sample_correlation_prior<R: Rng + ?Sized>(q: usize, rng: &mut R) -> DMatrix<f64> {
    if q == 1 {
        return DMatrix::identity(1, 1);
    }
    let df = (q + 1) as f64;
    // Bartlett: W = AAᵀ ~ Wishart(df, I)
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = (2.0 * density::gamma(rng, (df - i as f64) / 2.0, 1.0)).sqrt();
        for j in 0..i {
            a[(i, j)] = density::std_normal(rng);
        }
    }
    let w = &a * a.transpose();
    let sigma = w.cholesky().expect("Wishart draw is PD").inverse();
    let d = DVector::from_fn(q, |i, _| 1.0 / sigma[(i, i)].sqrt());
    let mut omega = DMatrix::from_fn(q, q, |i, j| sigma[(i, j)] * d[i] * d[j]);
    for i in 0..q {
        omega[(i, i)] = 1.0;
    }
    omega
}
