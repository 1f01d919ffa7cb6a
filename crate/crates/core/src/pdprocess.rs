//! Poisson–Dirichlet process pieces: the generalised Pólya urn, the
//! exchangeable partition probability function and the updates of the
//! process parameters `(a, b)` and of the base-measure variances.
//!
//! An empty list of cluster sizes means "no partition likelihood"; the
//! updates then sample their priors, which is what the prior-recovery checks
//! rely on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Priors;
use crate::density::{self, ln_beta_pdf, ln_gamma, ln_gamma_pdf};
use crate::error::{Error, Result};

/// Discount `a`, strength `b` and the constants of their priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdHyper {
    pub a: f64,
    pub b: f64,
    /// Point-mass weight at `a = 0`.
    pub alpha: f64,
    pub d0_a: f64,
    pub d1_a: f64,
    pub d0_b: f64,
    pub d1_b: f64,
    /// Half-width of the random-walk proposal on `b`.
    pub phi_b: f64,
}

impl PdHyper {
    pub fn new(a: f64, b: f64, priors: &Priors, phi_b: f64) -> Result<Self> {
        let h = PdHyper {
            a,
            b,
            alpha: priors.alpha,
            d0_a: priors.d0_a,
            d1_a: priors.d1_a,
            d0_b: priors.d0_b,
            d1_b: priors.d1_b,
            phi_b,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.a) {
            return Err(Error::Hyper(format!("a = {} outside [0, 1)", self.a)));
        }
        if !(self.b > -self.a) {
            return Err(Error::Hyper(format!("b = {} must exceed -a = {}", self.b, -self.a)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Hyper(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if [self.d0_a, self.d1_a, self.d0_b, self.d1_b, self.phi_b]
            .iter()
            .any(|&d| !(d > 0.0))
        {
            return Err(Error::Hyper("prior constants and phi_b must be positive".into()));
        }
        Ok(())
    }

    /// Ancestral draw of `(a, b)` from their priors.
    pub fn sample_prior<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.a = if rng.random::<f64>() < self.alpha {
            0.0
        } else {
            density::beta(rng, self.d0_a, self.d1_a)
        };
        self.b = density::gamma(rng, self.d0_b, self.d1_b) - self.a;
    }
}

/// Prior probabilities of record `i` opening a new cluster (entry 0) or
/// joining each existing cluster, given the sizes of the others.
pub fn urn_prior_weights(a: f64, b: f64, sizes: &[usize], n: usize) -> Result<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    if n == 0 || total != n - 1 || sizes.contains(&0) {
        return Err(Error::Dimension(format!(
            "cluster sizes sum to {total}, expected {} with no empty clusters",
            n.saturating_sub(1)
        )));
    }
    let r = sizes.len() as f64;
    let denom = b + n as f64 - 1.0;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut w = Vec::with_capacity(sizes.len() + 1);
    w.push((b + a * r) / denom);
    w.extend(sizes.iter().map(|&s| (s as f64 - a) / denom));
    Ok(w)
}

/// Log EPPF of a partition with the given cluster sizes:
/// `Γ(b+1)/Γ(b+n) · ∏_{j<r}(b + ja) · ∏_j Γ(n_j − a)/Γ(1 − a)`.
/// An empty partition has probability one.
pub fn eppf_log(a: f64, b: f64, sizes: &[usize]) -> Result<f64> {
    if sizes.is_empty() {
        return Ok(0.0);
    }
    if !(0.0..1.0).contains(&a) || !(b > -a) {
        return Err(Error::Hyper(format!("invalid (a, b) = ({a}, {b})")));
    }
    if sizes.contains(&0) {
        return Err(Error::Dimension("empty cluster in partition".into()));
    }
    let n: usize = sizes.iter().sum();
    let r = sizes.len();
    let mut lp = ln_gamma(b + 1.0) - ln_gamma(b + n as f64);
    lp += (1..r).map(|j| (b + j as f64 * a).ln()).sum::<f64>();
    let lg1 = ln_gamma(1.0 - a);
    lp += sizes.iter().map(|&s| ln_gamma(s as f64 - a) - lg1).sum::<f64>();
    if lp.is_nan() {
        return Err(Error::Hyper(format!("EPPF undefined at (a, b) = ({a}, {b})")));
    }
    Ok(lp)
}

fn ln_a_prior(h: &PdHyper, a: f64) -> f64 {
    // densities with respect to (point mass at 0) + Lebesgue
    if a == 0.0 {
        h.alpha.ln()
    } else {
        (1.0 - h.alpha).ln() + ln_beta_pdf(a, h.d0_a, h.d1_a)
    }
}

/// Log MH ratio of moving `a` to `proposal`; exactly 0 when they coincide.
pub fn a_log_acceptance(h: &PdHyper, proposal: f64, sizes: &[usize]) -> Result<f64> {
    if proposal == h.a {
        return Ok(0.0);
    }
    Ok(ln_a_target(h, proposal, sizes)? - ln_a_target(h, h.a, sizes)?)
}

fn ln_a_target(h: &PdHyper, a: f64, sizes: &[usize]) -> Result<f64> {
    Ok(eppf_log(a, h.b, sizes)? + ln_a_prior(h, a) + ln_gamma_pdf(h.b + a, h.d0_b, h.d1_b))
}

/// Independence MH step on `a` with proposal `½δ₀ + ½Be(1, 1)`. The target
/// includes `Ga(b + a)`, since the prior on `b` given `a` depends on `a`.
pub fn update_a<R: Rng + ?Sized>(hyper: &mut PdHyper, sizes: &[usize], rng: &mut R) -> Result<bool> {
    let proposal = if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random::<f64>() };
    if !(hyper.b > -proposal) || proposal >= 1.0 {
        return Ok(false);
    }
    // the proposal density is ½ on both components, so it cancels
    let log_ratio = a_log_acceptance(hyper, proposal, sizes)?;
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        hyper.a = proposal;
        Ok(true)
    } else {
        Ok(false)
    }
}

fn ln_b_target(h: &PdHyper, b: f64, sizes: &[usize]) -> Result<f64> {
    Ok(eppf_log(h.a, b, sizes)? + ln_gamma_pdf(b + h.a, h.d0_b, h.d1_b))
}

/// Random-walk MH step on `b` with proposal `Un(b − φ_b, b + φ_b)`;
/// proposals at or below `−a` are rejected.
pub fn update_b<R: Rng + ?Sized>(hyper: &mut PdHyper, sizes: &[usize], rng: &mut R) -> Result<bool> {
    let proposal = hyper.b + hyper.phi_b * (2.0 * rng.random::<f64>() - 1.0);
    if !(proposal > -hyper.a) {
        return Ok(false);
    }
    let log_ratio = ln_b_target(hyper, proposal, sizes)? - ln_b_target(hyper, hyper.b, sizes)?;
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        hyper.b = proposal;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Diagonal covariance `Σ_μ` of the Gaussian base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    pub variances: Vec<f64>,
    pub d0: f64,
    pub d1: f64,
}

impl BaseMeasure {
    pub fn new(variances: Vec<f64>, d0: f64, d1: f64) -> Result<Self> {
        if variances.iter().any(|&v| !(v > 0.0)) || !(d0 > 0.0 && d1 > 0.0) {
            return Err(Error::Hyper("base-measure variances and constants must be positive".into()));
        }
        Ok(BaseMeasure { variances, d0, d1 })
    }

    pub fn q(&self) -> usize {
        self.variances.len()
    }

    pub fn sample_prior<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for v in &mut self.variances {
            *v = density::inv_gamma(rng, self.d0, self.d1);
        }
    }
}

/// Conjugate draw `σ²_μl ~ IGa(d0 + r/2, d1 + ½ Σ_j μ*_jl²)` for every
/// coordinate. With no locations this samples the prior.
pub fn update_sigma_mu<R: Rng + ?Sized>(base: &mut BaseMeasure, unique_mus: &[Vec<f64>], rng: &mut R) {
    let (shape, scales) = sigma_mu_conditional(base, unique_mus);
    for (v, scale) in base.variances.iter_mut().zip(scales) {
        *v = density::inv_gamma(rng, shape, scale);
    }
}

/// Shape and per-coordinate scales of the `σ²_μ` full conditional.
pub fn sigma_mu_conditional(base: &BaseMeasure, unique_mus: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let shape = base.d0 + unique_mus.len() as f64 / 2.0;
    let scales = (0..base.q())
        .map(|l| base.d1 + 0.5 * unique_mus.iter().map(|m| m[l] * m[l]).sum::<f64>())
        .collect();
    (shape, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PriorPreset;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn urn_examples() {
        assert_eq!(urn_prior_weights(0.0, 1.0, &[1], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(urn_prior_weights(0.5, 1.0, &[2], 3).unwrap(), vec![0.5, 0.5]);
        assert_eq!(urn_prior_weights(0.3, 2.0, &[], 1).unwrap(), vec![1.0]);
        assert!(urn_prior_weights(0.0, 1.0, &[1, 1], 4).is_err());
        assert!(urn_prior_weights(0.0, 1.0, &[0, 3], 4).is_err());
    }

    /// Ewens sampling formula written directly from its definition.
    fn ewens_log(b: f64, sizes: &[usize]) -> f64 {
        let n: usize = sizes.iter().sum();
        let mut rising = 0.0; // ln b(b+1)…(b+n−1)
        for k in 0..n {
            rising += (b + k as f64).ln();
        }
        let mut lp = sizes.len() as f64 * b.ln() - rising;
        for &s in sizes {
            for k in 1..s {
                lp += (k as f64).ln();
            }
        }
        lp
    }

    #[test]
    fn eppf_examples() {
        let (b, n) = (1.7, 6usize);
        let one = eppf_log(0.0, b, &[n]).unwrap();
        let expected = ln_gamma(b + 1.0) + ln_gamma(n as f64) - ln_gamma(b + n as f64);
        assert!((one - expected).abs() < 1e-12);
        assert!((eppf_log(0.0, 1.0, &[2, 3]).unwrap() - ewens_log(1.0, &[2, 3])).abs() < 1e-12);
        assert_eq!(eppf_log(0.3, 1.0, &[]).unwrap(), 0.0);
        assert!(eppf_log(1.0, 1.0, &[2]).is_err());
        assert!(eppf_log(0.2, -0.3, &[2]).is_err());
    }

    #[test]
    fn eppf_single_cluster_decreases_in_b() {
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let v = eppf_log(0.2, -0.1 + 0.2 * k as f64, &[7]).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn a_proposal_equal_to_current_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let priors = PriorPreset::C.priors();
        let mut h = PdHyper::new(0.0, 1.0, &priors, 2.0).unwrap();
        assert_eq!(a_log_acceptance(&h, 0.0, &[3, 2, 1]).unwrap(), 0.0);
        h.a = 0.37;
        assert_eq!(a_log_acceptance(&h, 0.37, &[3, 2, 1]).unwrap(), 0.0);
        let mut moves = 0;
        for _ in 0..1000 {
            let before = h.a;
            update_a(&mut h, &[3, 2, 1], &mut rng).unwrap();
            moves += (before != h.a) as usize;
            assert!((0.0..1.0).contains(&h.a) && h.b > -h.a);
        }
        assert!(moves > 0);
    }

    #[test]
    fn single_cluster_b_target() {
        let priors = PriorPreset::C.priors();
        let h = PdHyper::new(0.4, 2.0, &priors, 2.0).unwrap();
        let got = ln_b_target(&h, 3.0, &[5]).unwrap() - ln_b_target(&h, 2.0, &[5]).unwrap();
        let direct = |b: f64| ln_gamma(b + 1.0) - ln_gamma(b + 5.0) + ln_gamma_pdf(b + 0.4, 1.0, 1.0);
        assert!((got - (direct(3.0) - direct(2.0))).abs() < 1e-12);
    }

    #[test]
    fn sigma_mu_conditional_examples() {
        let base = BaseMeasure::new(vec![1.0], 2.1, 30.0).unwrap();
        let (shape, scales) = sigma_mu_conditional(&base, &[vec![0.0], vec![0.0]]);
        assert_eq!((shape, scales[0]), (3.1, 30.0));
        let base = BaseMeasure::new(vec![1.0], 1.0, 1.0).unwrap();
        let (shape, scales) = sigma_mu_conditional(&base, &[vec![2.0]]);
        assert_eq!((shape, scales[0]), (1.5, 3.0));
    }

    #[test]
    fn hyperparameters_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let priors = PriorPreset::C.priors();
        let mut h = PdHyper::new(0.0, 1.0, &priors, 2.0).unwrap();
        let sizes = [10, 4, 1, 1, 1];
        for _ in 0..100_000 {
            update_a(&mut h, &sizes, &mut rng).unwrap();
            update_b(&mut h, &sizes, &mut rng).unwrap();
            assert!((0.0..1.0).contains(&h.a));
            assert!(h.b > -h.a);
        }
    }

    fn partitions(n: usize) -> Vec<Vec<usize>> {
        // integer partitions of n, as multisets of sizes
        fn rec(n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if n == 0 {
                out.push(cur.clone());
                return;
            }
            for s in (1..=n.min(max)).rev() {
                cur.push(s);
                rec(n - s, s, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, n, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn eppf_matches_ewens_for_small_partitions() {
        for n in 1..=12 {
            for sizes in partitions(n) {
                for b in [0.1, 1.0, 3.7] {
                    let got = eppf_log(0.0, b, &sizes).unwrap();
                    assert!((got - ewens_log(b, &sizes)).abs() < 1e-10);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn urn_weights_are_a_distribution(
            a in 0.0f64..0.99,
            bshift in 0.001f64..20.0,
            sizes in proptest::collection::vec(1usize..20, 0..10),
        ) {
            let b = bshift - a;
            let n = sizes.iter().sum::<usize>() + 1;
            let w = urn_prior_weights(a, b, &sizes, n).unwrap();
            prop_assert_eq!(w.len(), sizes.len() + 1);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn eppf_is_exchangeable(
            a in 0.0f64..0.99,
            bshift in 0.01f64..10.0,
            mut sizes in proptest::collection::vec(1usize..15, 1..8),
            seed in any::<u64>(),
        ) {
            let b = bshift - a;
            let before = eppf_log(a, b, &sizes).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            sizes.shuffle(&mut rng);
            prop_assert!((eppf_log(a, b, &sizes).unwrap() - before).abs() < 1e-9);
        }
    }
}
