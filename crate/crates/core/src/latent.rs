//! Latent Gaussian layer: continuous transforms, decode rules for ordinal and
//! nominal variables, and truncated-normal resampling of the categorical
//! latents given the current mixture and covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceState;
use crate::density::{norm_cdf, norm_isf, norm_quantile, norm_sf};
use crate::error::{Error, Result};
use crate::sampler::MixtureState;
use crate::schema::{Column, Dataset, Schema, Transform, VariableKind};

/// A continuous transform with its data-dependent shift resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FittedTransform {
    Identity,
    LogShift { quantile: f64, shift: f64 },
}

impl FittedTransform {
    /// Resolve `transform` against the observed column. The log-shift uses
    /// the linearly interpolated empirical quantile.
    pub fn fit(transform: Transform, column: &[f64]) -> Result<Self> {
        match transform {
            Transform::Identity => Ok(FittedTransform::Identity),
            Transform::LogShift { quantile } => {
                let shift = empirical_quantile(column, quantile);
                if let Some(&bad) = column.iter().find(|&&y| !(y + shift > 0.0)) {
                    return Err(Error::NonPositiveLog(bad + shift));
                }
                Ok(FittedTransform::LogShift { quantile, shift })
            }
        }
    }
}

pub fn empirical_quantile(values: &[f64], prob: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn transform_continuous(y: f64, transform: &FittedTransform) -> Result<f64> {
    match *transform {
        FittedTransform::Identity => Ok(y),
        FittedTransform::LogShift { shift, .. } => {
            let arg = y + shift;
            if arg > 0.0 {
                Ok(arg.ln())
            } else {
                Err(Error::NonPositiveLog(arg))
            }
        }
    }
}

/// 0-based level `k` with `γ_k < z ≤ γ_{k+1}`.
pub fn decode_ordinal(z: f64, cutoffs: &[f64]) -> usize {
    // intervals are left-open and right-closed
    let k = cutoffs[1..cutoffs.len() - 1].partition_point(|&g| g < z);
    k.min(cutoffs.len() - 2)
}

/// 0-based category of a nominal latent block: the last category when every
/// coordinate is negative, otherwise the position of the (first) maximum.
pub fn decode_nominal(block: &[f64]) -> usize {
    let mut best = 0;
    for (l, &z) in block.iter().enumerate().skip(1) {
        if z > block[best] {
            best = l;
        }
    }
    if block[best] < 0.0 {
        block.len()
    } else {
        best
    }
}

/// Open interval `(lower, upper)` for a truncated draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRegion {
    pub lower: f64,
    pub upper: f64,
}

impl TruncationRegion {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower < upper {
            Ok(TruncationRegion { lower, upper })
        } else {
            Err(Error::Dimension(format!("empty truncation region ({lower}, {upper})")))
        }
    }

    pub fn everywhere() -> Self {
        TruncationRegion {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

// Beyond this many standard deviations the inverse CDF loses precision and
// the exponential rejection sampler takes over.
const TAIL_THRESHOLD: f64 = 3.0;

/// Draw from `N(mean, var)` restricted to `region`. The result lies strictly
/// inside the region.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    region: TruncationRegion,
    rng: &mut R,
) -> f64 {
    debug_assert!(var > 0.0);
    let sd = var.sqrt();
    let a = (region.lower - mean) / sd;
    let b = (region.upper - mean) / sd;
    let x = if a >= TAIL_THRESHOLD {
        standard_tail(a, b, rng)
    } else if b <= -TAIL_THRESHOLD {
        standard_tail(-b, -a, rng).map(|x| -x)
    } else {
        standard_inverse_cdf(a, b, rng)
    };
    let draw = match x {
        Some(x) => mean + sd * x,
        None => {
            log::warn!(
                "truncated normal N({mean}, {var}) on ({}, {}) has no numerical mass; clamping",
                region.lower,
                region.upper
            );
            if (mean - region.lower).abs() <= (mean - region.upper).abs() {
                region.lower + 1e-10 * (1.0 + region.lower.abs())
            } else {
                region.upper - 1e-10 * (1.0 + region.upper.abs())
            }
        }
    };
    into_open(draw, region)
}

fn into_open(x: f64, region: TruncationRegion) -> f64 {
    if x <= region.lower {
        let up = region.lower.next_up();
        if up < region.upper {
            up
        } else {
            0.5 * (region.lower + region.upper)
        }
    } else if x >= region.upper {
        let down = region.upper.next_down();
        if down > region.lower {
            down
        } else {
            0.5 * (region.lower + region.upper)
        }
    } else {
        x
    }
}

fn standard_inverse_cdf<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Option<f64> {
    if a > 0.0 {
        // right of the mode: work with survival probabilities
        let (sa, sb) = (norm_sf(a), norm_sf(b));
        if !(sa > sb) {
            return None;
        }
        let u = sb + rng.random::<f64>() * (sa - sb);
        Some(norm_isf(u))
    } else {
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        if !(pb > pa) {
            return None;
        }
        let u = pa + rng.random::<f64>() * (pb - pa);
        Some(norm_quantile(u))
    }
}

/// Standard normal on `(a, b)` with `a ≥ TAIL_THRESHOLD`: rejection from a
/// truncated exponential proposal with the optimal one-sided rate.
fn standard_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Option<f64> {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let width = b - a;
    if !(width > 0.0) {
        return None;
    }
    // mass of the exponential proposal on (a, b)
    let mass = -(-rate * width).exp_m1();
    for _ in 0..10_000 {
        let u: f64 = rng.random();
        let x = a - (-u * mass).ln_1p() / rate;
        let accept = -0.5 * (x - rate) * (x - rate);
        if rng.random::<f64>().ln() < accept {
            return Some(x);
        }
    }
    None
}

/// Mean and variance of coordinate `coord` of `N(mu, scale·Σ)` given the
/// other coordinates of `z`, by partitioning `Σ`.
pub fn conditional_moments(
    sigma: &DMatrix<f64>,
    mu: &[f64],
    z: &[f64],
    coord: usize,
    scale: f64,
) -> Result<(f64, f64)> {
    let q = sigma.nrows();
    if q == 1 {
        return Ok((mu[0], scale * sigma[(0, 0)]));
    }
    let rest: Vec<usize> = (0..q).filter(|&k| k != coord).collect();
    let s22 = DMatrix::from_fn(q - 1, q - 1, |a, b| sigma[(rest[a], rest[b])]);
    let s21 = DVector::from_fn(q - 1, |a, _| sigma[(rest[a], coord)]);
    let diff = DVector::from_fn(q - 1, |a, _| z[rest[a]] - mu[rest[a]]);
    let chol = s22
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("conditioning block Σ22"))?;
    let w = chol.solve(&s21);
    let mean = mu[coord] + w.dot(&diff);
    let var = scale * (sigma[(coord, coord)] - w.dot(&s21));
    Ok((mean, var))
}

/// Same conditional through the precision matrix `P = Σ⁻¹`:
/// mean `μ_c − Σ_{k≠c} P_ck (z_k − μ_k)/P_cc`, variance `scale/P_cc`.
pub fn conditional_from_precision(precision: &DMatrix<f64>, mu: &[f64], z: &[f64], coord: usize, scale: f64) -> (f64, f64) {
    let pcc = precision[(coord, coord)];
    let mut shift = 0.0;
    for k in 0..mu.len() {
        if k != coord {
            shift += precision[(coord, k)] * (z[k] - mu[k]);
        }
    }
    (mu[coord] - shift / pcc, scale / pcc)
}

/// The `n × q` latent matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    n: usize,
    q: usize,
    z: Vec<f64>,
    transforms: Vec<Option<FittedTransform>>,
}

impl LatentState {
    /// Continuous coordinates get the transformed observations; categorical
    /// ones start at a deterministic point satisfying their constraints.
    pub fn new(schema: &Schema, dataset: &Dataset) -> Result<Self> {
        let (n, q) = (dataset.n(), schema.q());
        let mut z = vec![0.0; n * q];
        let mut transforms = Vec::with_capacity(schema.p());
        for (v, layout) in schema.variables().iter().enumerate() {
            let start = layout.latent.start;
            match (&layout.spec.kind, dataset.column(v)) {
                (VariableKind::Continuous { transform }, Column::Continuous(ys)) => {
                    let fitted = FittedTransform::fit(*transform, ys)?;
                    for (i, &y) in ys.iter().enumerate() {
                        z[i * q + start] = transform_continuous(y, &fitted)?;
                    }
                    transforms.push(Some(fitted));
                }
                (VariableKind::Ordinal { .. }, Column::Categorical(ys)) => {
                    let cuts = layout.cutoffs.as_deref().expect("ordinal cut-offs");
                    for (i, &y) in ys.iter().enumerate() {
                        z[i * q + start] = initial_ordinal(cuts[y], cuts[y + 1]);
                    }
                    transforms.push(None);
                }
                (VariableKind::Nominal { categories }, Column::Categorical(ys)) => {
                    let width = categories.len() - 1;
                    for (i, &y) in ys.iter().enumerate() {
                        for l in 0..width {
                            z[i * q + start + l] = if l == y { 1.0 } else { -1.0 };
                        }
                    }
                    transforms.push(None);
                }
                _ => {
                    return Err(Error::Dimension(format!(
                        "column {v} does not match the kind of variable {}",
                        layout.spec.name
                    )))
                }
            }
        }
        Ok(LatentState { n, q, z, transforms })
    }

    pub fn from_rows(n: usize, q: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != n * q {
            return Err(Error::Dimension(format!("{} latent values for {n}x{q}", z.len())));
        }
        Ok(LatentState {
            n,
            q,
            z,
            transforms: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.q..(i + 1) * self.q]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.z[i * self.q..(i + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.z
    }

    /// Fitted transforms per canonical variable (`None` for categorical ones).
    pub fn transforms(&self) -> &[Option<FittedTransform>] {
        &self.transforms
    }
}

fn initial_ordinal(lower: f64, upper: f64) -> f64 {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => 0.5 * (lower + upper),
        (true, false) => lower + 1.0,
        (false, true) => upper - 1.0,
        (false, false) => 0.0,
    }
}

/// First record and variable whose latents no longer decode to the
/// observation, if any.
pub fn check_decode(latent: &LatentState, schema: &Schema, dataset: &Dataset) -> std::result::Result<(), String> {
    for (v, layout) in schema.variables().iter().enumerate() {
        let r = layout.latent.clone();
        match &layout.spec.kind {
            VariableKind::Continuous { .. } => {}
            VariableKind::Ordinal { .. } => {
                let cuts = layout.cutoffs.as_deref().expect("ordinal cut-offs");
                for i in 0..latent.n() {
                    let got = decode_ordinal(latent.row(i)[r.start], cuts);
                    if got != dataset.categorical(v, i) {
                        return Err(format!("record {i}, variable {}: decodes to {got}", layout.spec.name));
                    }
                }
            }
            VariableKind::Nominal { .. } => {
                for i in 0..latent.n() {
                    let got = decode_nominal(&latent.row(i)[r.clone()]);
                    if got != dataset.categorical(v, i) {
                        return Err(format!("record {i}, variable {}: decodes to {got}", layout.spec.name));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Redraw every ordinal and nominal latent from its truncated conditional
/// given `μ_i` and `κπ_iΣ`. Coordinates are visited in schema order, each
/// conditioning on the freshest values of the others.
#[allow(clippy::too_many_arguments)]
pub fn resample_latents<R: Rng + ?Sized>(
    latent: &mut LatentState,
    schema: &Schema,
    dataset: &Dataset,
    mixture: &MixtureState,
    cov: &CovarianceState,
    kappa: f64,
    probs: &[f64],
    rng: &mut R,
) -> Result<()> {
    let precision = cov.precision();
    let categorical: Vec<usize> = schema
        .variables()
        .iter()
        .enumerate()
        .filter(|(_, l)| !matches!(l.spec.kind, VariableKind::Continuous { .. }))
        .map(|(v, _)| v)
        .collect();
    if categorical.is_empty() {
        return Ok(());
    }
    for (i, &p) in probs.iter().enumerate().take(latent.n()) {
        let mu = mixture.location_of(i);
        let scale = kappa * p;
        let z = latent.row_mut(i);
        for &v in &categorical {
            let layout = &schema.variables()[v];
            let y = dataset.categorical(v, i);
            match &layout.spec.kind {
                VariableKind::Ordinal { .. } => {
                    let c = layout.latent.start;
                    let cuts = layout.cutoffs.as_deref().expect("ordinal cut-offs");
                    let (m, var) = conditional_from_precision(precision, mu, z, c, scale);
                    z[c] = sample_truncated_normal(m, var, TruncationRegion { lower: cuts[y], upper: cuts[y + 1] }, rng);
                }
                VariableKind::Nominal { categories } => {
                    let start = layout.latent.start;
                    let width = categories.len() - 1;
                    for l in 0..width {
                        let c = start + l;
                        let region = nominal_region(&z[start..start + width], l, y);
                        let (m, var) = conditional_from_precision(precision, mu, z, c, scale);
                        z[c] = sample_truncated_normal(m, var, region, rng);
                    }
                }
                VariableKind::Continuous { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

/// Region for slot `l` of a nominal block whose observed category is `y`.
pub fn nominal_region(block: &[f64], l: usize, y: usize) -> TruncationRegion {
    if y == block.len() {
        TruncationRegion {
            lower: f64::NEG_INFINITY,
            upper: 0.0,
        }
    } else if l != y {
        TruncationRegion {
            lower: f64::NEG_INFINITY,
            upper: block[y],
        }
    } else {
        let others = block
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != l)
            .map(|(_, &z)| z)
            .fold(0.0, f64::max);
        TruncationRegion {
            lower: others,
            upper: f64::INFINITY,
        }
    }
}
