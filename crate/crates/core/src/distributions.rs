//! Central and non-central chi-square probabilities, the Poisson-mixture
//! coefficients `C_v` and the power-derivative constant `K*_p`.
//!
//! The non-central upper tail is evaluated as the mixture
//!
//! ```text
//! P(χ²_p(δ) > x) = Σ_v C_v · P(χ²_{p+2v} > x),   C_v = e^{-δ/2} (δ/2)^v / v!
//! ```
//!
//! which is the same expansion that appears in the contaminated power
//! formula. Central tails along the ladder `p, p+2, p+4, ...` come from the
//! recurrence `Q(a+1, x) = Q(a, x) + x^a e^{-x} / Γ(a+1)` seeded by one
//! incomplete-gamma evaluation.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{DpdError, Result};

/// Terms below this size stop the mixture series.
pub const SERIES_TERM_TOL: f64 = 1e-14;
/// Hard cap on mixture terms.
pub const SERIES_MAX_TERMS: usize = 10_000;
/// Above this Poisson mean the lower-tail form of the mixture is summed instead.
const UPPER_FORM_MAX_MEAN: f64 = 500.0;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

fn check_df(df: usize) -> Result<()> {
    if df == 0 {
        return Err(DpdError::InvalidInput(
            "chi-square degrees of freedom must be positive".into(),
        ));
    }
    Ok(())
}

/// `P(χ²_df ≤ x)`.
pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

/// `P(χ²_df > x)`.
pub fn chi2_sf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// Upper `alpha` critical value `χ²_{df,α}`, found by bisection on the
/// distribution function until the bracket is narrower than `1e-12`.
pub fn chi2_critical(df: usize, alpha: f64) -> Result<f64> {
    check_df(df)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DpdError::InvalidInput(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    let target = 1.0 - alpha;
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while chi2_cdf(df, hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(df, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Central upper tails `P(χ²_{df+2v} > x)` for `v = 0, 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct CentralTailLadder {
    half_x: f64,
    shape: f64,
    tail: f64,
}

impl CentralTailLadder {
    pub fn new(df: usize, x: f64) -> Self {
        Self {
            half_x: x.max(0.0) / 2.0,
            shape: df as f64 / 2.0,
            tail: chi2_sf(df, x),
        }
    }

    /// Density increment `x^a e^{-x} / Γ(a+1)` separating consecutive rungs.
    fn increment(&self) -> f64 {
        if self.half_x == 0.0 {
            return 0.0;
        }
        (self.shape * self.half_x.ln() - self.half_x - ln_gamma(self.shape + 1.0)).exp()
    }
}

impl Iterator for CentralTailLadder {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let current = self.tail;
        self.tail = (self.tail + self.increment()).min(1.0);
        self.shape += 1.0;
        Some(current)
    }
}

/// Poisson weight `C_v = e^{-λ} λ^v / v!` computed in log space.
pub fn poisson_weight(mean: f64, v: usize) -> f64 {
    if mean == 0.0 {
        return if v == 0 { 1.0 } else { 0.0 };
    }
    (-mean + v as f64 * mean.ln() - ln_gamma(v as f64 + 1.0)).exp()
}

/// Mixture coefficient `C_v(s, A) = (sᵀAs)^v / (v! 2^v) · e^{-sᵀAs/2}` given
/// the quadratic form `q = sᵀAs`.
pub fn mixture_coefficient(quad_form: f64, v: usize) -> f64 {
    poisson_weight(quad_form / 2.0, v)
}

/// Bound on the remaining Poisson mass once `v` is past the mean.
fn poisson_tail_bound(mean: f64, v: usize, weight: f64) -> Option<f64> {
    let next = v as f64 + 1.0;
    if next <= mean {
        return None;
    }
    let ratio = mean / next;
    Some(weight * ratio / (1.0 - ratio))
}

/// Upper tail `P(χ²_df(δ) > x)` of the non-central chi-square law.
pub fn ncx2_sf(df: usize, noncentrality: f64, x: f64) -> Result<f64> {
    check_df(df)?;
    if noncentrality < 0.0 || !noncentrality.is_finite() {
        return Err(DpdError::InvalidInput(format!(
            "non-centrality must be finite and non-negative, got {noncentrality}"
        )));
    }
    if noncentrality == 0.0 {
        return Ok(chi2_sf(df, x));
    }
    let mean = noncentrality / 2.0;
    if mean <= UPPER_FORM_MAX_MEAN {
        let mut sum = 0.0;
        for (v, tail) in CentralTailLadder::new(df, x)
            .take(SERIES_MAX_TERMS)
            .enumerate()
        {
            let w = poisson_weight(mean, v);
            sum += w * tail;
            if let Some(bound) = poisson_tail_bound(mean, v, w) {
                if w < SERIES_TERM_TOL && bound < SERIES_TERM_TOL {
                    return Ok(sum.clamp(0.0, 1.0));
                }
            }
        }
        Err(DpdError::SeriesCap {
            terms: SERIES_MAX_TERMS,
        })
    } else {
        Ok(1.0 - lower_mixture(df, mean, x)?)
    }
}

/// `P(χ²_df(δ) ≤ x)`.
pub fn ncx2_cdf(df: usize, noncentrality: f64, x: f64) -> Result<f64> {
    check_df(df)?;
    let mean = noncentrality / 2.0;
    if mean > UPPER_FORM_MAX_MEAN {
        lower_mixture(df, mean, x)
    } else {
        Ok(1.0 - ncx2_sf(df, noncentrality, x)?)
    }
}

/// `Σ_v C_v P(χ²_{df+2v} ≤ x)`, used when the Poisson mean is large. The
/// central lower tails decrease in `v` and the weights sum to one, so the
/// remainder after rung `v` is bounded by the current lower tail.
fn lower_mixture(df: usize, mean: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for v in 0..SERIES_MAX_TERMS {
        let lower = gamma_lr(df as f64 / 2.0 + v as f64, x / 2.0);
        sum += poisson_weight(mean, v) * lower;
        if lower < 1e-17 {
            return Ok(sum.clamp(0.0, 1.0));
        }
    }
    Err(DpdError::SeriesCap {
        terms: SERIES_MAX_TERMS,
    })
}

/// Contiguous power `1 - G_{χ²_df(δ)}(χ²_{df,α})`.
pub fn noncentral_power(df: usize, noncentrality: f64, alpha: f64) -> Result<f64> {
    let crit = chi2_critical(df, alpha)?;
    ncx2_sf(df, noncentrality, crit)
}

/// The constant `K*_p(s)` multiplying the power influence function:
///
/// ```text
/// K*_p(s) = e^{-s/2} Σ_v s^{v-1} / (v! 2^v) · (2v - s) · P(χ²_{p+2v} > χ²_{p,α})
/// ```
///
/// At `s = 0` the removable singularity of the `v = 0` term is resolved by its
/// limit, giving `P(χ²_{p+2} > c) - P(χ²_p > c)`.
pub fn k_star(df: usize, s: f64, alpha: f64) -> Result<f64> {
    let crit = chi2_critical(df, alpha)?;
    k_star_at(df, s, crit)
}

/// `K*_p(s)` for a precomputed critical value.
pub fn k_star_at(df: usize, s: f64, crit: f64) -> Result<f64> {
    check_df(df)?;
    if s < 0.0 || !s.is_finite() {
        return Err(DpdError::InvalidInput(format!(
            "K* argument must be finite and non-negative, got {s}"
        )));
    }
    let mut ladder = CentralTailLadder::new(df, crit);
    if s == 0.0 {
        let q0 = ladder.next().unwrap_or(0.0);
        let q1 = ladder.next().unwrap_or(0.0);
        return Ok(q1 - q0);
    }
    let mean = s / 2.0;
    if mean > UPPER_FORM_MAX_MEAN {
        return k_star_differences(df, mean, crit);
    }
    let mut sum = 0.0;
    for (v, tail) in ladder.take(SERIES_MAX_TERMS).enumerate() {
        let w = poisson_weight(mean, v);
        let factor = 2.0 * v as f64 / s - 1.0;
        sum += w * factor * tail;
        let envelope = w * factor.abs().max(1.0);
        let next = v as f64 + 1.0;
        if next > mean {
            let ratio = mean / next;
            if envelope < SERIES_TERM_TOL && envelope / (1.0 - ratio) < 1e-12 {
                return Ok(sum);
            }
        }
    }
    Err(DpdError::SeriesCap {
        terms: SERIES_MAX_TERMS,
    })
}

/// `K*_p(s) = Σ_v C_v (Q_{v+1} - Q_v)`, where every difference is a positive
/// density increment; used for very large arguments.
fn k_star_differences(df: usize, mean: f64, crit: f64) -> Result<f64> {
    let half_x = crit / 2.0;
    let mut sum = 0.0;
    for v in 0..SERIES_MAX_TERMS {
        let shape = df as f64 / 2.0 + v as f64;
        let inc = (shape * half_x.ln() - half_x - ln_gamma(shape + 1.0)).exp();
        sum += poisson_weight(mean, v) * inc;
        if inc < 1e-17 {
            return Ok(sum);
        }
    }
    Err(DpdError::SeriesCap {
        terms: SERIES_MAX_TERMS,
    })
}
