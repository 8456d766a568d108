//! Fixed-design GLM as a [`ModelFamily`], the γ integrals and the
//! block-assembled sandwich.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::design::FixedDesign;
use super::family::{normal_k, poisson_log_pmf, poisson_power_sums, GlmFamily};
use crate::error::{DpdError, Result};
use crate::integrate::IntegralEngine;
use crate::linalg::spd_inverse;
use crate::mdpde::SandwichCov;
use crate::model::{integrate_window, ModelFamily, Moments, ParamVector, Support};

/// `θ = (β, φ)`; `φ` is absent for Poisson.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmTheta {
    pub beta: Vec<f64>,
    pub phi: Option<f64>,
}

impl GlmTheta {
    pub fn to_param(&self) -> ParamVector {
        let mut v = self.beta.clone();
        v.extend(self.phi);
        DVector::from_vec(v)
    }

    pub fn from_param(family: GlmFamily, theta: &[f64]) -> Self {
        if family.has_dispersion() {
            let k = theta.len() - 1;
            Self {
                beta: theta[..k].to_vec(),
                phi: Some(theta[k]),
            }
        } else {
            Self {
                beta: theta.to_vec(),
                phi: None,
            }
        }
    }
}

/// A GLM family attached to a fixed design.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmModel {
    pub family: GlmFamily,
    pub design: FixedDesign,
    /// Use the normal closed forms and the direct Poisson sums for the
    /// τ-moments instead of the generic integration engine.
    pub closed_form: bool,
}

impl GlmModel {
    pub fn new(family: GlmFamily, design: FixedDesign) -> Self {
        Self {
            family,
            design,
            closed_form: true,
        }
    }

    /// The same model with every integral evaluated numerically.
    pub fn numeric(mut self) -> Self {
        self.closed_form = false;
        self
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn eta(&self, i: usize, theta: &[f64]) -> f64 {
        self.design.x.row(i).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    pub fn phi(&self, theta: &[f64]) -> f64 {
        if self.family.has_dispersion() {
            theta[self.k()]
        } else {
            1.0
        }
    }

    fn use_closed_form(&self) -> bool {
        self.closed_form && self.family == GlmFamily::NormalIdentity
    }

    fn use_poisson_sums(&self) -> bool {
        self.closed_form && self.family == GlmFamily::PoissonLog
    }

    /// `None` once the mean is large enough that the engine's smooth sum takes over.
    fn poisson_sums(&self, i: usize, theta: &[f64], exponent: f64, engine: &IntegralEngine) -> Result<Option<[f64; 3]>> {
        let lambda = self.eta(i, theta).exp();
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DpdError::Domain {
                index: i,
                detail: format!("Poisson mean {lambda} not usable"),
            });
        }
        if lambda.sqrt() >= engine.smooth_sum_min_scale {
            return Ok(None);
        }
        Ok(Some(poisson_power_sums(lambda, exponent)))
    }

    fn fill_score(&self, i: usize, k1: f64, k2: Option<f64>, out: &mut [f64]) {
        let k = self.k();
        for j in 0..k {
            out[j] = k1 * self.design.x[(i, j)];
        }
        if let Some(k2) = k2 {
            out[k] = k2;
        }
    }

    /// Maximum likelihood fit: least squares with `φ = RSS/n` for the normal
    /// family, iteratively reweighted least squares for Poisson.
    pub fn mle(&self, y: &[f64]) -> Result<ParamVector> {
        match self.family {
            GlmFamily::NormalIdentity => normal_mle(&self.design, y),
            GlmFamily::PoissonLog => poisson_irls(&self.design, y),
        }
    }
}

fn normal_mle(design: &FixedDesign, y: &[f64]) -> Result<ParamVector> {
    let x = &design.x;
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let beta = spd_inverse(&xtx, "X'X")? * xty;
    // One refinement step on the normal equations.
    let resid = &yv - x * &beta;
    let beta = &beta + spd_inverse(&xtx, "X'X")? * (x.transpose() * &resid);
    let resid = &yv - x * &beta;
    let phi = resid.norm_squared() / y.len() as f64;
    if !(phi > 0.0) {
        return Err(DpdError::Domain {
            index: 0,
            detail: "residual variance is zero; the normal fit is degenerate".into(),
        });
    }
    let mut out: Vec<f64> = beta.iter().copied().collect();
    out.push(phi);
    Ok(DVector::from_vec(out))
}

fn poisson_irls(design: &FixedDesign, y: &[f64]) -> Result<ParamVector> {
    let x = &design.x;
    let (n, k) = (design.n(), design.k());
    let mut eta: Vec<f64> = y.iter().map(|v| (v + 0.5).ln()).collect();
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut xtwx = DMatrix::zeros(k, k);
        let mut xtwz = DVector::zeros(k);
        for i in 0..n {
            let z = eta[i] + (y[i] - mu[i]) / mu[i];
            let xi = x.row(i).transpose();
            xtwx += &xi * xi.transpose() * mu[i];
            xtwz += &xi * (mu[i] * z);
        }
        let next = spd_inverse(&xtwx, "X'WX")? * xtwz;
        let change = (&next - &beta).amax();
        beta = next;
        eta = (0..n).map(|i| x.row(i).dot(&beta.transpose())).collect();
        if change < 1e-12 * beta.amax().max(1.0) {
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(DpdError::Domain {
            index: 0,
            detail: "Poisson maximum likelihood fit diverged".into(),
        });
    }
    Ok(beta)
}

impl ModelFamily for GlmModel {
    fn n_obs(&self) -> usize {
        self.design.n()
    }

    fn dim(&self) -> usize {
        self.k() + usize::from(self.family.has_dispersion())
    }

    fn support(&self) -> Support {
        match self.family {
            GlmFamily::NormalIdentity => Support::ContinuousReal,
            GlmFamily::PoissonLog => Support::NonNegativeInteger,
        }
    }

    fn log_density(&self, i: usize, y: f64, theta: &[f64]) -> f64 {
        self.family.log_density(y, self.eta(i, theta), self.phi(theta))
    }

    fn score(&self, i: usize, y: f64, theta: &[f64], out: &mut [f64]) {
        let (k1, k2) = self.family.k_values(y, self.eta(i, theta), self.phi(theta));
        self.fill_score(i, k1, k2, out);
    }

    fn location_scale(&self, i: usize, theta: &[f64]) -> (f64, f64) {
        let eta = self.eta(i, theta);
        match self.family {
            GlmFamily::NormalIdentity => (eta, self.phi(theta).sqrt()),
            GlmFamily::PoissonLog => {
                let lambda = eta.exp();
                (lambda, lambda.sqrt().max(1.0))
            }
        }
    }

    fn eval_offset(&self, i: usize, y: f64, offset: f64, theta: &[f64], score: &mut [f64]) -> f64 {
        let eta = self.eta(i, theta);
        let phi = self.phi(theta);
        match self.family {
            GlmFamily::NormalIdentity => {
                let (k1, k2) = normal_k(offset, phi);
                self.fill_score(i, k1, k2, score);
                -0.5 * (2.0 * PI * phi).ln() - offset * offset / (2.0 * phi)
            }
            GlmFamily::PoissonLog => {
                self.fill_score(i, offset, None, score);
                poisson_log_pmf(y, eta.exp(), offset)
            }
        }
    }

    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().all(|v| v.is_finite())
            && (!self.family.has_dispersion() || theta[self.k()] > 0.0)
    }

    fn moments(&self, i: usize, theta: &[f64], exponent: f64, engine: &IntegralEngine) -> Result<Moments> {
        let sums = if self.use_poisson_sums() {
            self.poisson_sums(i, theta, exponent, engine)?
        } else {
            None
        };
        if let Some([s0, s1, s2]) = sums {
            let x = self.design.x.row(i).transpose();
            return Ok(Moments {
                mass: s0,
                first: &x * s1,
                second: &x * x.transpose() * s2,
            });
        }
        if !self.use_closed_form() {
            return crate::model::integrate_moments(self, i, theta, exponent, engine);
        }
        let k = self.k();
        let phi = self.phi(theta);
        let e = exponent;
        let mass = (2.0 * PI * phi).powf(-(e - 1.0) / 2.0) / e.sqrt();
        let x = self.design.x.row(i).transpose();
        let mut first = DVector::zeros(k + 1);
        first[k] = mass * (1.0 / e - 1.0) / (2.0 * phi);
        let mut second = DMatrix::zeros(k + 1, k + 1);
        second
            .view_mut((0, 0), (k, k))
            .copy_from(&(&x * x.transpose() * (mass / (e * phi))));
        second[(k, k)] = mass * (3.0 / (e * e) - 2.0 / e + 1.0) / (4.0 * phi * phi);
        Ok(Moments { mass, first, second })
    }

    fn initial_estimate(&self, data: &[f64]) -> Option<Result<ParamVector>> {
        Some(self.mle(data))
    }
}

/// `γ_j = ∫ K_j f^{1+τ}` and `γ_jh = ∫ K_j K_h f^{1+τ}` at one design row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaIntegrals {
    pub gamma1: f64,
    pub gamma2: Option<f64>,
    pub gamma11: f64,
    pub gamma12: Option<f64>,
    pub gamma22: Option<f64>,
}

/// γ integrals of `family` at design row `x`, evaluated numerically.
pub fn gamma_integrals(
    family: GlmFamily,
    x: &[f64],
    theta: &[f64],
    tau: f64,
    engine: &IntegralEngine,
) -> Result<GammaIntegrals> {
    let k = x.len();
    let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
    let phi = if family.has_dispersion() { theta[k] } else { 1.0 };
    let e = 1.0 + tau;
    let (loc, scale, support) = match family {
        GlmFamily::NormalIdentity => (eta, phi.sqrt(), Support::ContinuousReal),
        GlmFamily::PoissonLog => {
            let lambda = eta.exp();
            (lambda, lambda.sqrt().max(1.0), Support::NonNegativeInteger)
        }
    };
    if !loc.is_finite() || !(scale > 0.0) || !scale.is_finite() {
        return Err(DpdError::Domain {
            index: 0,
            detail: format!("location {loc} / scale {scale} not usable for integration"),
        });
    }
    match family {
        GlmFamily::NormalIdentity => {
            let v = integrate_window(support, loc, scale, engine, 0, 5, |_, r, out| {
                let w = (e * (-0.5 * (2.0 * PI * phi).ln() - r * r / (2.0 * phi))).exp();
                let (k1, k2) = normal_k(r, phi);
                let k2 = k2.unwrap_or(0.0);
                out[0] = k1 * w;
                out[1] = k2 * w;
                out[2] = k1 * k1 * w;
                out[3] = k1 * k2 * w;
                out[4] = k2 * k2 * w;
            })?;
            Ok(GammaIntegrals {
                gamma1: v[0],
                gamma2: Some(v[1]),
                gamma11: v[2],
                gamma12: Some(v[3]),
                gamma22: Some(v[4]),
            })
        }
        GlmFamily::PoissonLog => {
            let lambda = eta.exp();
            let v = integrate_window(support, loc, scale, engine, 0, 2, |y, r, out| {
                let w = (e * poisson_log_pmf(y, lambda, r)).exp();
                out[0] = r * w;
                out[1] = r * r * w;
            })?;
            Ok(GammaIntegrals {
                gamma1: v[0],
                gamma2: None,
                gamma11: v[1],
                gamma12: None,
                gamma22: None,
            })
        }
    }
}

/// Closed-form normal γ integrals (they do not depend on the design row).
pub fn normal_gamma_closed(phi: f64, tau: f64) -> GammaIntegrals {
    let c = (2.0 * PI * phi).powf(-tau / 2.0) / (1.0 + tau).sqrt();
    let e = 1.0 + tau;
    GammaIntegrals {
        gamma1: 0.0,
        gamma2: Some(-c * tau / (2.0 * phi * e)),
        gamma11: c / (phi * e),
        gamma12: Some(0.0),
        gamma22: Some(c * (2.0 + tau * tau) / (4.0 * phi * phi * e * e)),
    }
}

fn row_gammas(model: &GlmModel, i: usize, theta: &[f64], tau: f64, engine: &IntegralEngine) -> Result<GammaIntegrals> {
    let sums = if model.use_poisson_sums() {
        model.poisson_sums(i, theta, 1.0 + tau, engine)?
    } else {
        None
    };
    if model.use_closed_form() {
        Ok(normal_gamma_closed(model.phi(theta), tau))
    } else if let Some([_, s1, s2]) = sums {
        Ok(GammaIntegrals {
            gamma1: s1,
            gamma2: None,
            gamma11: s2,
            gamma12: None,
            gamma22: None,
        })
    } else {
        gamma_integrals(model.family, &model.design.row(i), theta, tau, engine).map_err(|e| match e {
            DpdError::Integration { detail, error_estimate, .. } => DpdError::Integration {
                index: i,
                detail,
                error_estimate,
            },
            DpdError::Domain { detail, .. } => DpdError::Domain { index: i, detail },
            other => other,
        })
    }
}

/// Per-row block `[a·xxᵀ, b·x; b·xᵀ, c]`.
fn block(x: &DVector<f64>, a: f64, b: Option<f64>, c: Option<f64>) -> DMatrix<f64> {
    let k = x.len();
    let p = k + usize::from(c.is_some());
    let mut m = DMatrix::zeros(p, p);
    m.view_mut((0, 0), (k, k)).copy_from(&(x * x.transpose() * a));
    if let (Some(b), Some(c)) = (b, c) {
        for j in 0..k {
            m[(j, k)] = b * x[j];
            m[(k, j)] = b * x[j];
        }
        m[(k, k)] = c;
    }
    m
}

/// Sandwich assembled from γ integrals:
/// `Ψ = (1/n) Σ [γ11 xxᵀ, γ12 x; ·, γ22]` and
/// `Ω = (1/n) Σ [(γ11,2τ − γ1²) xxᵀ, (γ12,2τ − γ1γ2) x; ·, γ22,2τ − γ2²]`.
pub fn glm_sandwich(model: &GlmModel, theta: &ParamVector, tau: f64, engine: &IntegralEngine) -> Result<SandwichCov> {
    crate::model::validate_theta(model, theta.as_slice())?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(DpdError::InvalidInput(format!("tau must be >= 0, got {tau}")));
    }
    let th = theta.as_slice();
    let n = model.n_obs();
    let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = row_gammas(model, i, th, tau, engine)?;
            let g2 = row_gammas(model, i, th, 2.0 * tau, engine)?;
            let x = model.design.x.row(i).transpose();
            let psi = block(&x, g.gamma11, g.gamma12, g.gamma22);
            let cross = match (g2.gamma12, g.gamma2) {
                (Some(c), Some(g2v)) => Some(c - g.gamma1 * g2v),
                _ => None,
            };
            let last = match (g2.gamma22, g.gamma2) {
                (Some(c), Some(g2v)) => Some(c - g2v * g2v),
                _ => None,
            };
            let omega = block(&x, g2.gamma11 - g.gamma1 * g.gamma1, cross, last);
            Ok((psi, omega))
        })
        .collect::<Result<_>>()?;
    let p = model.dim();
    let mut psi = DMatrix::zeros(p, p);
    let mut omega = DMatrix::zeros(p, p);
    for (a, b) in &parts {
        psi += a;
        omega += b;
    }
    SandwichCov::from_parts(psi / n as f64, omega / n as f64, tau)
}

/// `S_i(t) = ((K₁ f^τ − γ₁) x_i, K₂ f^τ − γ₂)` at contamination point `t`.
pub fn s_vector(
    model: &GlmModel,
    i: usize,
    t: f64,
    theta: &ParamVector,
    tau: f64,
    engine: &IntegralEngine,
) -> Result<DVector<f64>> {
    let th = theta.as_slice();
    let eta = model.eta(i, th);
    let phi = model.phi(th);
    let g = row_gammas(model, i, th, tau, engine)?;
    let (k1, k2) = model.family.k_values(t, eta, phi);
    let f_tau = (tau * model.family.log_density(t, eta, phi)).exp();
    let k = model.k();
    let mut s = DVector::zeros(model.dim());
    for j in 0..k {
        s[j] = (k1 * f_tau - g.gamma1) * model.design.x[(i, j)];
    }
    if let (Some(k2), Some(g2)) = (k2, g.gamma2) {
        s[k] = k2 * f_tau - g2;
    }
    Ok(s)
}

/// `(1 + τ²/(1+2τ))`, the efficiency factor of the normal model.
fn normal_efficiency(tau: f64) -> f64 {
    1.0 + tau * tau / (1.0 + 2.0 * tau)
}

/// Asymptotic variance factor of `β̂` in the normal model.
pub fn upsilon_beta(phi: f64, tau: f64) -> f64 {
    phi * normal_efficiency(tau).powf(1.5)
}

/// Asymptotic variance of `φ̂` in the normal model.
pub fn upsilon_phi(phi: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    4.0 * phi * phi / (2.0 + t2).powi(2)
        * (2.0 * (1.0 + 2.0 * t2) * normal_efficiency(tau).powf(2.5) - t2 * (1.0 + tau).powi(2))
}

/// Closed-form Wald statistic for `β = β₀` in the normal model.
pub fn normal_wald_statistic(
    beta_hat: &DVector<f64>,
    phi_hat: f64,
    beta0: &DVector<f64>,
    cx: &DMatrix<f64>,
    n: usize,
    tau: f64,
) -> Result<f64> {
    if !(phi_hat > 0.0) {
        return Err(DpdError::InvalidInput(format!("phi must be positive, got {phi_hat}")));
    }
    if beta_hat.len() != beta0.len() || cx.nrows() != beta0.len() {
        return Err(DpdError::Dimension {
            what: "beta / C_x",
            expected: beta0.len(),
            got: beta_hat.len(),
        });
    }
    let diff = beta_hat - beta0;
    Ok(n as f64 / phi_hat * normal_efficiency(tau).powf(-1.5) * diff.dot(&(cx * &diff)))
}

/// Closed-form non-centrality for the normal model, `δ = (1/φ₀)(1+τ²/(1+2τ))^{-3/2} d_x`.
pub fn normal_delta(phi0: f64, tau: f64, dx: f64) -> f64 {
    normal_efficiency(tau).powf(-1.5) * dx / phi0
}

/// `δ = dᵀLᵀ(L Σ_ββ Lᵀ)⁻¹ L d` for a linear hypothesis on `β`, with `Σ`
/// the finite-n sandwich at `θ₀`.
pub fn glm_contiguous_delta(
    model: &GlmModel,
    theta0: &ParamVector,
    tau: f64,
    l: &DMatrix<f64>,
    d: &DVector<f64>,
    engine: &IntegralEngine,
) -> Result<f64> {
    let k = model.k();
    if l.ncols() != k || d.len() != k {
        return Err(DpdError::Dimension {
            what: "L columns / d length",
            expected: k,
            got: l.ncols().max(d.len()),
        });
    }
    crate::linalg::check_full_row_rank(l, "L")?;
    let cov = glm_sandwich(model, theta0, tau, engine)?;
    let sigma_bb = cov.sigma.view((0, 0), (k, k)).into_owned();
    let middle = spd_inverse(&(l * sigma_bb * l.transpose()), "L Sigma L'")?;
    let ld = l * d;
    Ok(ld.dot(&(middle * &ld)))
}

/// Normal closed form of the second-order influence function of the test
/// of `β = β₀`, contamination in direction `i0` at `t`.
pub fn normal_if2_closed(design: &FixedDesign, beta0: &DVector<f64>, phi0: f64, tau: f64, i0: usize, t: f64) -> Result<f64> {
    let x = design.x.row(i0).transpose();
    let r = t - x.dot(beta0);
    let cx_inv = spd_inverse(&design.cx(), "C_x")?;
    let n = design.n() as f64;
    let lev = x.dot(&(cx_inv * &x)) / (n * n);
    Ok(2.0 / phi0 * (1.0 + 2.0 * tau).powf(1.5) * r * r * (-tau * r * r / phi0).exp() * lev)
}

/// Normal closed form of the power influence function for contamination
/// at `t_i` in every direction; `k_star` is `K*_k(δ)`.
pub fn normal_pif_closed(
    design: &FixedDesign,
    beta0: &DVector<f64>,
    phi0: f64,
    tau: f64,
    d: &DVector<f64>,
    t: &[f64],
    k_star: f64,
) -> f64 {
    let factor = (1.0 + 2.0 * tau).powf(1.5) * (1.0 + tau).powf(-1.5) / phi0;
    let n = design.n() as f64;
    let mut sum = 0.0;
    for i in 0..design.n() {
        let x = design.x.row(i).transpose();
        let r = t[i] - x.dot(beta0);
        sum += r * (-tau * r * r / (2.0 * phi0)).exp() * d.dot(&x) / n;
    }
    k_star * factor * sum
}
