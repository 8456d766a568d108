//! Influence functions of the MDPDE and of the Wald-type statistics, and the
//! power / level influence functions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::k_star;
use crate::error::{DpdError, Result};
use crate::glm::{glm_sandwich, s_vector, GlmModel};
use crate::integrate::IntegralEngine;
use crate::linalg::spd_inverse;
use crate::mdpde::{sandwich_cov, xi_vector, SandwichCov};
use crate::model::{validate_theta, ModelFamily, ParamVector, Support};
use crate::wald::CompositeHypothesis;

/// Where the point mass is placed.
#[derive(Debug, Clone, PartialEq)]
pub enum ContaminationSpec {
    /// Only observation `i0` (zero-based) is contaminated, at `t`.
    Single { i0: usize, t: f64 },
    /// Observation `i` is contaminated at `t[i]`.
    All { t: Vec<f64> },
}

impl ContaminationSpec {
    /// Every direction contaminated at the same point.
    pub fn all_at(n: usize, t: f64) -> Self {
        ContaminationSpec::All { t: vec![t; n] }
    }

    fn check(&self, n: usize, support: Support) -> Result<()> {
        let bad = |t: f64| !support.contains(t);
        match self {
            ContaminationSpec::Single { i0, t } => {
                if *i0 >= n {
                    return Err(DpdError::InvalidInput(format!(
                        "contamination direction {} out of range 1..={n}",
                        i0 + 1
                    )));
                }
                if bad(*t) {
                    return Err(DpdError::Domain {
                        index: *i0,
                        detail: format!("contamination point {t} outside the support"),
                    });
                }
            }
            ContaminationSpec::All { t } => {
                if t.len() != n {
                    return Err(DpdError::Dimension {
                        what: "contamination points",
                        expected: n,
                        got: t.len(),
                    });
                }
                if let Some(i) = t.iter().position(|&v| bad(v)) {
                    return Err(DpdError::Domain {
                        index: i,
                        detail: format!("contamination point {} outside the support", t[i]),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Quantities at the null that every influence function needs.
#[derive(Debug, Clone)]
pub struct InfluenceContext {
    pub theta0: ParamVector,
    pub tau: f64,
    pub cov: SandwichCov,
    psi_inv: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    xi: Vec<DVector<f64>>,
}

impl InfluenceContext {
    pub fn new<M: ModelFamily + ?Sized>(
        model: &M,
        theta0: &ParamVector,
        tau: f64,
        engine: &IntegralEngine,
    ) -> Result<Self> {
        let cov = sandwich_cov(model, theta0, tau, engine)?;
        let xi = (0..model.n_obs())
            .into_par_iter()
            .map(|i| xi_vector(model, i, theta0, tau, engine))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(theta0, tau, cov, xi)
    }

    /// Same quantities assembled from the GLM γ integrals.
    pub fn glm(model: &GlmModel, theta0: &ParamVector, tau: f64, engine: &IntegralEngine) -> Result<Self> {
        let cov = glm_sandwich(model, theta0, tau, engine)?;
        Self::assemble(theta0, tau, cov, Vec::new())
    }

    fn assemble(theta0: &ParamVector, tau: f64, cov: SandwichCov, xi: Vec<DVector<f64>>) -> Result<Self> {
        let psi_inv = spd_inverse(&cov.psi, "Psi")?;
        let sigma_inv = spd_inverse(&cov.sigma, "Sigma")?;
        Ok(Self {
            theta0: theta0.clone(),
            tau,
            cov,
            psi_inv,
            sigma_inv,
            xi,
        })
    }

    /// `D_i(t) = f_i(t)^τ u_i(t) − ξ_i`.
    pub fn d_vector<M: ModelFamily + ?Sized>(&self, model: &M, i: usize, t: f64) -> DVector<f64> {
        let th = self.theta0.as_slice();
        let mut u = vec![0.0; model.dim()];
        let log_f = model.eval_offset(i, t, t - model.location_scale(i, th).0, th, &mut u);
        let w = (self.tau * log_f).exp();
        let mut d = DVector::from_vec(u) * w;
        if let Some(xi) = self.xi.get(i) {
            d -= xi;
        }
        d
    }

    /// `Ψ⁻¹ (1/n) Σ D_i(t_i)` over the contaminated directions.
    pub fn if_mdpde<M: ModelFamily + ?Sized>(&self, model: &M, spec: &ContaminationSpec) -> Result<DVector<f64>> {
        if self.xi.is_empty() && self.tau > 0.0 {
            return Err(DpdError::InvalidInput(
                "context built from GLM integrals; use if_glm for the GLM path".into(),
            ));
        }
        let n = model.n_obs();
        spec.check(n, model.support())?;
        let sum = match spec {
            ContaminationSpec::Single { i0, t } => self.d_vector(model, *i0, *t),
            ContaminationSpec::All { t } => (0..n)
                .map(|i| self.d_vector(model, i, t[i]))
                .fold(DVector::zeros(model.dim()), |a, b| a + b),
        };
        Ok(&self.psi_inv * sum / n as f64)
    }

    /// The same influence function through the GLM `S_i` vectors.
    pub fn if_glm(&self, model: &GlmModel, spec: &ContaminationSpec, engine: &IntegralEngine) -> Result<DVector<f64>> {
        let n = model.n_obs();
        spec.check(n, model.support())?;
        let sum = match spec {
            ContaminationSpec::Single { i0, t } => s_vector(model, *i0, *t, &self.theta0, self.tau, engine)?,
            ContaminationSpec::All { t } => {
                let parts = (0..n)
                    .into_par_iter()
                    .map(|i| s_vector(model, i, t[i], &self.theta0, self.tau, engine))
                    .collect::<Result<Vec<_>>>()?;
                parts.into_iter().fold(DVector::zeros(model.dim()), |a, b| a + b)
            }
        };
        Ok(&self.psi_inv * sum / n as f64)
    }

    /// `2 (T(F) − θ₀)ᵀ Σ⁻¹ IF`, evaluated at the null where `T(F) = θ₀`.
    pub fn first_order_if_simple(&self, if_value: &DVector<f64>) -> f64 {
        let gap = &self.theta0 - &self.theta0;
        2.0 * gap.dot(&(&self.sigma_inv * if_value))
    }

    /// `2 h(θ₀)ᵀ (HᵀΣH)⁻¹ Hᵀ IF`.
    pub fn first_order_if_composite(&self, hyp: &CompositeHypothesis, if_value: &DVector<f64>) -> Result<f64> {
        let (h_mat, middle) = self.projector_parts(hyp)?;
        let h = hyp.h(self.theta0.as_slice());
        Ok(2.0 * h.dot(&(middle * h_mat.transpose() * if_value)))
    }

    /// `2 IFᵀ Σ⁻¹ IF`.
    pub fn if2_simple(&self, if_value: &DVector<f64>) -> f64 {
        2.0 * if_value.dot(&(&self.sigma_inv * if_value))
    }

    /// `2 IFᵀ H (HᵀΣH)⁻¹ Hᵀ IF`.
    pub fn if2_composite(&self, hyp: &CompositeHypothesis, if_value: &DVector<f64>) -> Result<f64> {
        let proj = self.projector(hyp)?;
        Ok(2.0 * if_value.dot(&(proj * if_value)))
    }

    fn projector_parts(&self, hyp: &CompositeHypothesis) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if hyp.p() != self.theta0.len() {
            return Err(DpdError::Dimension {
                what: "hypothesis parameter length",
                expected: self.theta0.len(),
                got: hyp.p(),
            });
        }
        let h_mat = hyp.jacobian(self.theta0.as_slice());
        crate::linalg::check_full_row_rank(&h_mat.transpose(), "H (restrictions must be non-redundant)")?;
        let middle = spd_inverse(&(h_mat.transpose() * &self.cov.sigma * &h_mat), "H' Sigma H")?;
        Ok((h_mat, middle))
    }

    /// `H (HᵀΣH)⁻¹ Hᵀ`.
    pub fn projector(&self, hyp: &CompositeHypothesis) -> Result<DMatrix<f64>> {
        let (h_mat, middle) = self.projector_parts(hyp)?;
        Ok(&h_mat * middle * h_mat.transpose())
    }

    /// Power influence function `K*(δ₀) dᵀ A IF` with `A = Σ⁻¹` (simple null)
    /// or `H(HᵀΣH)⁻¹Hᵀ` (composite).
    pub fn pif(
        &self,
        d: &DVector<f64>,
        if_value: &DVector<f64>,
        hyp: Option<&CompositeHypothesis>,
        alpha: f64,
    ) -> Result<f64> {
        if d.len() != self.theta0.len() || if_value.len() != d.len() {
            return Err(DpdError::Dimension {
                what: "d / IF length",
                expected: self.theta0.len(),
                got: d.len().min(if_value.len()),
            });
        }
        let (a, df) = match hyp {
            None => (self.sigma_inv.clone(), d.len()),
            Some(h) => (self.projector(h)?, h.r()),
        };
        let delta0 = d.dot(&(&a * d)).max(0.0);
        let slope = d.dot(&(&a * if_value));
        if slope == 0.0 {
            return Ok(0.0);
        }
        Ok(k_star(df, delta0, alpha)? * slope)
    }
}

/// `IF(t; T_τ)` at the null.
pub fn if_mdpde<M: ModelFamily + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    tau: f64,
    spec: &ContaminationSpec,
    engine: &IntegralEngine,
) -> Result<DVector<f64>> {
    InfluenceContext::new(model, theta0, tau, engine)?.if_mdpde(model, spec)
}

/// Second-order influence function of the simple-null statistic.
pub fn if2_wald_simple<M: ModelFamily + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    tau: f64,
    spec: &ContaminationSpec,
    engine: &IntegralEngine,
) -> Result<f64> {
    let ctx = InfluenceContext::new(model, theta0, tau, engine)?;
    Ok(ctx.if2_simple(&ctx.if_mdpde(model, spec)?))
}

/// Second-order influence function of the composite-null statistic.
pub fn if2_wald_composite<M: ModelFamily + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    tau: f64,
    hyp: &CompositeHypothesis,
    spec: &ContaminationSpec,
    engine: &IntegralEngine,
) -> Result<f64> {
    let ctx = InfluenceContext::new(model, theta0, tau, engine)?;
    ctx.if2_composite(hyp, &ctx.if_mdpde(model, spec)?)
}

/// Power influence function for the contiguous shift `d`.
pub fn pif<M: ModelFamily + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    tau: f64,
    d: &DVector<f64>,
    spec: &ContaminationSpec,
    alpha: f64,
    hyp: Option<&CompositeHypothesis>,
    engine: &IntegralEngine,
) -> Result<f64> {
    let ctx = InfluenceContext::new(model, theta0, tau, engine)?;
    ctx.pif(d, &ctx.if_mdpde(model, spec)?, hyp, alpha)
}

/// Level influence function; zero for every contamination.
pub fn lif<M: ModelFamily + ?Sized>(
    model: &M,
    theta0: &ParamVector,
    _tau: f64,
    _spec: &ContaminationSpec,
    _alpha: f64,
    _hyp: Option<&CompositeHypothesis>,
) -> Result<f64> {
    validate_theta(model, theta0.as_slice())?;
    Ok(0.0)
}

/// Profile of a scalar influence quantity over contamination points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IfProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub tau: f64,
}

impl IfProfile {
    /// Evaluates `f` on `grid` in parallel, keeping grid order.
    pub fn evaluate<F>(grid: Vec<f64>, tau: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        let values = grid.par_iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, values, tau })
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Number of points in a default continuous grid.
pub const PROFILE_POINTS: usize = 401;

/// Default contamination grid around `center` with spread `sd`: 401 points
/// over `center ± max(20, 10 sd)` for continuous support, the integers
/// `0..=max(200, ⌈center + 10 sd⌉)` for counts.
pub fn default_grid(support: Support, center: f64, sd: f64) -> Vec<f64> {
    match support {
        Support::ContinuousReal => {
            let half = (10.0 * sd).max(20.0);
            let step = 2.0 * half / (PROFILE_POINTS - 1) as f64;
            (0..PROFILE_POINTS).map(|j| center - half + j as f64 * step).collect()
        }
        Support::NonNegativeInteger => {
            let top = (center + 10.0 * sd).ceil().max(200.0) as usize;
            (0..=top).map(|v| v as f64).collect()
        }
    }
}
