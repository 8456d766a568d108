//! Wald-type tests for simple and composite nulls, power approximations
//! and the sample-size calculator.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::distributions::{chi2_critical, chi2_sf, ncx2_sf, normal_cdf, normal_quantile};
use crate::error::{DpdError, Result};
use crate::linalg::{check_full_row_rank, quad_form, spd_inverse};
use crate::mdpde::SandwichCov;

/// Default significance level.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// `L β = l₀` with `L` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesis {
    pub l: DMatrix<f64>,
    pub l0: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(l: DMatrix<f64>, l0: DVector<f64>) -> Result<Self> {
        if l.nrows() != l0.len() {
            return Err(DpdError::Dimension {
                what: "rows of L vs length of l0",
                expected: l.nrows(),
                got: l0.len(),
            });
        }
        check_full_row_rank(&l, "L")?;
        Ok(Self { l, l0 })
    }

    /// `β_h = value` (zero-based `h`) among `k` coefficients.
    pub fn coordinate(k: usize, h: usize, value: f64) -> Result<Self> {
        if h >= k {
            return Err(DpdError::InvalidInput(format!("coefficient index {} out of range 1..={k}", h + 1)));
        }
        let mut l = DMatrix::zeros(1, k);
        l[(0, h)] = 1.0;
        Self::new(l, DVector::from_element(1, value))
    }

    /// `β = β₀` for all `k` coefficients.
    pub fn all_coefficients(beta0: &DVector<f64>) -> Self {
        let k = beta0.len();
        Self {
            l: DMatrix::identity(k, k),
            l0: beta0.clone(),
        }
    }

    pub fn r(&self) -> usize {
        self.l.nrows()
    }

    pub fn k(&self) -> usize {
        self.l.ncols()
    }

    /// As a restriction on a parameter of length `p ≥ k` whose first `k`
    /// entries are `β`.
    pub fn to_composite(&self, p: usize) -> Result<CompositeHypothesis> {
        let k = self.k();
        if p < k {
            return Err(DpdError::Dimension {
                what: "parameter length for L",
                expected: k,
                got: p,
            });
        }
        let l = self.l.clone();
        let l0 = self.l0.clone();
        let mut h_mat = DMatrix::zeros(p, self.r());
        h_mat.view_mut((0, 0), (k, self.r())).copy_from(&self.l.transpose());
        Ok(CompositeHypothesis::new(
            p,
            self.r(),
            move |theta: &[f64]| &l * DVector::from_column_slice(&theta[..k]) - &l0,
            Some(move |_: &[f64]| h_mat.clone()),
        ))
    }
}

type VecFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Restrictions `h(θ) = 0` with `H(θ) = ∂hᵀ/∂θ` (`p × r`).
#[derive(Clone)]
pub struct CompositeHypothesis {
    p: usize,
    r: usize,
    h: Arc<VecFn>,
    jac: Option<Arc<MatFn>>,
}

impl fmt::Debug for CompositeHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompositeHypothesis")
            .field("p", &self.p)
            .field("r", &self.r)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl CompositeHypothesis {
    pub fn new<H, J>(p: usize, r: usize, h: H, jac: Option<J>) -> Self
    where
        H: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            p,
            r,
            h: Arc::new(h),
            jac: jac.map(|j| Arc::new(j) as Arc<MatFn>),
        }
    }

    /// Restrictions whose Jacobian is obtained by central differences.
    pub fn numeric<H>(p: usize, r: usize, h: H) -> Self
    where
        H: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            p,
            r,
            h: Arc::new(h),
            jac: None,
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn h(&self, theta: &[f64]) -> DVector<f64> {
        (self.h)(theta)
    }

    fn fd_jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p, self.r);
        let mut probe = theta.to_vec();
        for j in 0..self.p {
            let step = 1e-6 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + step;
            let up = (self.h)(&probe);
            probe[j] = theta[j] - step;
            let down = (self.h)(&probe);
            probe[j] = theta[j];
            let row = (up - down) / (2.0 * step);
            out.set_row(j, &row.transpose());
        }
        out
    }

    /// `H(θ)`, analytic when supplied.
    pub fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(theta),
            None => self.fd_jacobian(theta),
        }
    }

    /// Largest gap between the supplied Jacobian and central differences.
    pub fn jacobian_discrepancy(&self, theta: &[f64]) -> Option<f64> {
        let j = self.jac.as_ref()?;
        Some((j(theta) - self.fd_jacobian(theta)).amax())
    }

    fn checked_jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        if theta.len() != self.p {
            return Err(DpdError::Dimension {
                what: "parameter length for h",
                expected: self.p,
                got: theta.len(),
            });
        }
        let h = self.jacobian(theta);
        check_full_row_rank(&h.transpose(), "H (restrictions must be non-redundant)")?;
        Ok(h)
    }
}

/// Outcome of a Wald-type test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub critical_value: f64,
    pub tau: f64,
    pub sigma_used: SandwichCov,
}

fn report(statistic: f64, df: usize, alpha: f64, sigma: &SandwichCov) -> Result<TestReport> {
    let critical_value = chi2_critical(df, alpha)?;
    let statistic = statistic.max(0.0);
    Ok(TestReport {
        statistic,
        df,
        p_value: chi2_sf(df, statistic),
        reject: statistic > critical_value,
        alpha,
        critical_value,
        tau: sigma.tau,
        sigma_used: sigma.clone(),
    })
}

fn check_dims(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DpdError::Dimension { what, expected, got });
    }
    Ok(())
}

/// `W⁰ = n (θ̂ − θ₀)ᵀ Σ(θ₀)⁻¹ (θ̂ − θ₀)` on `p` degrees of freedom.
pub fn wald_simple(
    theta_hat: &DVector<f64>,
    theta0: &DVector<f64>,
    sigma: &SandwichCov,
    n: usize,
    alpha: f64,
) -> Result<TestReport> {
    check_dims("theta0 length", theta_hat.len(), theta0.len())?;
    check_dims("Sigma size", theta_hat.len(), sigma.dim())?;
    let inv = spd_inverse(&sigma.sigma, "Sigma")?;
    let diff = theta_hat - theta0;
    report(n as f64 * quad_form(&diff, &inv), theta_hat.len(), alpha, sigma)
}

/// `W = n h(θ̂)ᵀ (H(θ̂)ᵀ Σ(θ̂) H(θ̂))⁻¹ h(θ̂)` on `r` degrees of freedom.
pub fn wald_composite(
    theta_hat: &DVector<f64>,
    hyp: &CompositeHypothesis,
    sigma: &SandwichCov,
    n: usize,
    alpha: f64,
) -> Result<TestReport> {
    check_dims("Sigma size", hyp.p(), sigma.dim())?;
    let th = theta_hat.as_slice();
    let big_h = hyp.checked_jacobian(th)?;
    let h = hyp.h(th);
    let middle = spd_inverse(&(big_h.transpose() * &sigma.sigma * &big_h), "H' Sigma H")?;
    report(n as f64 * quad_form(&h, &middle), hyp.r(), alpha, sigma)
}

/// The null being tested when computing power.
#[derive(Debug, Clone, Copy)]
pub enum NullSpec<'a> {
    Simple(&'a DVector<f64>),
    Composite(&'a CompositeHypothesis),
}

/// Asymptotic mean `s(θ*)` and standard deviation `σ_W(θ*)` of the scaled
/// statistic under a fixed alternative.
pub fn fixed_alternative_moments(
    theta_star: &DVector<f64>,
    null: NullSpec<'_>,
    sigma0: &DMatrix<f64>,
    sigma_star: &DMatrix<f64>,
) -> Result<(f64, f64, usize)> {
    match null {
        NullSpec::Simple(theta0) => {
            check_dims("theta0 length", theta_star.len(), theta0.len())?;
            let inv0 = spd_inverse(sigma0, "Sigma(theta0)")?;
            let diff = theta_star - theta0;
            let s = quad_form(&diff, &inv0);
            let a = &inv0 * &diff;
            let var = 4.0 * quad_form(&a, sigma_star);
            Ok((s, var.max(0.0).sqrt(), theta_star.len()))
        }
        NullSpec::Composite(hyp) => {
            let th = theta_star.as_slice();
            let big_h = hyp.checked_jacobian(th)?;
            let h = hyp.h(th);
            let middle = spd_inverse(&(big_h.transpose() * sigma_star * &big_h), "H' Sigma H")?;
            let s = quad_form(&h, &middle);
            Ok((s, (4.0 * s).max(0.0).sqrt(), hyp.r()))
        }
    }
}

/// `1 − Φ(√n/σ_W · (χ²_{df,α}/n − s(θ*)))`. For a simple null `sigma0` is
/// `Σ(θ₀)`; the composite version only uses `sigma_star = Σ(θ*)`.
pub fn power_fixed_alternative(
    theta_star: &DVector<f64>,
    null: NullSpec<'_>,
    sigma0: &DMatrix<f64>,
    sigma_star: &DMatrix<f64>,
    n: usize,
    alpha: f64,
) -> Result<f64> {
    let (s, sd, df) = fixed_alternative_moments(theta_star, null, sigma0, sigma_star)?;
    if !(sd > 0.0) {
        return Err(DpdError::DegenerateAlternative(format!(
            "sigma_W(theta*) = {sd}; the alternative coincides with the null"
        )));
    }
    let crit = chi2_critical(df, alpha)?;
    let nf = n as f64;
    Ok(1.0 - normal_cdf(nf.sqrt() / sd * (crit / nf - s)))
}

/// Smallest `n` from `[(A + B + √(A(A + 2B))) / (2 s²)] + 1` with
/// `A = σ_W² Φ⁻¹(1 − π*)²` and `B = 2 s χ²_{df,α}`.
pub fn sample_size_for_power(
    theta_star: &DVector<f64>,
    null: NullSpec<'_>,
    sigma0: &DMatrix<f64>,
    sigma_star: &DMatrix<f64>,
    alpha: f64,
    target_power: f64,
) -> Result<usize> {
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(DpdError::InvalidInput(format!("target power must lie in (0, 1), got {target_power}")));
    }
    let (s, sd, df) = fixed_alternative_moments(theta_star, null, sigma0, sigma_star)?;
    if !(s > 0.0) {
        return Err(DpdError::DegenerateAlternative("s(theta*) = 0; no sample size reaches the target".into()));
    }
    let crit = chi2_critical(df, alpha)?;
    let z = normal_quantile(1.0 - target_power);
    let a = sd * sd * z * z;
    let b = 2.0 * s * crit;
    let n = ((a + b + (a * (a + 2.0 * b)).sqrt()) / (2.0 * s * s)).floor() + 1.0;
    if !n.is_finite() || n > usize::MAX as f64 {
        return Err(DpdError::InvalidInput("required sample size overflows".into()));
    }
    Ok(n as usize)
}

/// `1 − G_{χ²_p(δ)}(χ²_{p,α})` with `δ = dᵀ Σ⁻¹ d`.
pub fn contiguous_power_simple(d: &DVector<f64>, sigma0: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    check_dims("d length", sigma0.nrows(), d.len())?;
    let inv = spd_inverse(sigma0, "Sigma(theta0)")?;
    let delta = quad_form(d, &inv).max(0.0);
    power_from_delta(d.len(), delta, alpha)
}

/// Contiguous power for non-centrality `δ` on `df` degrees of freedom.
pub fn power_from_delta(df: usize, delta: f64, alpha: f64) -> Result<f64> {
    let crit = chi2_critical(df, alpha)?;
    ncx2_sf(df, delta, crit)
}

/// Direction of a composite contiguous alternative: either the full shift
/// `d ∈ R^p` or its image `d* = Hᵀd ∈ R^r`.
#[derive(Debug, Clone, Copy)]
pub enum ContiguousShift<'a> {
    Full(&'a DVector<f64>),
    Restricted(&'a DVector<f64>),
}

/// Non-centrality `dᵀH(HᵀΣH)⁻¹Hᵀd` (or `d*ᵀ(HᵀΣH)⁻¹d*`) and degrees of freedom.
pub fn composite_noncentrality(
    shift: ContiguousShift<'_>,
    hyp: &CompositeHypothesis,
    theta0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
) -> Result<(f64, usize)> {
    let big_h = hyp.checked_jacobian(theta0.as_slice())?;
    let middle = spd_inverse(&(big_h.transpose() * sigma0 * &big_h), "H' Sigma H")?;
    let d_star = match shift {
        ContiguousShift::Full(d) => {
            check_dims("d length", hyp.p(), d.len())?;
            big_h.transpose() * d
        }
        ContiguousShift::Restricted(ds) => {
            check_dims("d* length", hyp.r(), ds.len())?;
            ds.clone()
        }
    };
    Ok((quad_form(&d_star, &middle).max(0.0), hyp.r()))
}

/// `1 − G_{χ²_r(a)}(χ²_{r,α})` for a composite null.
pub fn contiguous_power_composite(
    shift: ContiguousShift<'_>,
    hyp: &CompositeHypothesis,
    theta0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    alpha: f64,
) -> Result<f64> {
    let (delta, df) = composite_noncentrality(shift, hyp, theta0, sigma0)?;
    power_from_delta(df, delta, alpha)
}

/// Composite null evaluated at a null point `θ₀`.
#[derive(Debug, Clone, Copy)]
pub struct CompositeAt<'a> {
    pub hyp: &'a CompositeHypothesis,
    pub theta0: &'a DVector<f64>,
}

/// Power under contiguous alternatives with `ε/√n` contamination: the
/// non-centrality is evaluated at `d̃ = d + ε·IF`.
pub fn contaminated_contiguous_power(
    d: &DVector<f64>,
    epsilon: f64,
    if_value: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    composite: Option<CompositeAt<'_>>,
    alpha: f64,
) -> Result<f64> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(DpdError::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    check_dims("IF length", d.len(), if_value.len())?;
    let d_tilde = d + if_value * epsilon;
    match composite {
        None => contiguous_power_simple(&d_tilde, sigma0, alpha),
        Some(c) => contiguous_power_composite(ContiguousShift::Full(&d_tilde), c.hyp, c.theta0, sigma0, alpha),
    }
}
