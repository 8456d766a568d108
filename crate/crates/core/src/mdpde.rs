//! DPD objective, estimating equation, the MDPDE solver and the sandwich
//! covariance `Σ = Ψ⁻¹ Ω Ψ⁻¹`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{DpdError, Result};
use crate::integrate::IntegralEngine;
use crate::linalg::{self, spd_inverse, symmetrize};
use crate::model::{all_moments, validate_data, validate_theta, ModelFamily, ParamVector};

/// The matrices `Ψ_n`, `Ω_n` and `Σ = Ψ_n⁻¹ Ω_n Ψ_n⁻¹` at one `(θ, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCov {
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub tau: f64,
}

impl SandwichCov {
    /// Assembles `Σ` after checking that `Ψ` is well conditioned.
    pub fn from_parts(psi: DMatrix<f64>, omega: DMatrix<f64>, tau: f64) -> Result<Self> {
        if psi.nrows() != psi.ncols() || omega.shape() != psi.shape() {
            return Err(DpdError::Dimension {
                what: "sandwich blocks",
                expected: psi.nrows(),
                got: omega.nrows(),
            });
        }
        let psi = symmetrize(&psi);
        let omega = symmetrize(&omega);
        let psi_inv = spd_inverse(&psi, "Psi")?;
        let sigma = symmetrize(&(&psi_inv * &omega * &psi_inv));
        Ok(Self { psi, omega, sigma, tau })
    }

    /// Wraps a known covariance, with `Ψ = I` and `Ω = Σ`.
    pub fn from_sigma(sigma: DMatrix<f64>, tau: f64) -> Result<Self> {
        let p = sigma.nrows();
        Self::from_parts(DMatrix::identity(p, p), sigma, tau)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Ascending eigenvalues of `Σ`.
    pub fn sigma_eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues(&self.sigma)
    }

    /// Square roots of the diagonal of `Σ / n`.
    pub fn standard_errors(&self, n: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| (self.sigma[(j, j)] / n as f64).sqrt()).collect()
    }
}

/// Options for [`fit_mdpde`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Convergence threshold on `‖g‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step for the Jacobian.
    pub fd_step: f64,
    /// Jacobians with a larger condition number trigger the gradient fallback.
    pub max_condition: f64,
    pub engine: IntegralEngine,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            fd_step: 1e-6,
            max_condition: 1e12,
            engine: IntegralEngine::default(),
        }
    }
}

/// Result of a converged MDPDE fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpdeFit {
    pub theta: ParamVector,
    pub tau: f64,
    pub iterations: usize,
    /// `‖g(θ̂)‖∞` at the returned estimate.
    pub grad_norm: f64,
    /// Iterations that used the gradient-descent fallback.
    pub fallback_steps: usize,
}

fn check_tau(tau: f64, strictly_positive: bool) -> Result<()> {
    if !tau.is_finite() || tau < 0.0 || (strictly_positive && tau == 0.0) {
        let bound = if strictly_positive { "> 0" } else { ">= 0" };
        return Err(DpdError::InvalidInput(format!("tau must be {bound}, got {tau}")));
    }
    Ok(())
}

struct DataTerm {
    log_f: f64,
    score: Vec<f64>,
}

fn data_terms<M: ModelFamily + ?Sized>(model: &M, data: &[f64], theta: &[f64]) -> Result<Vec<DataTerm>> {
    let p = model.dim();
    (0..model.n_obs())
        .into_par_iter()
        .map(|i| {
            let y = data[i];
            let log_f = model.log_density(i, y, theta);
            let mut score = vec![0.0; p];
            model.score(i, y, theta, &mut score);
            if !log_f.is_finite() || score.iter().any(|v| !v.is_finite()) {
                return Err(DpdError::Domain {
                    index: i,
                    detail: format!("density or score not finite at y = {y}"),
                });
            }
            Ok(DataTerm { log_f, score })
        })
        .collect()
}

/// `(1/n) Σ_i [ ∫ f_i^{1+τ} − (1 + 1/τ) f_i(y_i)^τ ]`.
pub fn dpd_objective<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &ParamVector,
    tau: f64,
    engine: &IntegralEngine,
) -> Result<f64> {
    check_tau(tau, true)?;
    validate_data(model, data)?;
    validate_theta(model, theta.as_slice())?;
    objective_unchecked(model, data, theta.as_slice(), tau, engine)
}

/// The objective minimized by the solver: the DPD objective for `τ > 0` and
/// the negative mean log-likelihood at `τ = 0`.
fn objective_unchecked<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &[f64],
    tau: f64,
    engine: &IntegralEngine,
) -> Result<f64> {
    let n = model.n_obs() as f64;
    let terms = data_terms(model, data, theta)?;
    if tau == 0.0 {
        return Ok(-terms.iter().map(|t| t.log_f).sum::<f64>() / n);
    }
    let moments = all_moments(model, theta, 1.0 + tau, engine)?;
    let mut total = 0.0;
    for (m, t) in moments.iter().zip(&terms) {
        total += m.mass - (1.0 + 1.0 / tau) * (tau * t.log_f).exp();
    }
    Ok(total / n)
}

/// `g(θ) = (1/n) Σ_i [ f_i(y_i)^τ u_i(y_i) − ξ_i ]`, with `ξ_i = ∫ u_i f_i^{1+τ}`.
pub fn estimating_equation<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &ParamVector,
    tau: f64,
    engine: &IntegralEngine,
) -> Result<DVector<f64>> {
    check_tau(tau, false)?;
    validate_data(model, data)?;
    validate_theta(model, theta.as_slice())?;
    equation_unchecked(model, data, theta.as_slice(), tau, engine)
}

fn equation_unchecked<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &[f64],
    tau: f64,
    engine: &IntegralEngine,
) -> Result<DVector<f64>> {
    let p = model.dim();
    let n = model.n_obs() as f64;
    let terms = data_terms(model, data, theta)?;
    let mut g = DVector::zeros(p);
    for t in &terms {
        let w = (tau * t.log_f).exp();
        for j in 0..p {
            g[j] += w * t.score[j];
        }
    }
    if tau > 0.0 {
        for m in all_moments(model, theta, 1.0 + tau, engine)? {
            g -= &m.first;
        }
    }
    Ok(g / n)
}

/// `ξ_i = ∫ u_i f_i^{1+τ}`.
pub fn xi_vector<M: ModelFamily + ?Sized>(
    model: &M,
    i: usize,
    theta: &ParamVector,
    tau: f64,
    engine: &IntegralEngine,
) -> Result<DVector<f64>> {
    check_tau(tau, false)?;
    validate_theta(model, theta.as_slice())?;
    if i >= model.n_obs() {
        return Err(DpdError::InvalidInput(format!("observation index {i} out of range")));
    }
    if tau == 0.0 {
        return Ok(DVector::zeros(model.dim()));
    }
    Ok(model.moments(i, theta.as_slice(), 1.0 + tau, engine)?.first)
}

/// `Ψ_n = (1/n) Σ J_i` and `Ω_n = (1/n) Σ (∫ u uᵀ f^{1+2τ} − ξ_i ξ_iᵀ)`.
pub fn sandwich_cov<M: ModelFamily + ?Sized>(
    model: &M,
    theta: &ParamVector,
    tau: f64,
    engine: &IntegralEngine,
) -> Result<SandwichCov> {
    check_tau(tau, false)?;
    validate_theta(model, theta.as_slice())?;
    let p = model.dim();
    let n = model.n_obs() as f64;
    let th = theta.as_slice();
    let single = all_moments(model, th, 1.0 + tau, engine)?;
    let mut psi = DMatrix::zeros(p, p);
    for m in &single {
        psi += &m.second;
    }
    psi /= n;
    if tau == 0.0 {
        return SandwichCov::from_parts(psi.clone(), psi, tau);
    }
    let double = all_moments(model, th, 1.0 + 2.0 * tau, engine)?;
    let mut omega = DMatrix::zeros(p, p);
    for (s, d) in single.iter().zip(&double) {
        omega += &d.second - &s.first * s.first.transpose();
    }
    omega /= n;
    SandwichCov::from_parts(psi, omega, tau)
}

/// Jacobian of the estimating equation by central differences.
fn equation_jacobian<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &[f64],
    tau: f64,
    opts: &SolverOptions,
) -> Result<Option<DMatrix<f64>>> {
    let p = model.dim();
    let mut jac = DMatrix::zeros(p, p);
    let mut probe = theta.to_vec();
    for j in 0..p {
        let h = opts.fd_step * theta[j].abs().max(1.0);
        probe[j] = theta[j] + h;
        let up_ok = model.in_domain(&probe);
        let up = if up_ok { Some(equation_unchecked(model, data, &probe, tau, &opts.engine)?) } else { None };
        probe[j] = theta[j] - h;
        let down_ok = model.in_domain(&probe);
        let down = if down_ok { Some(equation_unchecked(model, data, &probe, tau, &opts.engine)?) } else { None };
        probe[j] = theta[j];
        let col = match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            _ => return Ok(None),
        };
        jac.set_column(j, &col);
    }
    Ok(Some(jac))
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Newton direction when the Jacobian is usable: `-Jg` must be a descent
/// direction for the objective, i.e. `-J` positive definite.
fn newton_direction(jac: &DMatrix<f64>, g: &DVector<f64>, max_condition: f64) -> Option<DVector<f64>> {
    let neg_sym = -symmetrize(jac);
    let ev = linalg::sym_eigenvalues(&neg_sym);
    let (lo, hi) = (*ev.first()?, *ev.last()?);
    if !(lo > 0.0) || hi / lo > max_condition {
        return None;
    }
    let step = jac.clone().lu().solve(&(-g))?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Solves `g(θ) = 0` by damped Newton with a line search on `‖g‖²`,
/// falling back to a backtracking gradient step on the objective when the
/// Jacobian is not usable or the line search stalls.
pub fn fit_mdpde<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    tau: f64,
    init: Option<&ParamVector>,
    opts: &SolverOptions,
) -> Result<MdpdeFit> {
    check_tau(tau, false)?;
    validate_data(model, data)?;
    let start = match init {
        Some(t) => t.clone(),
        None => match model.initial_estimate(data) {
            Some(est) => est?,
            None => return Err(DpdError::InvalidInput("no initial value supplied and the model has no default".into())),
        },
    };
    validate_theta(model, start.as_slice())?;

    let mut theta = start;
    let mut g = equation_unchecked(model, data, theta.as_slice(), tau, &opts.engine)?;
    let mut fallback_steps = 0;
    let mut iterations = 0;

    while sup_norm(&g) >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(DpdError::NonConvergence {
                iterations,
                grad_norm: sup_norm(&g),
                last_iterate: theta.iter().copied().collect(),
            });
        }
        iterations += 1;
        let g_sq = g.norm_squared();

        let mut accepted = None;
        if let Some(jac) = equation_jacobian(model, data, theta.as_slice(), tau, opts)? {
            if let Some(step) = newton_direction(&jac, &g, opts.max_condition) {
                let mut lambda = 1.0;
                for _ in 0..40 {
                    let cand = &theta + &step * lambda;
                    if model.in_domain(cand.as_slice()) {
                        if let Ok(gc) = equation_unchecked(model, data, cand.as_slice(), tau, &opts.engine) {
                            if gc.norm_squared() < (1.0 - 1e-4 * lambda) * g_sq {
                                accepted = Some((cand, gc));
                                break;
                            }
                        }
                    }
                    lambda *= 0.5;
                }
            }
        }

        if accepted.is_none() {
            fallback_steps += 1;
            accepted = gradient_step(model, data, theta.as_slice(), &g, tau, opts)?;
        }
        match accepted {
            Some((t, gc)) => {
                theta = t;
                g = gc;
            }
            None => {
                return Err(DpdError::NonConvergence {
                    iterations,
                    grad_norm: sup_norm(&g),
                    last_iterate: theta.iter().copied().collect(),
                })
            }
        }
    }

    // A couple of extra Newton steps tighten the root well below `tol`.
    for _ in 0..2 {
        let Some(jac) = equation_jacobian(model, data, theta.as_slice(), tau, opts)? else { break };
        let Some(step) = jac.lu().solve(&(-&g)) else { break };
        let cand = &theta + step;
        if !model.in_domain(cand.as_slice()) {
            break;
        }
        match equation_unchecked(model, data, cand.as_slice(), tau, &opts.engine) {
            Ok(gc) if gc.norm_squared() < g.norm_squared() => {
                theta = cand;
                g = gc;
            }
            _ => break,
        }
    }

    Ok(MdpdeFit {
        grad_norm: sup_norm(&g),
        theta,
        tau,
        iterations,
        fallback_steps,
    })
}

/// One backtracking step along `g`, which is proportional to the negative
/// objective gradient.
fn gradient_step<M: ModelFamily + ?Sized>(
    model: &M,
    data: &[f64],
    theta: &[f64],
    g: &DVector<f64>,
    tau: f64,
    opts: &SolverOptions,
) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
    let base = objective_unchecked(model, data, theta, tau, &opts.engine)?;
    let slope = (1.0 + tau) * g.norm_squared();
    let current = DVector::from_column_slice(theta);
    let mut lambda = 1.0 / g.norm().max(1e-300) * current.norm().max(1.0);
    for _ in 0..60 {
        let cand = &current + g * lambda;
        if model.in_domain(cand.as_slice()) {
            if let Ok(obj) = objective_unchecked(model, data, cand.as_slice(), tau, &opts.engine) {
                if obj <= base - 1e-4 * lambda * slope {
                    let gc = equation_unchecked(model, data, cand.as_slice(), tau, &opts.engine)?;
                    return Ok(Some((cand, gc)));
                }
            }
        }
        lambda *= 0.5;
    }
    Ok(None)
}
