//! Non-homogeneous model families and the per-observation integrals
//! `∫ f^e`, `∫ u f^e` and `∫ u uᵀ f^e`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{DpdError, Result};
use crate::integrate::{IntegralEngine, IntegrationFailure};

/// Parameter vector θ.
pub type ParamVector = DVector<f64>;

/// Sample space shared by every observation of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    ContinuousReal,
    NonNegativeInteger,
}

impl Support {
    pub fn contains(self, y: f64) -> bool {
        match self {
            Support::ContinuousReal => y.is_finite(),
            Support::NonNegativeInteger => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        }
    }
}

/// Moments of the powered density `f^e` for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `∫ f^e`
    pub mass: f64,
    /// `∫ u f^e`
    pub first: DVector<f64>,
    /// `∫ u uᵀ f^e`
    pub second: DMatrix<f64>,
}

/// A family of `n` densities `f_i(·; θ)` sharing one parameter.
pub trait ModelFamily: Sync {
    fn n_obs(&self) -> usize;
    fn dim(&self) -> usize;
    fn support(&self) -> Support;

    fn log_density(&self, i: usize, y: f64, theta: &[f64]) -> f64;

    /// Writes `u_i(y; θ) = ∂ log f_i / ∂θ` into `out`.
    fn score(&self, i: usize, y: f64, theta: &[f64], out: &mut [f64]);

    /// Centre and spread of `f_i`, used to place integration windows.
    fn location_scale(&self, i: usize, theta: &[f64]) -> (f64, f64);

    /// Log-density and score at `y = location + offset`. Families may use the
    /// offset directly where `y - location` would cancel badly.
    fn eval_offset(&self, i: usize, y: f64, _offset: f64, theta: &[f64], score: &mut [f64]) -> f64 {
        self.score(i, y, theta, score);
        self.log_density(i, y, theta)
    }

    fn in_domain(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite())
    }

    /// Moments of `f_i^exponent`. The default integrates numerically.
    fn moments(&self, i: usize, theta: &[f64], exponent: f64, engine: &IntegralEngine) -> Result<Moments> {
        integrate_moments(self, i, theta, exponent, engine)
    }

    /// Starting value for the solver, normally the maximum likelihood fit.
    fn initial_estimate(&self, _data: &[f64]) -> Option<Result<ParamVector>> {
        None
    }
}

fn packed_len(p: usize) -> usize {
    1 + p + p * (p + 1) / 2
}

fn unpack(p: usize, v: &[f64]) -> Moments {
    let mass = v[0];
    let first = DVector::from_column_slice(&v[1..=p]);
    let mut second = DMatrix::zeros(p, p);
    let mut idx = 1 + p;
    for a in 0..p {
        for b in a..p {
            second[(a, b)] = v[idx];
            second[(b, a)] = v[idx];
            idx += 1;
        }
    }
    Moments { mass, first, second }
}

/// Definition-level moments of `f_i^exponent` by quadrature or summation.
pub fn integrate_moments<M: ModelFamily + ?Sized>(
    model: &M,
    i: usize,
    theta: &[f64],
    exponent: f64,
    engine: &IntegralEngine,
) -> Result<Moments> {
    let p = model.dim();
    let dim = packed_len(p);
    let (loc, scale) = model.location_scale(i, theta);
    if !loc.is_finite() || !(scale > 0.0) || !scale.is_finite() {
        return Err(DpdError::Domain {
            index: i,
            detail: format!("location {loc} / scale {scale} not usable for integration"),
        });
    }
    let mut u = vec![0.0; p];
    let mut fill = |y: f64, offset: f64, out: &mut [f64]| {
        let lf = model.eval_offset(i, y, offset, theta, &mut u);
        let w = (exponent * lf).exp();
        if w == 0.0 {
            return;
        }
        out[0] = w;
        for a in 0..p {
            out[1 + a] = w * u[a];
        }
        let mut idx = 1 + p;
        for a in 0..p {
            for b in a..p {
                out[idx] = w * u[a] * u[b];
                idx += 1;
            }
        }
    };
    let values = integrate_window(model.support(), loc, scale, engine, i, dim, |y, off, out| fill(y, off, out))?;
    Ok(unpack(p, &values))
}

/// Integrates (or sums) a vector-valued function of `(y, y - loc)` over the
/// support, using a window of `engine.window_scales` scales around `loc`.
pub fn integrate_window<F>(
    support: Support,
    loc: f64,
    scale: f64,
    engine: &IntegralEngine,
    index: usize,
    dim: usize,
    mut f: F,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64, &mut [f64]),
{
    let half = engine.window_scales * scale;
    let result = match support {
        Support::ContinuousReal => engine.quadrature(-half, half, dim, |off, out| f(loc + off, off, out)),
        Support::NonNegativeInteger if scale >= engine.smooth_sum_min_scale => {
            let lo = (-half).max(-loc);
            engine.quadrature(lo, half, dim, |off, out| f(loc + off, off, out))
        }
        Support::NonNegativeInteger => {
            let anchor = loc.floor().max(0.0);
            let reach = (20.0 * scale).max(20.0);
            engine.series(anchor as i64, 0, reach, dim, |k, out| {
                let y = k as f64;
                f(y, y - loc, out)
            })
        }
    };
    match result {
        Ok(integral) => Ok(integral.value),
        Err(IntegrationFailure::NonFinite { at }) => Err(DpdError::Integration {
            index,
            detail: format!("non-finite integrand at {at}"),
            error_estimate: f64::INFINITY,
        }),
        Err(IntegrationFailure::Budget { error, evaluations }) => Err(DpdError::Integration {
            index,
            detail: format!("tolerance not reached after {evaluations} evaluations"),
            error_estimate: error,
        }),
    }
}

/// Moments of every observation, evaluated in parallel and returned in index order.
pub fn all_moments<M: ModelFamily + ?Sized>(
    model: &M,
    theta: &[f64],
    exponent: f64,
    engine: &IntegralEngine,
) -> Result<Vec<Moments>> {
    (0..model.n_obs())
        .into_par_iter()
        .map(|i| model.moments(i, theta, exponent, engine))
        .collect()
}

/// Largest absolute gap between the analytic score and a central-difference
/// gradient of the log-density at `(i, y, θ)`.
pub fn score_check<M: ModelFamily + ?Sized>(model: &M, i: usize, y: f64, theta: &[f64]) -> f64 {
    let p = model.dim();
    let mut analytic = vec![0.0; p];
    model.score(i, y, theta, &mut analytic);
    let mut worst = 0.0_f64;
    let mut probe = theta.to_vec();
    for j in 0..p {
        let h = 1e-6 * theta[j].abs().max(1.0);
        probe[j] = theta[j] + h;
        let up = model.log_density(i, y, &probe);
        probe[j] = theta[j] - h;
        let down = model.log_density(i, y, &probe);
        probe[j] = theta[j];
        worst = worst.max(((up - down) / (2.0 * h) - analytic[j]).abs());
    }
    worst
}

/// Verifies data length and support membership.
pub fn validate_data<M: ModelFamily + ?Sized>(model: &M, data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(DpdError::InvalidInput("no observations".into()));
    }
    if data.len() != model.n_obs() {
        return Err(DpdError::Dimension {
            what: "data length",
            expected: model.n_obs(),
            got: data.len(),
        });
    }
    let support = model.support();
    if let Some((i, y)) = data.iter().enumerate().find(|(_, y)| !support.contains(**y)) {
        return Err(DpdError::Domain {
            index: i,
            detail: format!("observation {y} outside the support {support:?}"),
        });
    }
    Ok(())
}

pub fn validate_theta<M: ModelFamily + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(DpdError::Dimension {
            what: "parameter length",
            expected: model.dim(),
            got: theta.len(),
        });
    }
    if !model.in_domain(theta) {
        return Err(DpdError::InvalidInput(format!("parameter {theta:?} outside the model domain")));
    }
    Ok(())
}
