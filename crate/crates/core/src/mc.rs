//! Seeded Monte Carlo experiments for the Wald-type tests on fixed-design GLMs.
//!
//! Replication `r` draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(r)`, so every replication has its own stream and results do
//! not depend on scheduling.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::glm::{glm_sandwich, GlmFamily, GlmModel};
use crate::mdpde::{fit_mdpde, SandwichCov, SolverOptions};
use crate::model::{ModelFamily, ParamVector};
use crate::wald::{wald_composite, wald_simple, CompositeHypothesis};

/// Smallest number of replications accepted.
pub const MIN_REPLICATIONS: usize = 100;

/// Where a contaminating observation is placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ContaminationPoint {
    Absolute(f64),
    /// The observation's null mean plus this offset.
    MeanShift(f64),
}

/// Each observation is replaced with probability `ε/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contamination {
    pub epsilon: f64,
    pub point: ContaminationPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// Data from `θ₀`.
    Null,
    /// Data from a fixed `θ*`.
    FixedAlternative { theta_star: ParamVector },
    /// Data from `θ₀ + d/√n`.
    Contiguous { d: ParamVector },
    /// Null data with `ε/√n` contamination.
    ContaminatedLevel(Contamination),
    /// Contiguous data with `ε/√n` contamination.
    ContaminatedPower { d: ParamVector, contamination: Contamination },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Null => "null",
            Scenario::FixedAlternative { .. } => "fixed-alt",
            Scenario::Contiguous { .. } => "contiguous",
            Scenario::ContaminatedLevel(_) => "contaminated-level",
            Scenario::ContaminatedPower { .. } => "contaminated-power",
        }
    }

    fn contamination(&self) -> Option<Contamination> {
        match self {
            Scenario::ContaminatedLevel(c) | Scenario::ContaminatedPower { contamination: c, .. } => Some(*c),
            _ => None,
        }
    }
}

/// Which statistic is computed in each replication.
#[derive(Debug, Clone)]
pub enum McTest {
    /// `θ = θ₀` with `Σ(θ₀)`.
    Simple,
    /// `h(θ) = 0` with `Σ(θ̂)`.
    Composite(CompositeHypothesis),
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub replications: usize,
    pub n: usize,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    pub alpha: f64,
    pub scenario: Scenario,
    pub solver: SolverOptions,
}

impl McConfig {
    pub fn new(replications: usize, n: usize, seed: u64, tau_grid: Vec<f64>, scenario: Scenario) -> Self {
        Self {
            replications,
            n,
            seed,
            tau_grid,
            alpha: 0.05,
            scenario,
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self, model: &GlmModel, theta0: &ParamVector) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(DpdError::InvalidInput(format!(
                "replications must be at least {MIN_REPLICATIONS}, got {}",
                self.replications
            )));
        }
        if self.n != model.design.n() {
            return Err(DpdError::Dimension {
                what: "design rows vs n",
                expected: self.n,
                got: model.design.n(),
            });
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(DpdError::InvalidInput("tau grid must be non-empty with values >= 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DpdError::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let p = model.dim();
        let check = |v: &ParamVector| {
            if v.len() != p {
                Err(DpdError::Dimension {
                    what: "scenario parameter length",
                    expected: p,
                    got: v.len(),
                })
            } else {
                Ok(())
            }
        };
        check(theta0)?;
        match &self.scenario {
            Scenario::FixedAlternative { theta_star } => check(theta_star)?,
            Scenario::Contiguous { d } | Scenario::ContaminatedPower { d, .. } => check(d)?,
            _ => {}
        }
        if let Some(c) = self.scenario.contamination() {
            if !(c.epsilon >= 0.0) || c.epsilon / (self.n as f64).sqrt() > 1.0 {
                return Err(DpdError::InvalidInput(format!(
                    "contamination probability eps/sqrt(n) must lie in [0, 1], eps = {}",
                    c.epsilon
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub scenario: &'static str,
    pub family: &'static str,
    pub n: usize,
    pub tau: f64,
    pub alpha: f64,
    pub replications: usize,
    pub used: usize,
    pub excluded: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
}

impl McRow {
    /// Whether `value` lies within `k` standard errors of the rate.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.rate - value).abs() <= k * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub seed: u64,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.rows {
            wtr.serialize(row)
                .map_err(|e| DpdError::InvalidInput(format!("writing MC CSV: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| DpdError::InvalidInput(format!("writing MC CSV: {e}")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

fn draw(family: GlmFamily, mean: f64, phi: f64, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        GlmFamily::NormalIdentity => {
            let z: f64 = StandardNormal.sample(rng);
            mean + phi.sqrt() * z
        }
        GlmFamily::PoissonLog => {
            if mean <= 0.0 {
                0.0
            } else {
                Poisson::new(mean).expect("positive mean").sample(rng)
            }
        }
    }
}

fn replicate_data(
    model: &GlmModel,
    theta0: &ParamVector,
    truth: &ParamVector,
    contamination: Option<Contamination>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = model.design.n();
    let th = truth.as_slice();
    let phi = model.phi(th);
    let prob = contamination.map(|c| c.epsilon / (n as f64).sqrt());
    (0..n)
        .map(|i| {
            let mean = model.family.mean(model.eta(i, th));
            let y = draw(model.family, mean, phi, rng);
            match (contamination, prob) {
                (Some(c), Some(p)) if rng.random::<f64>() < p => {
                    let point = match c.point {
                        ContaminationPoint::Absolute(t) => t,
                        ContaminationPoint::MeanShift(s) => {
                            model.family.mean(model.eta(i, theta0.as_slice())) + s
                        }
                    };
                    match model.family {
                        GlmFamily::PoissonLog => point.round().max(0.0),
                        GlmFamily::NormalIdentity => point,
                    }
                }
                _ => y,
            }
        })
        .collect()
}

/// Runs the experiment and reports the rejection rate per `τ`.
pub fn run_mc(config: &McConfig, model: &GlmModel, theta0: &ParamVector, test: &McTest) -> Result<McReport> {
    config.validate(model, theta0)?;
    let sqrt_n = (config.n as f64).sqrt();
    let truth = match &config.scenario {
        Scenario::Null | Scenario::ContaminatedLevel(_) => theta0.clone(),
        Scenario::FixedAlternative { theta_star } => theta_star.clone(),
        Scenario::Contiguous { d } | Scenario::ContaminatedPower { d, .. } => theta0 + d / sqrt_n,
    };
    if !model.in_domain(truth.as_slice()) {
        return Err(DpdError::InvalidInput("data-generating parameter outside the model domain".into()));
    }
    let null_cov: Vec<Option<SandwichCov>> = match test {
        McTest::Simple => config
            .tau_grid
            .iter()
            .map(|&tau| glm_sandwich(model, theta0, tau, &config.solver.engine).map(Some))
            .collect::<Result<_>>()?,
        McTest::Composite(_) => vec![None; config.tau_grid.len()],
    };
    let contamination = config.scenario.contamination();

    // Per replication and τ: Some(reject) or None when excluded.
    let outcomes: Vec<Vec<Option<bool>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64);
            let y = replicate_data(model, theta0, &truth, contamination, &mut rng);
            config
                .tau_grid
                .iter()
                .zip(&null_cov)
                .map(|(&tau, cov0)| {
                    let fit = fit_mdpde(model, &y, tau, None, &config.solver).ok()?;
                    let report = match (test, cov0) {
                        (McTest::Simple, Some(cov)) => wald_simple(&fit.theta, theta0, cov, config.n, config.alpha),
                        (McTest::Composite(hyp), _) => {
                            let cov = glm_sandwich(model, &fit.theta, tau, &config.solver.engine).ok()?;
                            wald_composite(&fit.theta, hyp, &cov, config.n, config.alpha)
                        }
                        (McTest::Simple, None) => unreachable!("null covariance computed above"),
                    };
                    report.ok().map(|r| r.reject)
                })
                .collect()
        })
        .collect();

    let rows = config
        .tau_grid
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let used: Vec<bool> = outcomes.iter().filter_map(|o| o[j]).collect();
            let rejections = used.iter().filter(|r| **r).count();
            let count = used.len();
            let rate = if count > 0 { rejections as f64 / count as f64 } else { f64::NAN };
            McRow {
                scenario: config.scenario.name(),
                family: model.family.name(),
                n: config.n,
                tau,
                alpha: config.alpha,
                replications: config.replications,
                used: count,
                excluded: config.replications - count,
                rejections,
                rate,
                se: (rate * (1.0 - rate) / count as f64).sqrt(),
            }
        })
        .collect();
    Ok(McReport { seed: config.seed, rows })
}

/// Standard error of a rejection rate `r` over `reps` replications.
pub fn mc_standard_error(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

/// `θ₀` and the composite null used by the shipped Poisson scenario:
/// `β_h = 0` with the other coefficients at 1.
pub fn poisson_coefficient_null(k: usize, h: usize) -> Result<(ParamVector, CompositeHypothesis)> {
    let hyp = crate::wald::LinearHypothesis::coordinate(k, h, 0.0)?.to_composite(k)?;
    let mut beta = DVector::from_element(k, 1.0);
    beta[h] = 0.0;
    Ok((beta, hyp))
}
