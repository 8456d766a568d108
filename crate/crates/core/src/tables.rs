//! Contiguous power tables for the normal and Poisson regression models.

use nalgebra::DVector;
use serde::Serialize;

use crate::distributions::noncentral_power;
use crate::error::{DpdError, Result};
use crate::glm::{glm_sandwich, normal_delta, FixedDesign, GlmFamily, GlmModel};
use crate::integrate::IntegralEngine;

/// Default tuning-parameter grid.
pub const TAU_GRID: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 1.0];

/// `d_x` rows of the normal table.
pub const NORMAL_DX: [f64; 8] = [0.0, 2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 50.0];

/// Number of regression coefficients in the two column groups of the normal table.
pub const NORMAL_K: [usize; 2] = [1, 20];

/// Sample size used for the Poisson table.
pub const POISSON_N: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCell {
    pub family: &'static str,
    /// Reference design number (Poisson table only).
    pub design: Option<u8>,
    /// `k` for the normal table, the tested coefficient `h` (one-based) for Poisson.
    pub group: usize,
    pub d: f64,
    pub tau: f64,
    pub delta: f64,
    pub power: f64,
    pub seed_dependent: bool,
}

/// Normal model: `β = β₀` on `k` degrees of freedom with
/// `δ = (1/φ₀)(1+τ²/(1+2τ))^{-3/2} d_x`.
pub fn normal_power_table(ks: &[usize], dx: &[f64], taus: &[f64], phi0: f64, alpha: f64) -> Result<Vec<PowerCell>> {
    if !(phi0 > 0.0) {
        return Err(DpdError::InvalidInput(format!("phi0 must be positive, got {phi0}")));
    }
    let mut out = Vec::with_capacity(ks.len() * dx.len() * taus.len());
    for &d in dx {
        if !(d >= 0.0) {
            return Err(DpdError::InvalidInput(format!("d_x must be >= 0, got {d}")));
        }
        for &k in ks {
            for &tau in taus {
                let delta = normal_delta(phi0, tau, d);
                out.push(PowerCell {
                    family: "normal",
                    design: None,
                    group: k,
                    d,
                    tau,
                    delta,
                    power: noncentral_power(k, delta, alpha)?,
                    seed_dependent: false,
                });
            }
        }
    }
    Ok(out)
}

/// Tested coefficients (one-based) and `d` rows of the Poisson table for
/// each reference design.
pub fn poisson_layout(design: u8) -> Result<([usize; 2], Vec<f64>)> {
    match design {
        1 => Ok(([1, 2], vec![0.0, 2.0, 3.0, 5.0, 7.0, 10.0])),
        2 => Ok(([1, 2], vec![0.0, 1.0, 2.0, 3.0, 5.0, 7.0])),
        3 => Ok(([1, 2], vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.5])),
        4 => Ok(([2, 3], vec![0.0, 10.0, 20.0, 30.0, 50.0, 70.0])),
        _ => Err(DpdError::InvalidInput(format!("unknown design {design}, expected 1-4"))),
    }
}

/// Poisson model, `β_h = 0` with the other coefficients at 1:
/// `δ = d²/σ²_hh` from the finite-n sandwich at the null.
pub fn poisson_power_table(
    design: &FixedDesign,
    design_number: Option<u8>,
    hs: &[usize],
    ds: &[f64],
    taus: &[f64],
    alpha: f64,
    engine: &IntegralEngine,
) -> Result<Vec<PowerCell>> {
    let k = design.k();
    let model = GlmModel::new(GlmFamily::PoissonLog, design.clone());
    let seed_dependent = design_number == Some(2);
    let mut out = Vec::with_capacity(hs.len() * ds.len() * taus.len());
    for &h in hs {
        if h == 0 || h > k {
            return Err(DpdError::InvalidInput(format!("coefficient index {h} out of range 1..={k}")));
        }
        let mut beta0 = DVector::from_element(k, 1.0);
        beta0[h - 1] = 0.0;
        for &tau in taus {
            let cov = glm_sandwich(&model, &beta0, tau, engine)?;
            let var = cov.sigma[(h - 1, h - 1)];
            for &d in ds {
                let delta = d * d / var;
                out.push(PowerCell {
                    family: "poisson",
                    design: design_number,
                    group: h,
                    d,
                    tau,
                    delta,
                    power: noncentral_power(1, delta, alpha)?,
                    seed_dependent,
                });
            }
        }
    }
    Ok(out)
}

/// The Poisson table for one of the reference designs at `n = 50`.
pub fn poisson_reference_table(design: u8, taus: &[f64], alpha: f64, engine: &IntegralEngine) -> Result<Vec<PowerCell>> {
    let (hs, ds) = poisson_layout(design)?;
    let x = FixedDesign::reference(design, POISSON_N)?;
    poisson_power_table(&x, Some(design), &hs, &ds, taus, alpha, engine)
}
