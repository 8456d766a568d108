#![allow(dead_code)]

use dpdwald::distributions::normal_cdf;
use dpdwald::glm::FixedDesign;
use dpdwald::IntegralEngine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::ln_gamma;

/// Non-central χ² CDF from `W = (Z + √δ)² + χ²_{df-1}` by one-dimensional
/// quadrature over the central part, substituted as `w = x sin²φ`.
pub fn ncx2_cdf_oracle(df: usize, delta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let rd = delta.sqrt();
    let rx = x.sqrt();
    let one_dim = |c: f64| normal_cdf(c - rd) - normal_cdf(-c - rd);
    if df == 1 {
        return one_dim(rx);
    }
    let k = (df - 1) as f64;
    let log_norm = 0.5 * k * x.ln() - 0.5 * k * std::f64::consts::LN_2 - ln_gamma(0.5 * k);
    let engine = IntegralEngine {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        ..IntegralEngine::default()
    };
    let res = engine
        .quadrature(0.0, std::f64::consts::FRAC_PI_2, 1, |phi, out| {
            let (s, c) = phi.sin_cos();
            let w = x * s * s;
            let dens = 2.0 * c * s.powf(k - 1.0) * (log_norm - 0.5 * w).exp();
            out[0] = one_dim(rx * c) * dens;
        })
        .expect("oracle quadrature");
    res.value[0]
}

pub fn ncx2_sf_oracle(df: usize, delta: f64, x: f64) -> f64 {
    1.0 - ncx2_cdf_oracle(df, delta, x)
}

/// Seeded normal responses around `Xβ` with variance `φ`.
pub fn normal_data(design: &FixedDesign, beta: &[f64], phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, phi.sqrt()).unwrap();
    (0..design.n())
        .map(|i| design.x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng))
        .collect()
}

/// Seeded Poisson responses with mean `exp(Xβ)`.
pub fn poisson_data(design: &FixedDesign, beta: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..design.n())
        .map(|i| {
            let lambda = design.x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>().exp();
            rand_distr::Poisson::new(lambda).unwrap().sample(&mut rng)
        })
        .collect()
}
