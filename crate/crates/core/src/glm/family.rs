//! Exponential-family pieces of the two shipped GLM families.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

/// Response distribution and link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlmFamily {
    /// Normal response, identity link, unknown variance `φ`.
    NormalIdentity,
    /// Poisson response, log link, `φ = 1` known.
    PoissonLog,
}

impl GlmFamily {
    /// Whether `φ` is part of the parameter vector.
    pub fn has_dispersion(self) -> bool {
        matches!(self, GlmFamily::NormalIdentity)
    }

    pub fn name(self) -> &'static str {
        match self {
            GlmFamily::NormalIdentity => "normal",
            GlmFamily::PoissonLog => "poisson",
        }
    }

    pub fn a(self, phi: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => phi,
            GlmFamily::PoissonLog => 1.0,
        }
    }

    pub fn b(self, eta: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => 0.5 * eta * eta,
            GlmFamily::PoissonLog => eta.exp(),
        }
    }

    pub fn b_prime(self, eta: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => eta,
            GlmFamily::PoissonLog => eta.exp(),
        }
    }

    pub fn b_double_prime(self, eta: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => 1.0,
            GlmFamily::PoissonLog => eta.exp(),
        }
    }

    pub fn c(self, y: f64, phi: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => -y * y / (2.0 * phi) - 0.5 * (2.0 * PI * phi).ln(),
            GlmFamily::PoissonLog => -ln_gamma(y + 1.0),
        }
    }

    /// Mean `μ = g⁻¹(η)`.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => eta,
            GlmFamily::PoissonLog => eta.exp(),
        }
    }

    /// Link `g(μ)`.
    pub fn link(self, mu: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => mu,
            GlmFamily::PoissonLog => mu.ln(),
        }
    }

    pub fn variance(self, eta: f64, phi: f64) -> f64 {
        self.a(phi) * self.b_double_prime(eta)
    }

    /// `log f(y)` for linear predictor `η`.
    pub fn log_density(self, y: f64, eta: f64, phi: f64) -> f64 {
        match self {
            GlmFamily::NormalIdentity => {
                let r = y - eta;
                -0.5 * (2.0 * PI * phi).ln() - r * r / (2.0 * phi)
            }
            GlmFamily::PoissonLog => poisson_log_pmf(y, eta.exp(), y - eta.exp()),
        }
    }

    /// `(K₁, K₂)` at `y`; `K₂` is absent when `φ` is known.
    pub fn k_values(self, y: f64, eta: f64, phi: f64) -> (f64, Option<f64>) {
        match self {
            GlmFamily::NormalIdentity => normal_k(y - eta, phi),
            GlmFamily::PoissonLog => (y - eta.exp(), None),
        }
    }
}

pub(crate) fn normal_k(r: f64, phi: f64) -> (f64, Option<f64>) {
    (r / phi, Some(r * r / (2.0 * phi * phi) - 1.0 / (2.0 * phi)))
}

/// `(K₁, K₂)` of the GLM score at response `y`, design row `x` and
/// `θ = (β, φ)` (`φ` omitted for Poisson).
pub fn k_functions(family: GlmFamily, y: f64, x: &[f64], theta: &[f64]) -> (f64, Option<f64>) {
    let k = x.len();
    let eta: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
    let phi = if family.has_dispersion() { theta[k] } else { 1.0 };
    family.k_values(y, eta, phi)
}

/// `log(n!) - (n + 1/2) log n + n - log(2π)/2`, the Stirling remainder.
pub(crate) fn stirlerr(n: f64) -> f64 {
    if n < 15.0 {
        if n == 0.0 {
            return 1.0 - 0.5 * (2.0 * PI).ln();
        }
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * PI).ln();
    }
    let nn = n * n;
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

/// `(1 + t) log(1 + t) - t`, accurate for small `t`.
fn one_plus_log_minus(t: f64) -> f64 {
    if t.abs() < 0.1 {
        // Σ_{k≥2} (-1)^k t^k / (k (k - 1))
        let mut term = t * t;
        let mut sum = 0.0;
        let mut k = 2.0;
        loop {
            let add = term / (k * (k - 1.0));
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() {
                break;
            }
            term *= -t;
            k += 1.0;
        }
        sum
    } else {
        (1.0 + t) * t.ln_1p() - t
    }
}

/// Poisson log-probability at `y` (may be non-integer for the smooth
/// extension) with mean `λ` and residual `r = y - λ` supplied separately.
pub(crate) fn poisson_log_pmf(y: f64, lambda: f64, r: f64) -> f64 {
    if y < 0.0 {
        return f64::NEG_INFINITY;
    }
    if y == 0.0 {
        return -lambda;
    }
    if lambda < 10.0 && y < 10.0 {
        return y * lambda.ln() - lambda - ln_gamma(y + 1.0);
    }
    // λ φ(r/λ) = y log(y/λ) + λ - y
    let bd0 = lambda * one_plus_log_minus(r / lambda);
    -stirlerr(y) - bd0 - 0.5 * (2.0 * PI * y).ln()
}

/// `Σ_y f(y)^e (1, r, r²)` with `r = y − λ` for the Poisson pmf, summed
/// outward from the mode with the pmf updated recursively.
pub(crate) fn poisson_power_sums(lambda: f64, e: f64) -> [f64; 3] {
    let mode = lambda.floor();
    let log_lambda = lambda.ln();
    let log_mode = poisson_log_pmf(mode, lambda, mode - lambda);
    let mut sums = [0.0; 3];
    let add = |y: f64, log_f: f64, sums: &mut [f64; 3]| {
        let r = y - lambda;
        let w = (e * log_f).exp();
        sums[0] += w;
        sums[1] += r * w;
        sums[2] += r * r * w;
        w * (1.0 + r * r)
    };
    add(mode, log_mode, &mut sums);
    // upward: log f(y+1) = log f(y) + log λ − log(y+1)
    let (mut y, mut log_f) = (mode, log_mode);
    loop {
        log_f += log_lambda - (y + 1.0).ln();
        y += 1.0;
        let size = add(y, log_f, &mut sums);
        if size <= 1e-17 * (sums[0] + sums[2]) && y > lambda + 1.0 {
            break;
        }
    }
    let (mut y, mut log_f) = (mode, log_mode);
    while y > 0.0 {
        log_f += y.ln() - log_lambda;
        y -= 1.0;
        let size = add(y, log_f, &mut sums);
        if size <= 1e-17 * (sums[0] + sums[2]) {
            break;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_variance_identities() {
        for fam in [GlmFamily::NormalIdentity, GlmFamily::PoissonLog] {
            for &eta in &[-1.3, 0.0, 0.7, 2.2] {
                let h = 1e-5;
                let db = (fam.b(eta + h) - fam.b(eta - h)) / (2.0 * h);
                assert_relative_eq!(db, fam.mean(eta), max_relative = 1e-8);
                let d2b = (fam.b_prime(eta + h) - fam.b_prime(eta - h)) / (2.0 * h);
                assert_relative_eq!(fam.variance(eta, 1.7) / fam.a(1.7), d2b, max_relative = 1e-8);
                assert_relative_eq!(fam.link(fam.mean(eta)), eta, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn normal_density_matches_exponential_family_form() {
        let fam = GlmFamily::NormalIdentity;
        let (y, eta, phi) = (0.4, 1.1, 2.3);
        let ef = (y * eta - fam.b(eta)) / fam.a(phi) + fam.c(y, phi);
        assert_relative_eq!(fam.log_density(y, eta, phi), ef, max_relative = 1e-14);
    }

    #[test]
    fn poisson_log_pmf_agrees_with_direct_formula() {
        for &lambda in &[0.3, 2.7, 12.0, 150.0, 4000.0] {
            for &y in &[0.0, 1.0, 5.0, 17.0, 160.0, 3950.0] {
                let direct = y * f64::ln(lambda) - lambda - ln_gamma(y + 1.0);
                let stable = poisson_log_pmf(y, lambda, y - lambda);
                assert_relative_eq!(stable, direct, max_relative = 1e-11, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn power_sums_match_brute_force() {
        for &lambda in &[1e-3, 0.4, 2.718281828459045, 31.0, 950.0] {
            for &e in &[1.0, 1.3, 2.0] {
                let got = poisson_power_sums(lambda, e);
                let mut want = [0.0; 3];
                for y in 0..4000 {
                    let y = y as f64;
                    let w = (e * (y * f64::ln(lambda) - lambda - ln_gamma(y + 1.0))).exp();
                    let r = y - lambda;
                    want[0] += w;
                    want[1] += r * w;
                    want[2] += r * r * w;
                }
                for j in 0..3 {
                    assert!((got[j] - want[j]).abs() <= 1e-11 * want[0].max(want[2]), "{lambda} {e} {j}");
                }
            }
        }
    }

    #[test]
    fn stirlerr_matches_definition() {
        for &n in &[15.0, 20.5, 100.0] {
            let def = ln_gamma(n + 1.0) - (n + 0.5) * f64::ln(n) + n - 0.5 * (2.0 * PI).ln();
            assert_relative_eq!(stirlerr(n), def, max_relative = 1e-8);
        }
        // lgamma cancels badly here; compare with the leading asymptotic terms
        let n: f64 = 1e4;
        assert_relative_eq!(stirlerr(n), 1.0 / (12.0 * n) - 1.0 / (360.0 * n.powi(3)), max_relative = 1e-14);
    }

    #[test]
    fn k_functions_vanish_at_the_mean() {
        let x = [1.0, 0.5];
        let (k1, k2) = k_functions(GlmFamily::NormalIdentity, 1.5, &x, &[1.0, 1.0, 2.0]);
        assert_eq!(k1, 0.0);
        assert_relative_eq!(k2.unwrap(), -0.25);
        let mu = f64::exp(1.5);
        let (k1, k2) = k_functions(GlmFamily::PoissonLog, mu, &x, &[1.0, 1.0]);
        assert!(k1.abs() < 1e-14);
        assert!(k2.is_none());
    }
}
