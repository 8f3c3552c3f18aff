//! Generalized Cauchy noise, parameter derivation and release.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpError {
    #[error("ε = {epsilon} is too small for β = {beta}, γ = {gamma}; ε must exceed {min_epsilon}")]
    Budget { epsilon: f64, beta: f64, gamma: f64, min_epsilon: f64 },
    #[error("invalid parameter: {0}")]
    Param(String),
}

pub type Result<T> = std::result::Result<T, DpError>;

/// Default tail exponent.
pub const GAMMA: f64 = 4.0;

// 4-point Gauss-Legendre nodes and weights on [-1, 1]
const GL_X: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
const GL_W: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];

const PANELS: usize = 1 << 16;

/// Distribution with density proportional to `1/(1+|x|^γ)`.
#[derive(Clone, Debug)]
pub struct GenCauchy {
    pub gamma: f64,
    /// Integral of the unnormalized density over the real line.
    pub z: f64,
    // cumulative half-line integral at u = k/PANELS, where x = u/(1-u)
    knots: Vec<f64>,
}

impl GenCauchy {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(DpError::Param(format!("γ must be > 1, got {gamma}")));
        }
        let a = PI / gamma;
        let z = 2.0 * a / a.sin();
        let mut g = GenCauchy { gamma, z, knots: Vec::with_capacity(PANELS + 1) };
        let mut acc = 0.0;
        g.knots.push(0.0);
        for k in 0..PANELS {
            acc += g.panel(k as f64 / PANELS as f64, (k + 1) as f64 / PANELS as f64);
            g.knots.push(acc);
        }
        Ok(g)
    }

    // integrand after x = u/(1-u)
    fn h(&self, u: f64) -> f64 {
        let v = 1.0 - u;
        v.powf(self.gamma - 2.0) / (v.powf(self.gamma) + u.powf(self.gamma))
    }

    fn panel(&self, lo: f64, hi: f64) -> f64 {
        let (m, r) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        r * GL_X.iter().zip(GL_W).map(|(x, w)| w * self.h(m + r * x)).sum::<f64>()
    }

    // ∫_0^{u/(1-u)} dt/(1+t^γ)
    fn half_integral(&self, u: f64) -> f64 {
        let k = ((u * PANELS as f64) as usize).min(PANELS - 1);
        let lo = k as f64 / PANELS as f64;
        self.knots[k] + self.panel(lo, u)
    }

    pub fn density(&self, x: f64) -> f64 {
        1.0 / (self.z * (1.0 + x.abs().powf(self.gamma)))
    }

    pub fn log_density(&self, x: f64) -> f64 {
        -log1p_pow(x.abs(), self.gamma) - self.z.ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        let t = x.abs();
        let i = self.half_integral(t / (1.0 + t)) / self.z;
        if x > 0.0 {
            0.5 + i
        } else {
            0.5 - i
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p == 0.5 {
            return 0.0;
        }
        if p < 0.5 {
            return -self.quantile(1.0 - p);
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let target = (p - 0.5) * self.z;
        // locate the panel, then Newton inside it with a bisection fallback
        let k = self.knots.partition_point(|&c| c <= target).saturating_sub(1).min(PANELS - 1);
        let (mut lo, mut hi) = (k as f64 / PANELS as f64, (k + 1) as f64 / PANELS as f64);
        let x_of = |u: f64| u / (1.0 - u);
        let mut u = (lo + hi) / 2.0;
        for _ in 0..200 {
            let r = self.half_integral(u) - target;
            if r < 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let next = u - r / self.h(u);
            if (x_of(next) - x_of(u)).abs() <= 1e-13 * x_of(u).max(1.0) && next > lo && next < hi {
                return x_of(next);
            }
            if x_of(hi) - x_of(lo) <= 1e-12 * x_of(lo).max(1.0) {
                break;
            }
            u = if next > lo && next < hi { next } else { (lo + hi) / 2.0 };
        }
        x_of((lo + hi) / 2.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // uniform on (0,1), never 0
        let k: u64 = rng.gen::<u64>() >> 11;
        self.quantile((k as f64 + 0.5) / (1u64 << 53) as f64)
    }
}

// ln(1 + t^γ) without overflow
fn log1p_pow(t: f64, gamma: f64) -> f64 {
    if t <= 1.0 {
        t.powf(gamma).ln_1p()
    } else {
        gamma * t.ln() + t.powf(-gamma).ln_1p()
    }
}

/// Tables are built once per γ.
pub fn shared(gamma: f64) -> Result<Arc<GenCauchy>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<GenCauchy>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(g) = cache.lock().unwrap().get(&gamma.to_bits()) {
        return Ok(g.clone());
    }
    let g = Arc::new(GenCauchy::new(gamma)?);
    cache.lock().unwrap().insert(gamma.to_bits(), g.clone());
    Ok(g)
}

/// One draw with a fresh seeded stream.
pub fn sample(gamma: f64, seed: u64) -> Result<f64> {
    Ok(shared(gamma)?.sample(&mut ChaCha20Rng::seed_from_u64(seed)))
}

/// Noise scale parameter `b = ε/(γ+1) − β`.
pub fn derive_b(epsilon: f64, beta: f64, gamma: f64) -> Result<f64> {
    let b = epsilon / (gamma + 1.0) - beta;
    if !(b > 0.0) {
        return Err(DpError::Budget { epsilon, beta, gamma, min_epsilon: (gamma + 1.0) * beta });
    }
    Ok(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseParams {
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub b: f64,
}

impl NoiseParams {
    pub fn new(epsilon: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) || !(beta > 0.0) {
            return Err(DpError::Param(format!("need γ > 1 and β > 0, got γ = {gamma}, β = {beta}")));
        }
        Ok(NoiseParams { epsilon, beta, gamma, b: derive_b(epsilon, beta, gamma)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Release {
    pub raw: f64,
    pub sensitivity: f64,
    pub params: NoiseParams,
    pub eta: f64,
    pub noised: f64,
    pub seed: u64,
}

/// Adds `(c/b)·η` to `raw`.
pub fn privatize(raw: f64, c: f64, params: NoiseParams, seed: u64) -> Result<Release> {
    if !c.is_finite() || c < 0.0 {
        return Err(DpError::Param(format!("sensitivity must be finite and non-negative, got {c}")));
    }
    let eta = sample(params.gamma, seed)?;
    let noise = if c == 0.0 { 0.0 } else { c / params.b * eta };
    Ok(Release { raw, sensitivity: c, params, eta, noised: raw + noise, seed })
}

/// Largest absolute log-ratio of the densities of `a1 + c1·η` and
/// `a2 + c2·η`, over a dense grid and the tails.
pub fn ddp_check(a1: f64, c1: f64, a2: f64, c2: f64, gamma: f64) -> Result<f64> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(DpError::Param("scales must be positive".into()));
    }
    let lr = |x: f64| {
        let (z1, z2) = ((x - a1) / c1, (x - a2) / c2);
        ((c2 / c1).ln() + log1p_pow(z2.abs(), gamma) - log1p_pow(z1.abs(), gamma)).abs()
    };
    // limit as |x| → ∞
    let mut best = ((gamma - 1.0) * (c1 / c2).ln()).abs();
    let c = c1.max(c2);
    let centre = (a1 + a2) / 2.0;
    let span = (a1 - a2).abs() + 50.0 * c;
    let n = 200_000;
    for i in 0..=n {
        let x = centre - span + 2.0 * span * i as f64 / n as f64;
        best = best.max(lr(x));
    }
    for k in 0..=400 {
        let r = span * 10f64.powf(k as f64 * 0.03);
        best = best.max(lr(centre + r)).max(lr(centre - r));
    }
    for x in [a1, a2] {
        best = best.max(lr(x));
    }
    Ok(best)
}

/// Upper bound on the posterior probability of guessing a property whose
/// prior is `p1` among worlds at distance at most `a` from each other,
/// with `p2` the prior mass of the complement region.
pub fn guessing_posterior_bound(epsilon: f64, a: f64, p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 0.0) || p1 > 1.0 || !(0.0..=1.0).contains(&p2) {
        return Err(DpError::Param("priors must lie in (0,1] and [0,1]".into()));
    }
    Ok(1.0 / (1.0 + (-epsilon * a).exp() * (1.0 - p2) / p1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_constant() {
        let g = GenCauchy::new(4.0).unwrap();
        assert!((g.z - PI / 2f64.sqrt()).abs() < 1e-10);
        // the table integrates to half the constant
        assert!((g.knots[PANELS] - g.z / 2.0).abs() < 1e-10);
        assert_eq!(g.cdf(0.0), 0.5);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let g = GenCauchy::new(4.0).unwrap();
        for p in [0.001, 0.1, 0.3, 0.5, 0.77, 0.99, 0.999999] {
            let x = g.quantile(p);
            assert!((g.cdf(x) - p).abs() < 1e-11, "{p}");
        }
    }

    #[test]
    fn derive_b_examples() {
        assert!((derive_b(1.0, 0.1, 4.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((derive_b(2.5, 0.1, 4.0).unwrap() - 0.4).abs() < 1e-15);
        match derive_b(0.5, 0.1, 4.0) {
            Err(DpError::Budget { min_epsilon, .. }) => assert!((min_epsilon - 0.5).abs() < 1e-15),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn releases() {
        let p = NoiseParams::new(1.0, 0.1, 4.0).unwrap();
        assert_eq!(privatize(42.0, 0.0, p, 1).unwrap().noised, 42.0);
        let r = privatize(100.0, 1.0, p, 7).unwrap();
        assert!((r.noised - (100.0 + 10.0 * r.eta)).abs() < 1e-9);
        assert_eq!(r, privatize(100.0, 1.0, p, 7).unwrap());
        assert!(privatize(1.0, f64::NAN, p, 1).is_err());
    }

    #[test]
    fn ddp_examples() {
        assert_eq!(ddp_check(3.0, 2.0, 3.0, 2.0, 4.0).unwrap(), 0.0);
        assert!(ddp_check(0.0, 1.0, 1.0, 1.0, 4.0).unwrap() <= 5.0);
        let s = ddp_check(0.0, 1.0, 0.0, 1f64.exp(), 4.0).unwrap();
        assert!((3.0..=5.0).contains(&s), "{s}");
    }

    #[test]
    fn guessing_bound() {
        let v = guessing_posterior_bound(1.0, 1.0, 0.5, 0.5).unwrap();
        assert!((v - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
        assert_eq!(guessing_posterior_bound(0.0, 1.0, 0.5, 0.5).unwrap(), 0.5);
        assert_eq!(guessing_posterior_bound(1.0, 1.0, 0.3, 1.0).unwrap(), 1.0);
        assert!(guessing_posterior_bound(1.0, 1.0, 0.0, 0.5).is_err());
    }
}
