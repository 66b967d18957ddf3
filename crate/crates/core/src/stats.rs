//! Scalar probability primitives for the log-normal accelerated-failure-time
//! model: standard normal density and distribution, log-normal event
//! density, survival and hazard, and seeded sampling.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Survival probabilities below this are treated as underflow.
pub const MIN_SURVIVAL: f64 = 1e-300;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Natural log of the standard normal density.
pub fn normal_log_pdf(u: f64) -> f64 {
    -0.5 * u * u - LN_SQRT_2PI
}

/// Standard normal distribution function, Φ(u).
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(u), computed without cancellation.
pub fn normal_sf(u: f64) -> f64 {
    0.5 * libm::erfc(u * FRAC_1_SQRT_2)
}

/// Location/scale of the log event time: ln T ~ N(mu, sigma²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("location must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Domain(format!(
                "scale must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    fn standardize(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        Ok((t.ln() - self.mu) / self.sigma)
    }
}

/// Event density f(t) = φ((ln t − μ)/σ) / (t σ).
pub fn lognormal_event_density(t: f64, p: &LogNormalParams) -> Result<f64> {
    let u = p.standardize(t)?;
    Ok(normal_pdf(u) / (t * p.sigma))
}

/// Survival S(t) = 1 − Φ((ln t − μ)/σ).
pub fn lognormal_survival(t: f64, p: &LogNormalParams) -> Result<f64> {
    let u = p.standardize(t)?;
    Ok(normal_sf(u))
}

/// Hazard λ(t) = f(t)/S(t). Returns `+inf` once S(t) underflows [`MIN_SURVIVAL`].
pub fn hazard_rate(t: f64, p: &LogNormalParams) -> Result<f64> {
    let s = lognormal_survival(t, p)?;
    if s < MIN_SURVIVAL {
        return Ok(f64::INFINITY);
    }
    Ok(lognormal_event_density(t, p)? / s)
}

/// Seeded counter-based random stream.
///
/// Draw sequences are reproducible for a given `(seed, stream)` pair.
/// Independent consumers should take their own stream via [`RngStream::fork`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh stream sharing this stream's seed but with an independent
    /// counter sequence. Does not advance `self`.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn sample_normal(rng: &mut RngStream, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("normal scale must be positive, got {sigma}")));
    }
    Ok(mu + sigma * rng.standard_normal())
}

/// |N(0, sigma_sigma²)|.
pub fn sample_half_normal(rng: &mut RngStream, sigma_sigma: f64) -> Result<f64> {
    if !(sigma_sigma > 0.0) {
        return Err(Error::Domain(format!(
            "half-normal scale must be positive, got {sigma_sigma}"
        )));
    }
    Ok((sigma_sigma * rng.standard_normal()).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    // Reference values from mpmath at 40 digits.
    const CDF_TABLE: [(f64, f64, f64); 9] = [
        (-8.0, 6.220960574271784e-16, 0.9999999999999993779),
        (-3.0, 0.0013498980316300946, 0.9986501019683699),
        (-1.5, 0.06680720126885807, 0.9331927987311419),
        (-0.3, 0.38208857781104737, 0.6179114221889526),
        (0.7, 0.758036347776927, 0.24196365222307303),
        (2.5, 0.9937903346742238, 0.006209665325776135),
        (5.0, 0.9999997133484281, 2.866515718791939e-7),
        (9.0, 1.0, 1.1285884059538406e-19),
        (1.0, 0.8413447460685429, 0.15865525393145705),
    ];

    fn p(mu: f64, sigma: f64) -> LogNormalParams {
        LogNormalParams::new(mu, sigma).unwrap()
    }

    #[test]
    fn pdf_and_cdf_reference_values() {
        assert!((normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(normal_cdf(0.0), 0.5);
        for (u, cdf, sf) in CDF_TABLE {
            assert!((normal_cdf(u) - cdf).abs() <= 1e-12, "cdf({u})");
            assert!((normal_sf(u) - sf).abs() <= 1e-12, "sf({u})");
            // upper tail keeps relative accuracy
            assert!((normal_sf(u) - sf).abs() <= 1e-12 * sf, "relative sf({u})");
        }
        assert!((normal_log_pdf(0.7) - normal_pdf(0.7).ln()).abs() < 1e-14);
    }

    #[test]
    fn lognormal_examples() {
        let std = p(0.0, 1.0);
        let e = std::f64::consts::E;
        assert!((lognormal_event_density(1.0, &std).unwrap() - 0.3989422804).abs() < 1e-10);
        assert!((lognormal_event_density(e, &std).unwrap() - 0.08901605491595147).abs() < 1e-12);
        assert!(lognormal_event_density(0.0, &std).is_err());
        assert!(lognormal_event_density(-1.0, &std).is_err());

        assert_eq!(lognormal_survival(1.0, &std).unwrap(), 0.5);
        assert!((lognormal_survival(e, &std).unwrap() - 0.1586552539).abs() < 1e-10);
        assert!((lognormal_survival(1e-300, &p(3.0, 0.5)).unwrap() - 1.0).abs() < 1e-12);
        assert!(lognormal_survival(0.0, &std).is_err());
    }

    #[test]
    fn hazard_examples() {
        let std = p(0.0, 1.0);
        assert!((hazard_rate(1.0, &std).unwrap() - 0.7978845608).abs() < 1e-10);
        assert!(hazard_rate(0.0, &std).is_err());
        let grid: Vec<f64> = (5..15).map(|k| hazard_rate((k as f64).exp(), &std).unwrap()).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]), "{grid:?}");
        assert_eq!(hazard_rate(1e30, &p(0.0, 0.1)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(LogNormalParams::new(0.0, 0.0).is_err());
        assert!(LogNormalParams::new(f64::NAN, 1.0).is_err());
        assert!(LogNormalParams::new(0.0, f64::INFINITY).is_err());
    }

    /// Adaptive Simpson on ln t, independent of the closed forms above.
    fn integrate_density(p: &LogNormalParams, lo_log: f64, hi_log: f64) -> f64 {
        // substitute t = e^s, dt = e^s ds
        let f = |s: f64| {
            let t = s.exp();
            let u = (s - p.mu) / p.sigma;
            (-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * t * p.sigma) * t
        };
        let n = 20_000;
        let h = (hi_log - lo_log) / n as f64;
        let mut acc = f(lo_log) + f(hi_log);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo_log + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn density_integrates_to_one_and_matches_survival() {
        for &(mu, sigma) in &[(0.0, 1.0), (5.2, 1.0), (4.0, 0.3), (-1.0, 2.5)] {
            let q = p(mu, sigma);
            let lo = mu - 14.0 * sigma;
            let total = integrate_density(&q, lo, mu + 14.0 * sigma);
            assert!((total - 1.0).abs() < 1e-6, "total {total}");
            for &t in &[0.5, 1.0, 10.0, 180.0] {
                let partial = integrate_density(&q, lo, f64::ln(t));
                let s = lognormal_survival(t, &q).unwrap();
                assert!((s - (1.0 - partial)).abs() < 1e-6, "t={t} s={s} 1-F={}", 1.0 - partial);
            }
        }
    }

    #[test]
    fn sampling_moments() {
        let mut rng = RngStream::new(7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_normal(&mut rng, 2.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.01, "{mean}");

        let draws: Vec<f64> = (0..n).map(|_| sample_half_normal(&mut rng, 1.0).unwrap()).collect();
        assert!(draws.iter().all(|&d| d >= 0.0));
        let hn_mean = draws.iter().sum::<f64>() / n as f64;
        assert!((hn_mean - (2.0 / PI).sqrt()).abs() < 0.01, "{hn_mean}");

        assert!(sample_normal(&mut rng, 0.0, 0.0).is_err());
        assert!(sample_half_normal(&mut rng, -1.0).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible_and_independent() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        let mut f1 = a.fork(1);
        let mut f2 = a.fork(2);
        assert_ne!(f1.next_u64(), f2.next_u64());
        assert_eq!(a.fork(1).next_u64(), RngStream::new(42).fork(1).next_u64());
    }

    proptest! {
        #[test]
        fn survival_is_non_increasing(mu in -5.0f64..8.0, sigma in 0.05f64..4.0,
                                      mut ts in proptest::collection::vec(1e-3f64..1e4, 2..40)) {
            let q = p(mu, sigma);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let s: Vec<f64> = ts.iter().map(|&t| lognormal_survival(t, &q).unwrap()).collect();
            prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn hazard_times_survival_is_density(mu in -3.0f64..6.0, sigma in 0.1f64..3.0, t in 1e-2f64..1e3) {
            let q = p(mu, sigma);
            let s = lognormal_survival(t, &q).unwrap();
            prop_assume!(s > 1e-200);
            let f = lognormal_event_density(t, &q).unwrap();
            let h = hazard_rate(t, &q).unwrap();
            prop_assert!((h * s - f).abs() <= 1e-12 * f.abs().max(1e-300));
        }
    }
}
