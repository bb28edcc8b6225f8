//! Noise-scale calibration: the negative-rate recursion, its closed-form
//! inverse `sigma*`, and the `omega`-scaled learning-rate band.
//!
//! In the scalar surrogate with i.i.d. gains `N(omega, sigma^2)`, the
//! probability that the depth-`j` signal is negative satisfies
//! `pi_j = (1 - (1 - 2 p_-)^j) / 2` with `p_- = Phi(-omega/sigma)`.
//! Solving `pi_L(sigma) = p` for a target `p` in `[0, 1/2)` gives
//!
//! `sigma*(p, L, omega) = -omega / Phi^{-1}((1 - (1-2p)^{1/L}) / 2)`.
//!
//! Deep targets push the quantile argument far into the tail
//! (`q ~ 1e-6` at `L = 10^4`), so both directions are computed with
//! `ln_1p`/`exp_m1` forms and a quantile accurate to ~1e-15 relative.

use serde::Serialize;

use crate::special;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("domain error: {0}")]
    DomainError(String),
}

/// Calibration output for one `(p, L, omega)` triple.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CalibrationResult {
    pub p_target: f64,
    pub depth: usize,
    pub omega: f64,
    pub sigma_star: f64,
    pub lr_low: f64,
    pub lr_high: f64,
}

/// Standard normal CDF with absolute error below 1e-14; the left tail
/// keeps relative accuracy down to the underflow threshold.
pub fn std_normal_cdf(x: f64) -> f64 {
    special::norm_cdf(x)
}

/// Standard normal quantile for `q` in the open interval `(0, 1)`.
pub fn std_normal_quantile(q: f64) -> Result<f64, CalibrationError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(CalibrationError::DomainError(format!(
            "quantile argument must lie in (0, 1), got {q}"
        )));
    }
    Ok(special::norm_quantile(q))
}

/// Negative rate `pi_depth` of the scalar surrogate at noise scale
/// `sigma`: `pi = (1 - (1 - 2 p_-)^depth) / 2`, `p_- = Phi(-omega/sigma)`.
/// `sigma = 0` gives exactly 0.
pub fn negative_rate(sigma: f64, depth: usize, omega: f64) -> f64 {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    assert!(depth >= 1, "depth must be positive");
    assert!(omega > 0.0, "omega must be positive");
    if sigma == 0.0 {
        return 0.0;
    }
    let p_minus = special::norm_cdf(-omega / sigma);
    if p_minus == 0.0 {
        return 0.0;
    }
    // (1 - 2 p_-)^depth = exp(depth * ln(1 - 2 p_-)), kept in log space so
    // depths of 10^4 with p_- ~ 1e-6 do not lose the small complement.
    let t = depth as f64 * (-2.0 * p_minus).ln_1p();
    -0.5 * t.exp_m1()
}

/// Closed-form noise scale achieving `negative_rate(sigma, depth, omega)
/// == p`. Strictly increasing in `p`; `p = 0` maps to 0.
pub fn sigma_star(p: f64, depth: usize, omega: f64) -> Result<f64, CalibrationError> {
    if !(0.0..0.5).contains(&p) {
        return Err(CalibrationError::DomainError(format!(
            "p must be in [0, 0.5), got {p}"
        )));
    }
    if depth == 0 {
        return Err(CalibrationError::DomainError("depth must be positive".into()));
    }
    if !(omega > 0.0) {
        return Err(CalibrationError::DomainError(format!(
            "omega must be positive, got {omega}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    // q = (1 - (1-2p)^{1/depth}) / 2 via exp_m1 to dodge cancellation at
    // large depth.
    let q = -0.5 * ((-2.0 * p).ln_1p() / depth as f64).exp_m1();
    let z = special::norm_quantile(q);
    Ok(-omega / z)
}

/// The practical Adam learning-rate band `[1e-5 omega, 1e-3 omega]`.
pub fn lr_band(omega: f64) -> (f64, f64) {
    assert!(omega > 0.0, "omega must be positive");
    (1e-5 * omega, 1e-3 * omega)
}

/// Bundles `sigma*` and the learning-rate band for one target.
pub fn calibrate(p: f64, depth: usize, omega: f64) -> Result<CalibrationResult, CalibrationError> {
    let sigma_star = sigma_star(p, depth, omega)?;
    let (lr_low, lr_high) = lr_band(omega);
    Ok(CalibrationResult { p_target: p, depth, omega, sigma_star, lr_low, lr_high })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_rate_base_cases() {
        assert_eq!(negative_rate(0.0, 7, 1.0), 0.0);
        // depth = 1 is exactly p_-.
        let sigma = 0.8;
        let p_minus = std_normal_cdf(-1.0 / sigma);
        assert!((negative_rate(sigma, 1, 1.0) - p_minus).abs() < 1e-16);
        // Enormous sigma approaches 1/2 from below.
        let p = negative_rate(1e12, 1, 1.0);
        assert!(p < 0.5 && p > 0.499_999);
    }

    #[test]
    fn negative_rate_monotone_in_sigma() {
        let mut prev = -1.0;
        for i in 1..=60 {
            let sigma = 0.05 * i as f64;
            let p = negative_rate(sigma, 20, 1.0);
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn sigma_star_matches_bisection_oracle() {
        // Independent oracle: bisect negative_rate over sigma in (0, 100].
        let (p, depth, omega) = (0.3, 20, 1.0);
        let (mut lo, mut hi) = (1e-12, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if negative_rate(mid, depth, omega) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let closed = sigma_star(p, depth, omega).unwrap();
        assert!(
            (closed - oracle).abs() < 1e-9,
            "closed {closed} vs oracle {oracle}"
        );
    }

    #[test]
    fn sigma_star_round_trip_grid() {
        for &depth in &[1_usize, 10, 100, 10_000] {
            for &omega in &[0.1, 1.0, 10.0] {
                let mut p = 0.01;
                while p < 0.5 {
                    let s = sigma_star(p, depth, omega).unwrap();
                    let back = negative_rate(s, depth, omega);
                    assert!(
                        (back - p).abs() <= 1e-9,
                        "p={p} depth={depth} omega={omega}: back={back}"
                    );
                    p += 0.04;
                }
            }
        }
    }

    #[test]
    fn sigma_star_edges_and_domain() {
        assert_eq!(sigma_star(0.0, 10, 1.0).unwrap(), 0.0);
        assert!(sigma_star(0.5, 10, 1.0).is_err());
        assert!(sigma_star(0.6, 10, 1.0).is_err());
        assert!(sigma_star(-0.1, 10, 1.0).is_err());
        assert!(sigma_star(0.3, 0, 1.0).is_err());
    }

    #[test]
    fn sigma_star_monotone_in_p() {
        let mut prev = 0.0;
        for i in 1..50 {
            let p = 0.01 * i as f64;
            let s = sigma_star(p, 20, 1.0).unwrap();
            assert!(s > prev, "p={p}");
            prev = s;
        }
    }

    #[test]
    fn sigma_star_homogeneous_in_omega() {
        for &c in &[0.001, 0.5, 3.0, 1000.0] {
            let base = sigma_star(0.3, 50, 1.0).unwrap();
            let scaled = sigma_star(0.3, 50, c).unwrap();
            assert!(
                ((scaled - c * base) / (c * base)).abs() < 1e-12,
                "c={c}: {scaled} vs {}",
                c * base
            );
        }
    }

    #[test]
    fn quantile_and_cdf_round_trip() {
        // 1e-8 is achievable wherever the CDF value itself resolves x
        // that finely in a double, which holds up to x ~ 6; beyond that
        // Phi(x) sits on the 2^-53 grid below 1 and the induced error is
        // (ulp/2)/pdf(x) for any implementation.
        for i in 0..=1000 {
            let x = -8.0 + 14.0 * i as f64 / 1000.0;
            let back = std_normal_quantile(std_normal_cdf(x)).unwrap();
            assert!((back - x).abs() <= 1e-8, "x={x} back={back}");
        }
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn lr_band_scales_with_omega() {
        assert_eq!(lr_band(1.0), (1e-5, 1e-3));
        assert_eq!(lr_band(100.0), (1e-3, 1e-1));
        let (lo, hi) = lr_band(0.001);
        assert!((lo - 1e-8).abs() < 1e-22 && (hi - 1e-6).abs() < 1e-20);
    }
}
