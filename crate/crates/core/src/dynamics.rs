//! Fixed-point and bifurcation analysis of the scalar map
//! `phi_a(x) = f(a x)`.
//!
//! For an odd-sigmoid `f` with critical gain `omega = 1/f'(0)`, the map
//! has the single fixed point 0 for `a <= omega` and picks up a symmetric
//! pair `{-xi_a, +xi_a}` once `a > omega`. Iteration from any positive
//! start converges monotonically to the relevant fixed point, which is
//! what makes the gain sequence of a deep network either collapse,
//! saturate, or hold a level depending on how the gains sit relative to
//! `omega`.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::activations::ActivationSpec;
use crate::rng::substream;
use crate::special;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("no sign change found when bracketing xi for a = {a}; the gain is at or below omega within tolerance, or the activation is not an odd-sigmoid")]
    BracketFailure { a: f64 },
    #[error("deterministic iteration did not reach delta = {delta} within {cap} steps (delta too close to xi_alpha)")]
    NoSuchR { delta: f64, cap: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Which side of the pitchfork a gain sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `a <= omega`: only the trivial fixed point.
    SubCritical,
    /// `a > omega`: fixed points `{-xi_a, 0, xi_a}`.
    SuperCritical,
}

/// Nonnegative representative of the fixed-point set of `phi_a`. By odd
/// symmetry the full set is `{-xi, 0, xi}` (or `{0}` when subcritical).
#[derive(Clone, Copy, Debug)]
pub struct FixedPointSet {
    pub regime: Regime,
    pub xi: f64,
    /// `|f(a xi) - xi|` at the reported root.
    pub residual: f64,
}

/// Orbit of `x_{n+1} = f(a x_n)`.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub a: f64,
    pub x0: f64,
    pub values: Vec<f64>,
}

impl IterationTrace {
    pub fn converged_to(&self) -> f64 {
        *self.values.last().expect("trace always holds x0")
    }
}

/// Relative tolerance for classifying `a <= omega`, so the bifurcation
/// boundary itself is treated as subcritical.
const OMEGA_CLASSIFY_RTOL: f64 = 1e-12;
const BISECT_WIDTH_TOL: f64 = 1e-14;
const BISECT_MAX_ITER: usize = 200;
const DETERMINISTIC_STEP_CAP: usize = 1_000_000;

/// Solves `f(a x) = x` for the nonnegative fixed point.
///
/// Subcritical gains report `xi = 0` immediately. Supercritical gains are
/// bracketed on `(0, sup |f|]` and bisected; bisection (rather than
/// Newton) keeps convergence unconditional where the residual function is
/// nearly flat, just above the bifurcation.
pub fn solve_xi(spec: &ActivationSpec, a: f64) -> Result<FixedPointSet, DynamicsError> {
    if !(a > 0.0) {
        return Err(DynamicsError::InvalidInput(format!(
            "gain must be positive, got {a}"
        )));
    }
    let omega = spec.omega();
    if a <= omega * (1.0 + OMEGA_CLASSIFY_RTOL) {
        return Ok(FixedPointSet { regime: Regime::SubCritical, xi: 0.0, residual: 0.0 });
    }

    let g = |x: f64| spec.eval(a * x) - x;
    let mut hi = spec.supremum_bound();
    // g(sup) <= f(a sup) - sup < 0; saturation can make it exactly 0 in
    // floats, in which case sup already is the root.
    if g(hi) == 0.0 {
        return Ok(FixedPointSet { regime: Regime::SuperCritical, xi: hi, residual: 0.0 });
    }
    // Walk the lower endpoint down until the residual is positive there;
    // g > 0 on (0, xi) by the shape of the supercritical map.
    let mut lo = 0.0;
    let mut eps = hi;
    let mut found = false;
    for _ in 0..80 {
        eps *= 0.5;
        if g(eps) > 0.0 {
            lo = eps;
            found = true;
            break;
        }
        // Shrink hi while g is still negative there: keeps the bracket tight.
        hi = eps;
    }
    if !found {
        return Err(DynamicsError::BracketFailure { a });
    }

    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= BISECT_WIDTH_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xi = 0.5 * (lo + hi);
    Ok(FixedPointSet {
        regime: Regime::SuperCritical,
        xi,
        residual: g(xi).abs(),
    })
}

/// Runs `n` steps of `x_{n+1} = f(a x_n)`; the trace has `n + 1` entries
/// starting at `x0`.
pub fn iterate(spec: &ActivationSpec, a: f64, x0: f64, n: usize) -> IterationTrace {
    let mut values = Vec::with_capacity(n + 1);
    values.push(x0);
    let mut x = x0;
    for _ in 0..n {
        x = spec.eval(a * x);
        values.push(x);
    }
    IterationTrace { a, x0, values }
}

/// Applies a varying gain sequence left to right:
/// `phi_{a_m} o ... o phi_{a_1} (x0)` with `a_1` applied first. An empty
/// sequence is the identity.
pub fn compose_varying(spec: &ActivationSpec, gains: &[f64], x0: f64) -> f64 {
    gains.iter().fold(x0, |x, &a| spec.eval(a * x))
}

/// Outcome of the Monte-Carlo floor-bound experiment.
#[derive(Clone, Copy, Debug)]
pub struct FloorBoundOutcome {
    /// Monte-Carlo estimate of `P(Phi_m(x0) >= delta)` under i.i.d.
    /// `N(omega, sigma^2)` gains.
    pub empirical_prob: f64,
    /// `(1 - Phi((alpha - omega)/sigma))^r`.
    pub bound: f64,
    /// Smallest step count with deterministic `Phi_r^alpha(x0) >= delta`.
    pub r: usize,
}

/// Estimates `P(Phi_m(x0) >= delta)` with random gains and compares it to
/// the closed-form floor bound. The bound is only claimed for `m >= r`;
/// both numbers are returned either way. Trials draw from independent
/// `(seed, trial)` substreams, so the estimate is bit-stable regardless
/// of execution order.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_floor_probability(
    spec: &ActivationSpec,
    sigma: f64,
    m: usize,
    x0: f64,
    delta: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<FloorBoundOutcome, DynamicsError> {
    let omega = spec.omega();
    if !(sigma > 0.0) {
        return Err(DynamicsError::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(alpha > omega) {
        return Err(DynamicsError::InvalidInput(format!(
            "alpha = {alpha} must exceed omega = {omega}"
        )));
    }
    if !(0.0 < x0 && x0 < delta) {
        return Err(DynamicsError::InvalidInput(format!(
            "need 0 < x0 < delta, got x0 = {x0}, delta = {delta}"
        )));
    }
    let xi_alpha = solve_xi(spec, alpha)?.xi;
    if !(delta < xi_alpha) {
        return Err(DynamicsError::InvalidInput(format!(
            "delta = {delta} must lie below xi_alpha = {xi_alpha}"
        )));
    }
    if trials == 0 {
        return Err(DynamicsError::InvalidInput("trials must be >= 1".into()));
    }

    // Deterministic step count r with Phi_r^alpha(x0) >= delta.
    let mut x = x0;
    let mut r = None;
    for step in 1..=DETERMINISTIC_STEP_CAP {
        x = spec.eval(alpha * x);
        if x >= delta {
            r = Some(step);
            break;
        }
    }
    let r = r.ok_or(DynamicsError::NoSuchR { delta, cap: DETERMINISTIC_STEP_CAP })?;

    let tail = 1.0 - special::norm_cdf((alpha - omega) / sigma);
    let bound = tail.powf(r as f64);

    let gain_dist = Normal::new(omega, sigma).expect("sigma validated positive");
    let hits: usize = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = substream(seed, trial);
            let mut x = x0;
            for _ in 0..m {
                let a = gain_dist.sample(&mut rng);
                x = spec.eval(a * x);
            }
            usize::from(x >= delta)
        })
        .sum();

    Ok(FloorBoundOutcome {
        empirical_prob: hits as f64 / trials as f64,
        bound,
        r,
    })
}

/// One gain value of a bifurcation sweep: the orbit plus the fixed point.
#[derive(Clone, Debug)]
pub struct BifurcationRow {
    pub a: f64,
    pub trace: IterationTrace,
    pub fixed_point: FixedPointSet,
}

/// Iterates `n` steps at each gain and pairs the orbit with the solved
/// fixed point, in the layout the CLI writes out for bifurcation plots.
pub fn bifurcation_scan(
    spec: &ActivationSpec,
    a_values: &[f64],
    x0: f64,
    n: usize,
) -> Result<Vec<BifurcationRow>, DynamicsError> {
    a_values
        .iter()
        .map(|&a| {
            let fixed_point = solve_xi(spec, a)?;
            Ok(BifurcationRow { a, trace: iterate(spec, a, x0, n), fixed_point })
        })
        .collect()
}
