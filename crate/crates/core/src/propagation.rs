//! Forward-signal simulators and dispersion measurement.
//!
//! Two models: a multiplicative scalar chain `X_j = f(A_j X_{j-1})` with
//! i.i.d. Gaussian gains (the surrogate the calibration is exact for),
//! and a wide feedforward chain `x^l = f(W^l x^{l-1})` built from an
//! initialization scheme. Both record the fraction of negative signal
//! per depth and the last-layer value distribution, summarized by the
//! normalized histogram-entropy spread metric.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::activations::ActivationSpec;
use crate::calibration::{self, CalibrationError};
use crate::initializers::InitScheme;
use crate::rng::substream;

#[derive(Debug, thiserror::Error)]
pub enum PropagationError {
    #[error("cannot compute a spread over an empty value set")]
    EmptyInput,
    #[error("histogram needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("histogram range [{0}, {1}] is empty")]
    InvalidRange(f64, f64),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Default bin count for last-layer histograms.
pub const DEFAULT_BINS: usize = 50;

/// Per-depth statistics of one forward pass.
#[derive(Clone, Debug)]
pub struct PropagationTrace {
    pub depth: usize,
    /// Number of parallel signals: chains for the scalar model, layer
    /// width for the feedforward model.
    pub width: usize,
    /// Fraction of strictly negative signals at depths `1..=depth`.
    pub negative_rate_per_depth: Vec<f64>,
    pub last_layer_values: Vec<f64>,
    /// Spread of the last layer over `[-sup|f|, sup|f|]` with
    /// [`DEFAULT_BINS`] bins.
    pub spread: f64,
}

impl PropagationTrace {
    pub fn final_negative_rate(&self) -> f64 {
        *self.negative_rate_per_depth.last().expect("depth >= 1")
    }

    pub fn max_abs_last_layer(&self) -> f64 {
        self.last_layer_values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Initial coordinate distribution for the feedforward chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum X0Dist {
    /// Every coordinate equals the given positive value.
    PositiveConstant(f64),
    /// Coordinates i.i.d. uniform on `[-range, range]`.
    UniformSym(f64),
}

/// Simulates `n_chains` independent scalar chains of the given depth with
/// gains `A_j ~ N(omega_f, sigma^2)`. Chains use `(seed, chain)`
/// substreams, so the trace is bit-stable under any execution order.
pub fn scalar_chain(
    spec: &ActivationSpec,
    sigma: f64,
    depth: usize,
    n_chains: usize,
    x0: f64,
    seed: u64,
) -> PropagationTrace {
    assert!(depth >= 1 && n_chains >= 1);
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    assert!(x0 > 0.0, "the scalar surrogate starts from x0 > 0");
    let omega = spec.omega();
    let gain = if sigma > 0.0 {
        Some(Normal::new(omega, sigma).expect("sigma validated"))
    } else {
        None
    };

    let (neg_counts, last_values) = (0..n_chains as u64)
        .into_par_iter()
        .map(|chain| {
            let mut rng = substream(seed, chain);
            let mut x = x0;
            let mut neg = vec![0u64; depth];
            for (j, slot) in neg.iter_mut().enumerate() {
                let a = match &gain {
                    Some(dist) => dist.sample(&mut rng),
                    None => omega,
                };
                x = spec.eval(a * x);
                let _ = j;
                *slot = u64::from(x < 0.0);
            }
            (neg, x)
        })
        .fold(
            || (vec![0u64; depth], Vec::new()),
            |(mut acc, mut lasts), (neg, x)| {
                for (a, b) in acc.iter_mut().zip(neg) {
                    *a += b;
                }
                lasts.push(x);
                (acc, lasts)
            },
        )
        .reduce(
            || (vec![0u64; depth], Vec::new()),
            |(mut acc, mut lasts), (neg, more)| {
                for (a, b) in acc.iter_mut().zip(neg) {
                    *a += b;
                }
                lasts.extend(more);
                (acc, lasts)
            },
        );

    let negative_rate_per_depth: Vec<f64> =
        neg_counts.iter().map(|&c| c as f64 / n_chains as f64).collect();
    let sup = spec.supremum_bound();
    let spread = spread_metric(&last_values, DEFAULT_BINS, (-sup, sup))
        .expect("n_chains >= 1 guarantees nonempty values");
    PropagationTrace {
        depth,
        width: n_chains,
        negative_rate_per_depth,
        last_layer_values: last_values,
        spread,
    }
}

/// Propagates one vector through `depth` square layers drawn from the
/// scheme (`x^l = f(W^l x^{l-1})`, no bias). Layer `l` uses the scheme's
/// `(seed, l)` substreams; the input vector, when random, uses the
/// separate chain seed.
pub fn ffnn_chain(
    spec: &ActivationSpec,
    scheme: &InitScheme,
    width: usize,
    depth: usize,
    x0_dist: X0Dist,
    seed: u64,
) -> PropagationTrace {
    assert!(width >= 1 && depth >= 1);

    let mut x: Vec<f64> = match x0_dist {
        X0Dist::PositiveConstant(v) => {
            assert!(v > 0.0, "constant initial coordinate must be positive");
            vec![v; width]
        }
        X0Dist::UniformSym(range) => {
            assert!(range > 0.0, "uniform range must be positive");
            use rand::Rng;
            // Reserve a stream index outside the layer range for inputs.
            let mut rng = substream(seed, u64::MAX);
            (0..width).map(|_| rng.random_range(-range..=range)).collect()
        }
    };

    let mut negative_rate_per_depth = Vec::with_capacity(depth);
    for layer in 0..depth {
        let w = scheme.init_layer(width, width, layer as u64);
        let s = par_matvec(&w, &x);
        x = s.into_par_iter().map(|v| spec.eval(v)).collect();
        let neg = x.iter().filter(|&&v| v < 0.0).count();
        negative_rate_per_depth.push(neg as f64 / width as f64);
    }

    let sup = spec.supremum_bound();
    let spread =
        spread_metric(&x, DEFAULT_BINS, (-sup, sup)).expect("width >= 1 keeps values nonempty");
    PropagationTrace {
        depth,
        width,
        negative_rate_per_depth,
        last_layer_values: x,
        spread,
    }
}

/// Parallel row-wise matrix-vector product; deterministic because every
/// output coordinate is computed independently.
fn par_matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let cols = w.ncols();
    let data = w.as_slice().expect("init_layer produces standard layout");
    data.par_chunks(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Normalized histogram entropy of `values` over `bins` equal bins on
/// `[lo, hi]`; values outside clamp into the end bins. 1 is a uniform
/// histogram, 0 a single occupied bin.
pub fn spread_metric(
    values: &[f64],
    bins: usize,
    range: (f64, f64),
) -> Result<f64, PropagationError> {
    let (lo, hi) = range;
    if values.is_empty() {
        return Err(PropagationError::EmptyInput);
    }
    if bins < 2 {
        return Err(PropagationError::InvalidBins(bins));
    }
    if !(lo < hi) {
        return Err(PropagationError::InvalidRange(lo, hi));
    }
    let counts = histogram_counts(values, bins, lo, hi);
    let total = values.len() as f64;
    let mut entropy = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy / (bins as f64).ln())
}

/// Bin counts used by the spread metric and the CLI histogram output.
pub fn histogram_counts(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for &v in values {
        let idx = ((v - lo) * scale).floor();
        let idx = if idx < 0.0 {
            0
        } else if idx >= bins as f64 {
            bins - 1
        } else {
            idx as usize
        };
        counts[idx] += 1;
    }
    counts
}

/// One row of the spread-versus-target sweep.
#[derive(Clone, Copy, Debug)]
pub struct SpreadSweepRow {
    pub p: f64,
    pub sigma_star: f64,
    pub spread: f64,
}

/// For each target `p`, calibrates `sigma*` at the chain depth, runs the
/// feedforward chain under the proposed scheme, and measures the
/// last-layer spread over `[-sup|f|, sup|f|]`.
pub fn spread_vs_p_sweep(
    spec: &ActivationSpec,
    depth: usize,
    width: usize,
    p_grid: &[f64],
    bins: usize,
    seed: u64,
) -> Result<Vec<SpreadSweepRow>, PropagationError> {
    let omega = spec.omega();
    let sup = spec.supremum_bound();
    p_grid
        .iter()
        .map(|&p| {
            let sigma_star = calibration::sigma_star(p, depth, omega)?;
            let scheme = InitScheme::new(
                crate::initializers::InitKind::Proposed { sigma_star, omega },
                seed,
            );
            let trace = ffnn_chain(
                spec,
                &scheme,
                width,
                depth,
                X0Dist::PositiveConstant(0.1),
                seed,
            );
            let spread = spread_metric(&trace.last_layer_values, bins, (-sup, sup))?;
            Ok(SpreadSweepRow { p, sigma_star, spread })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{negative_rate, sigma_star};
    use crate::initializers::InitKind;

    #[test]
    fn scalar_chain_zero_noise_stays_positive() {
        let trace = scalar_chain(&ActivationSpec::tanh(), 0.0, 30, 64, 0.1, 0);
        assert!(trace.negative_rate_per_depth.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn scalar_chain_tracks_sign_recursion() {
        // The closed-form pi_j is exact for this model; 3 binomial SE.
        let spec = ActivationSpec::tanh();
        let (p, depth, n) = (0.31, 50, 20_000);
        let sigma = sigma_star(p, depth, spec.omega()).unwrap();
        let trace = scalar_chain(&spec, sigma, depth, n, 0.1, 42);
        for (j, &emp) in trace.negative_rate_per_depth.iter().enumerate() {
            let theory = negative_rate(sigma, j + 1, spec.omega());
            let se = (theory * (1.0 - theory) / n as f64).sqrt();
            assert!(
                (emp - theory).abs() <= 3.0 * se,
                "depth {}: {emp} vs {theory}",
                j + 1
            );
        }
        assert!((trace.final_negative_rate() - p).abs() < 0.012);
    }

    #[test]
    fn scalar_chain_deterministic() {
        let spec = ActivationSpec::erf();
        let a = scalar_chain(&spec, 0.4, 20, 500, 0.1, 7);
        let b = scalar_chain(&spec, 0.4, 20, 500, 0.1, 7);
        assert_eq!(a.last_layer_values, b.last_layer_values);
        assert_eq!(a.negative_rate_per_depth, b.negative_rate_per_depth);
    }

    #[test]
    fn ffnn_depth_one_zero_noise_acts_coordinatewise() {
        // With sigma* = 0 and constant input, W = D maps every coordinate
        // through the same scalar gain.
        let spec = ActivationSpec::tanh();
        let scheme = InitScheme::new(
            InitKind::Proposed { sigma_star: 0.0, omega: spec.omega() },
            0,
        );
        let trace = ffnn_chain(&spec, &scheme, 32, 1, X0Dist::PositiveConstant(0.1), 0);
        let want = spec.eval(spec.omega() * 0.1);
        for &v in &trace.last_layer_values {
            assert_eq!(v, want);
        }
    }

    #[test]
    fn ffnn_negative_rate_dominates_surrogate_theory() {
        // The additive network's per-coordinate gain variance is bounded
        // below by the surrogate's (the conditional variance carries the
        // ratio sum on top of the floor), so its negative rate is never
        // under-delivered. The first layer, where all coordinates agree,
        // reproduces the surrogate's flip probability exactly; deeper
        // layers churn the near-zero coordinates and overshoot the
        // closed form toward 1/2.
        let spec = ActivationSpec::tanh();
        let (p, depth, width) = (0.31, 50, 1000);
        let sigma = sigma_star(p, depth, spec.omega()).unwrap();
        let scheme =
            InitScheme::new(InitKind::Proposed { sigma_star: sigma, omega: spec.omega() }, 11);
        let trace = ffnn_chain(&spec, &scheme, width, depth, X0Dist::PositiveConstant(0.1), 11);

        let p1 = negative_rate(sigma, 1, spec.omega());
        let se1 = (p1 * (1.0 - p1) / width as f64).sqrt();
        assert!(
            (trace.negative_rate_per_depth[0] - p1).abs() <= 4.0 * se1,
            "layer-1 rate {} vs surrogate {p1}",
            trace.negative_rate_per_depth[0]
        );
        for (j, &emp) in trace.negative_rate_per_depth.iter().enumerate() {
            let theory = negative_rate(sigma, j + 1, spec.omega());
            let se = (theory * (1.0 - theory) / width as f64).sqrt().max(1e-3);
            assert!(
                emp >= theory - 4.0 * se,
                "depth {}: rate {emp} under-delivered vs {theory}",
                j + 1
            );
            assert!(emp <= 0.55, "rate cannot exceed the symmetric ceiling");
        }
    }

    #[test]
    fn spread_metric_analytic_cases() {
        // Single occupied bin.
        assert_eq!(spread_metric(&[0.3; 10], 8, (-1.0, 1.0)).unwrap(), 0.0);
        // Exactly uniform across bins.
        let vals: Vec<f64> = (0..4).map(|i| -1.0 + 0.25 + 0.5 * i as f64).collect();
        let s = spread_metric(&vals, 4, (-1.0, 1.0)).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        // Two equally occupied bins of four: ln 2 / ln 4 = 1/2.
        let s = spread_metric(&[-0.9, 0.9], 4, (-1.0, 1.0)).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spread_metric_validates() {
        assert!(matches!(
            spread_metric(&[], 4, (-1.0, 1.0)),
            Err(PropagationError::EmptyInput)
        ));
        assert!(matches!(
            spread_metric(&[0.0], 1, (-1.0, 1.0)),
            Err(PropagationError::InvalidBins(1))
        ));
        assert!(matches!(
            spread_metric(&[0.0], 4, (1.0, 1.0)),
            Err(PropagationError::InvalidRange(..))
        ));
    }

    #[test]
    fn spread_metric_clamps_outliers_into_end_bins() {
        let s = spread_metric(&[-100.0, 100.0], 4, (-1.0, 1.0)).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spread_metric_permutation_and_scale_invariance() {
        let vals = [0.1, -0.4, 0.9, 0.2, -0.8, 0.5];
        let mut rev = vals;
        rev.reverse();
        let a = spread_metric(&vals, 10, (-1.0, 1.0)).unwrap();
        let b = spread_metric(&rev, 10, (-1.0, 1.0)).unwrap();
        assert_eq!(a, b);
        // Scaling values and range together leaves the metric unchanged.
        let scaled: Vec<f64> = vals.iter().map(|v| v * 3.0).collect();
        let c = spread_metric(&scaled, 10, (-3.0, 3.0)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn sweep_p_zero_is_deterministic_chain() {
        let spec = ActivationSpec::tanh();
        let rows = spread_vs_p_sweep(&spec, 10, 64, &[0.0], 50, 5).unwrap();
        assert_eq!(rows[0].sigma_star, 0.0);
        // sigma* = 0 collapses every coordinate to the same scalar orbit.
        assert!(rows[0].spread == 0.0);
    }

    #[test]
    fn sweep_spread_grows_with_p_small_scale() {
        let spec = ActivationSpec::tanh();
        let rows =
            spread_vs_p_sweep(&spec, 60, 400, &[0.14, 0.49], 50, 9).unwrap();
        assert!(
            rows[1].spread > rows[0].spread - 0.02,
            "p=0.49 spread {} vs p=0.14 spread {}",
            rows[1].spread,
            rows[0].spread
        );
    }

    #[test]
    fn ffnn_deterministic_with_uniform_inputs() {
        let spec = ActivationSpec::tanh();
        let scheme = InitScheme::new(InitKind::XavierUniform, 3);
        let a = ffnn_chain(&spec, &scheme, 64, 5, X0Dist::UniformSym(1.0), 3);
        let b = ffnn_chain(&spec, &scheme, 64, 5, X0Dist::UniformSym(1.0), 3);
        assert_eq!(a.last_layer_values, b.last_layer_values);
    }
}
