//! Catalog of odd-sigmoid activations.
//!
//! An odd-sigmoid is a `C^1`, odd, bounded, strictly increasing function
//! whose derivative is strictly decreasing on `[0, inf)`. The catalog
//! covers `tanh`, `erf`, `arctan` (raw and `2/pi`-normalized), the
//! Gudermannian, the generalized softsign family `x / (1 + |x|^k)^{1/k}`,
//! and nonnegative linear combinations of members, each optionally
//! composed with an input scale `alpha` (evaluating `f(alpha x)`).
//!
//! The critical gain of the pitchfork bifurcation is
//! `omega = 1 / f'(0)`; for a combination `g = sum c_j f_j` it satisfies
//! the harmonic rule `1/omega_g = sum c_j / omega_j`.

use std::fmt;

use crate::special;

/// Errors from spec construction, parsing, or the class checker.
#[derive(Debug, thiserror::Error)]
pub enum ActivationError {
    #[error("input scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("softsign exponent must satisfy k >= 1, got {0}")]
    InvalidSoftsignExponent(f64),
    #[error("combination coefficients must be nonnegative with at least one positive")]
    InvalidCoefficients,
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error("cannot parse activation spec `{0}`: {1}")]
    Parse(String, String),
}

/// The base function of a spec, before the input scale is applied.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationKind {
    Tanh,
    Erf,
    /// Raw `arctan`, bounded by `pi/2`.
    Arctan,
    /// `(2/pi) arctan`, bounded by 1.
    ArctanNormalized,
    /// Gudermannian `gd(x) = 2 arctan(tanh(x/2))`.
    Gd,
    /// Generalized softsign `x / (1 + |x|^k)^{1/k}`, `k >= 1`.
    SoftsignK(f64),
    /// `softsign_1 + softsign_3`, used as a composite benchmark.
    Softsign1Plus3,
    /// Nonnegative linear combination of member specs.
    Combination(Vec<(f64, ActivationSpec)>),
}

/// A validated activation: a catalog kind plus an input scale `alpha`,
/// evaluating `f(alpha x)`. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSpec {
    kind: ActivationKind,
    input_scale: f64,
}

impl ActivationSpec {
    /// Validates and builds a spec.
    pub fn new(kind: ActivationKind, input_scale: f64) -> Result<Self, ActivationError> {
        if !(input_scale > 0.0) || !input_scale.is_finite() {
            return Err(ActivationError::InvalidScale(input_scale));
        }
        match &kind {
            ActivationKind::SoftsignK(k) => {
                if !(*k >= 1.0) || !k.is_finite() {
                    return Err(ActivationError::InvalidSoftsignExponent(*k));
                }
            }
            ActivationKind::Combination(terms) => {
                if terms.is_empty()
                    || terms.iter().any(|(c, _)| !(*c >= 0.0) || !c.is_finite())
                    || terms.iter().all(|(c, _)| *c == 0.0)
                {
                    return Err(ActivationError::InvalidCoefficients);
                }
            }
            _ => {}
        }
        Ok(Self { kind, input_scale })
    }

    pub fn tanh() -> Self {
        Self { kind: ActivationKind::Tanh, input_scale: 1.0 }
    }

    pub fn erf() -> Self {
        Self { kind: ActivationKind::Erf, input_scale: 1.0 }
    }

    pub fn arctan() -> Self {
        Self { kind: ActivationKind::Arctan, input_scale: 1.0 }
    }

    pub fn arctan_normalized() -> Self {
        Self { kind: ActivationKind::ArctanNormalized, input_scale: 1.0 }
    }

    pub fn gd() -> Self {
        Self { kind: ActivationKind::Gd, input_scale: 1.0 }
    }

    pub fn softsign(k: f64) -> Result<Self, ActivationError> {
        Self::new(ActivationKind::SoftsignK(k), 1.0)
    }

    pub fn softsign_1_plus_3() -> Self {
        Self { kind: ActivationKind::Softsign1Plus3, input_scale: 1.0 }
    }

    pub fn combination(terms: Vec<(f64, ActivationSpec)>) -> Result<Self, ActivationError> {
        Self::new(ActivationKind::Combination(terms), 1.0)
    }

    /// Composes with an input scale: the result evaluates `self(alpha x)`.
    /// Scales multiply, so `spec.scaled(a).scaled(b) == spec.scaled(a*b)`.
    pub fn scaled(mut self, alpha: f64) -> Result<Self, ActivationError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(ActivationError::InvalidScale(alpha));
        }
        self.input_scale *= alpha;
        Ok(self)
    }

    pub fn kind(&self) -> &ActivationKind {
        &self.kind
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    /// Evaluates `f(alpha x)`.
    pub fn eval(&self, x: f64) -> f64 {
        base_eval(&self.kind, self.input_scale * x)
    }

    /// Analytic derivative `alpha * f'(alpha x)`.
    pub fn deriv(&self, x: f64) -> f64 {
        self.input_scale * base_deriv(&self.kind, self.input_scale * x)
    }

    /// Slope at the origin, `alpha * f'(0)`.
    pub fn slope_at_zero(&self) -> f64 {
        self.input_scale * base_slope_at_zero(&self.kind)
    }

    /// Critical gain `omega = 1 / f'(0)`.
    pub fn omega(&self) -> f64 {
        1.0 / self.slope_at_zero()
    }

    /// Analytic supremum of `|f|` (the input scale does not change it).
    pub fn supremum_bound(&self) -> f64 {
        base_sup(&self.kind)
    }

    /// Parses the CLI grammar; see [`ActivationSpec::parse`] docs.
    pub fn parse(s: &str) -> Result<Self, ActivationError> {
        parse_spec(s.trim())
    }
}

fn base_eval(kind: &ActivationKind, u: f64) -> f64 {
    match kind {
        ActivationKind::Tanh => u.tanh(),
        ActivationKind::Erf => special::erf(u),
        ActivationKind::Arctan => u.atan(),
        ActivationKind::ArctanNormalized => std::f64::consts::FRAC_2_PI * u.atan(),
        ActivationKind::Gd => 2.0 * (0.5 * u).tanh().atan(),
        ActivationKind::SoftsignK(k) => softsign_eval(u, *k),
        ActivationKind::Softsign1Plus3 => softsign_eval(u, 1.0) + softsign_eval(u, 3.0),
        ActivationKind::Combination(terms) => {
            terms.iter().map(|(c, s)| c * s.eval(u)).sum()
        }
    }
}

fn base_deriv(kind: &ActivationKind, u: f64) -> f64 {
    match kind {
        ActivationKind::Tanh => {
            let c = u.cosh();
            1.0 / (c * c)
        }
        ActivationKind::Erf => std::f64::consts::FRAC_2_SQRT_PI * (-u * u).exp(),
        ActivationKind::Arctan => 1.0 / (1.0 + u * u),
        ActivationKind::ArctanNormalized => std::f64::consts::FRAC_2_PI / (1.0 + u * u),
        ActivationKind::Gd => 1.0 / u.cosh(),
        ActivationKind::SoftsignK(k) => softsign_deriv(u, *k),
        ActivationKind::Softsign1Plus3 => softsign_deriv(u, 1.0) + softsign_deriv(u, 3.0),
        ActivationKind::Combination(terms) => {
            terms.iter().map(|(c, s)| c * s.deriv(u)).sum()
        }
    }
}

fn base_slope_at_zero(kind: &ActivationKind) -> f64 {
    match kind {
        ActivationKind::Tanh | ActivationKind::Arctan | ActivationKind::Gd => 1.0,
        ActivationKind::Erf => std::f64::consts::FRAC_2_SQRT_PI,
        ActivationKind::ArctanNormalized => std::f64::consts::FRAC_2_PI,
        ActivationKind::SoftsignK(_) => 1.0,
        ActivationKind::Softsign1Plus3 => 2.0,
        ActivationKind::Combination(terms) => {
            terms.iter().map(|(c, s)| c * s.slope_at_zero()).sum()
        }
    }
}

fn base_sup(kind: &ActivationKind) -> f64 {
    match kind {
        ActivationKind::Tanh
        | ActivationKind::Erf
        | ActivationKind::ArctanNormalized
        | ActivationKind::SoftsignK(_) => 1.0,
        ActivationKind::Arctan | ActivationKind::Gd => std::f64::consts::FRAC_PI_2,
        ActivationKind::Softsign1Plus3 => 2.0,
        ActivationKind::Combination(terms) => {
            terms.iter().map(|(c, s)| c * s.supremum_bound()).sum()
        }
    }
}

/// `x / (1 + |x|^k)^{1/k}`. Guarded at 0 (where `|x|^k` via logs would
/// produce 0 * inf) and rearranged for |x| > 1 so `|x|^k` cannot overflow.
fn softsign_eval(x: f64, k: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs();
    if a <= 1.0 {
        let t = (k * a.ln()).exp(); // |x|^k <= 1
        x / (t.ln_1p() / k).exp()
    } else {
        // x / (1+a^k)^{1/k} = sign(x) / (1 + a^{-k})^{1/k}
        let t = (-k * a.ln()).exp(); // a^{-k} < 1
        x.signum() / (t.ln_1p() / k).exp()
    }
}

/// d/dx softsign_k = (1 + |x|^k)^{-(k+1)/k}; equals 1 at x = 0.
fn softsign_deriv(x: f64, k: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let a = x.abs();
    // ln(1 + a^k), stable on both sides of |x| = 1.
    let log1p_ak = if a <= 1.0 {
        (k * a.ln()).exp().ln_1p()
    } else {
        k * a.ln() + (-k * a.ln()).exp().ln_1p()
    };
    (-(k + 1.0) / k * log1p_ak).exp()
}

/// Sampling plan for the numerical class checker: a uniform grid on
/// `[0, x_max]` with `points` nodes, mirrored to the negative axis.
#[derive(Clone, Copy, Debug)]
pub struct SamplingPlan {
    pub x_max: f64,
    pub points: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self { x_max: 50.0, points: 2001 }
    }
}

impl SamplingPlan {
    fn grid(&self) -> Result<Vec<f64>, ActivationError> {
        if self.points < 2 {
            return Err(ActivationError::InvalidGrid(format!(
                "need at least 2 points, got {}",
                self.points
            )));
        }
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(ActivationError::InvalidGrid(format!(
                "grid on [0, {}] is not monotone",
                self.x_max
            )));
        }
        let n = self.points;
        Ok((0..n)
            .map(|i| self.x_max * i as f64 / (n - 1) as f64)
            .collect())
    }
}

/// Outcome of the numerical membership check. `is_member` requires odd
/// symmetry, boundedness, strict monotonicity, and slope decay; the decay
/// of `f'` toward 0 at the right edge is reported alongside.
#[derive(Clone, Debug)]
pub struct ClassReport {
    pub odd_symmetry: bool,
    pub bounded: bool,
    pub strictly_increasing: bool,
    pub slope_decreasing: bool,
    /// Max |f| observed on the grid.
    pub sup_estimate: f64,
    /// f'(x_max); should trend toward 0 for members.
    pub slope_at_xmax: f64,
    /// f'(x_max) / f'(0).
    pub slope_decay_ratio: f64,
}

impl ClassReport {
    pub fn is_member(&self) -> bool {
        self.odd_symmetry && self.bounded && self.strictly_increasing && self.slope_decreasing
    }
}

const ODD_TOL: f64 = 1e-12;
const SLOPE_TIE_TOL: f64 = 1e-14;

/// Checks the odd-sigmoid properties of a spec on a sampled grid. This is
/// a falsifier, not a proof: it reports which property fails, if any.
pub fn check_odd_sigmoid(
    spec: &ActivationSpec,
    plan: &SamplingPlan,
) -> Result<ClassReport, ActivationError> {
    check_functions(&|x| spec.eval(x), &|x| spec.deriv(x), plan)
}

/// Grid checker over raw closures; lets tests exercise failure paths with
/// non-members that are not constructible as specs.
pub(crate) fn check_functions(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    plan: &SamplingPlan,
) -> Result<ClassReport, ActivationError> {
    let grid = plan.grid()?;

    let mut odd_symmetry = true;
    let mut sup_estimate = 0.0_f64;
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    for (&x, &fx) in grid.iter().zip(&values) {
        if (f(-x) + fx).abs() > ODD_TOL {
            odd_symmetry = false;
        }
        sup_estimate = sup_estimate.max(fx.abs()).max(f(-x).abs());
    }

    // f' may underflow to an exact 0 once f has numerically saturated
    // (erf'(30) is below the subnormal range); a zero slope only counts
    // against monotonicity while the function is still visibly short of
    // its supremum.
    let saturated = |fx: f64| fx.abs() >= sup_estimate * (1.0 - 1e-9);
    let mut strictly_increasing = true;
    let mut slope_decreasing = true;
    let mut prev_slope = f64::INFINITY;
    for (&x, &fx) in grid.iter().zip(&values) {
        let d = df(x);
        let dm = df(-x);
        if d < 0.0 || dm < 0.0 || (d == 0.0 && !saturated(fx)) || (dm == 0.0 && !saturated(fx)) {
            strictly_increasing = false;
        }
        if d >= prev_slope + SLOPE_TIE_TOL {
            slope_decreasing = false;
        }
        prev_slope = d;
    }

    let bounded = sup_estimate.is_finite();
    let slope0 = df(0.0);
    let slope_at_xmax = df(plan.x_max);
    // Per-step ties are tolerated (saturated-tail plateaus), so demand a
    // genuine overall decrease as well; a constant slope never qualifies.
    if !(slope_at_xmax < slope0) {
        slope_decreasing = false;
    }
    Ok(ClassReport {
        odd_symmetry,
        bounded,
        strictly_increasing,
        slope_decreasing,
        sup_estimate,
        slope_at_xmax,
        slope_decay_ratio: slope_at_xmax / slope0,
    })
}

// ---------------------------------------------------------------------------
// String grammar
// ---------------------------------------------------------------------------
//
//   tanh | erf | arctan | arctann | gd
//   softsign:<k>
//   scale:<alpha>:<spec>
//   sum:<c1>*<spec1>+<c2>*<spec2>+...
//
// `scale` composes (its payload is everything after the second colon), and
// `sum` terms may themselves be scaled; sums cannot be nested.

fn parse_spec(s: &str) -> Result<ActivationSpec, ActivationError> {
    let err = |msg: &str| ActivationError::Parse(s.to_string(), msg.to_string());
    match s {
        "tanh" => return Ok(ActivationSpec::tanh()),
        "erf" => return Ok(ActivationSpec::erf()),
        "arctan" => return Ok(ActivationSpec::arctan()),
        "arctann" => return Ok(ActivationSpec::arctan_normalized()),
        "gd" => return Ok(ActivationSpec::gd()),
        _ => {}
    }
    if let Some(rest) = s.strip_prefix("softsign:") {
        let k: f64 = rest.parse().map_err(|_| err("bad softsign exponent"))?;
        return ActivationSpec::softsign(k);
    }
    if let Some(rest) = s.strip_prefix("scale:") {
        let (alpha_str, inner) = rest
            .split_once(':')
            .ok_or_else(|| err("scale needs `scale:<alpha>:<spec>`"))?;
        let alpha: f64 = alpha_str.parse().map_err(|_| err("bad scale factor"))?;
        return parse_spec(inner)?.scaled(alpha);
    }
    if let Some(rest) = s.strip_prefix("sum:") {
        let mut terms = Vec::new();
        for term in rest.split('+') {
            let (coeff_str, inner) = term
                .split_once('*')
                .ok_or_else(|| err("sum terms need `<coeff>*<spec>`"))?;
            if inner.starts_with("sum:") {
                return Err(err("nested sums are not supported"));
            }
            let c: f64 = coeff_str.parse().map_err(|_| err("bad coefficient"))?;
            terms.push((c, parse_spec(inner)?));
        }
        return ActivationSpec::combination(terms);
    }
    Err(err("unknown activation"))
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.input_scale != 1.0 {
            write!(f, "scale:{}:", self.input_scale)?;
        }
        match &self.kind {
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::Erf => write!(f, "erf"),
            ActivationKind::Arctan => write!(f, "arctan"),
            ActivationKind::ArctanNormalized => write!(f, "arctann"),
            ActivationKind::Gd => write!(f, "gd"),
            ActivationKind::SoftsignK(k) => write!(f, "softsign:{k}"),
            ActivationKind::Softsign1Plus3 => write!(f, "sum:1*softsign:1+1*softsign:3"),
            ActivationKind::Combination(terms) => {
                write!(f, "sum:")?;
                for (i, (c, s)) in terms.iter().enumerate() {
                    if i > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{c}*{s}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::str::FromStr for ActivationSpec {
    type Err = ActivationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
