//! One step of noisy gradient descent started from `I ~ N(0, 1)`.
//!
//! Given the initialization, the two outputs are `N(0, 1)` and `N(μ_I, 1)`
//! after normalizing by the noise scale. Revealing `I` gives a lower bound on
//! the trade-off curve: at log-threshold `t` every conditional Gaussian test
//! has slope `-e^{-t}`, and the errors are averaged over `I` by quadrature.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numeric::{gaussian_cdf, gaussian_pdf, gaussian_sf};
use crate::tradeoff::{
    gdp_curve, GaussianTradeoff, LikelihoodRatioTest, ParametricCurve, ParametricSample,
    PiecewiseLinearTradeoff,
};

/// Signed gradient gap `μ_I` as a function of the initialization.
pub type GapFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How the per-example gradient depends on the initialization.
#[derive(Clone)]
pub enum GradientModel {
    /// Least squares without clipping: gap `a - I`.
    NoClip { a: f64 },
    /// Least squares with per-example clipping at `c`: gap `clamp(a - I, -c, c)`.
    Clipped { a: f64, c: f64 },
    /// Logistic loss with `|xy| ≤ bound`: gap `1 / (1 + e^{-bound |I|})`.
    Logistic { bound: f64 },
    /// Any gap function, with the points where it is not smooth.
    Custom { gap: GapFn, kinks: Vec<f64> },
}

impl fmt::Debug for GradientModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradientModel::NoClip { a } => f.debug_struct("NoClip").field("a", a).finish(),
            GradientModel::Clipped { a, c } => f
                .debug_struct("Clipped")
                .field("a", a)
                .field("c", c)
                .finish(),
            GradientModel::Logistic { bound } => {
                f.debug_struct("Logistic").field("bound", bound).finish()
            }
            GradientModel::Custom { kinks, .. } => f
                .debug_struct("Custom")
                .field("kinks", kinks)
                .finish_non_exhaustive(),
        }
    }
}

/// Whether to use the signed gap of one dataset pair or its magnitude, the
/// worst case over neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SensitivityMode {
    #[default]
    WorstCase,
    Instance,
}

#[derive(Debug, Clone)]
pub struct InitSensitivityModel {
    model: GradientModel,
    sigma: f64,
    mode: SensitivityMode,
}

impl InitSensitivityModel {
    pub fn new(model: GradientModel, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(
                "sigma",
                format!("{sigma} must be positive and finite"),
            ));
        }
        match &model {
            GradientModel::NoClip { a } if !a.is_finite() => {
                return Err(invalid("a", "must be finite"))
            }
            GradientModel::Clipped { a, c } => {
                if !a.is_finite() {
                    return Err(invalid("a", "must be finite"));
                }
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(invalid("c", format!("{c} must be nonnegative and finite")));
                }
            }
            GradientModel::Logistic { bound } if !(*bound > 0.0 && bound.is_finite()) => {
                return Err(invalid(
                    "bound",
                    format!("{bound} must be positive and finite"),
                ));
            }
            _ => {}
        }
        Ok(InitSensitivityModel {
            model,
            sigma,
            mode: SensitivityMode::default(),
        })
    }

    pub fn clipped(a: f64, c: f64, sigma: f64) -> Result<Self> {
        Self::new(GradientModel::Clipped { a, c }, sigma)
    }

    pub fn no_clip(a: f64, sigma: f64) -> Result<Self> {
        Self::new(GradientModel::NoClip { a }, sigma)
    }

    pub fn with_mode(mut self, mode: SensitivityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn model(&self) -> &GradientModel {
        &self.model
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mode(&self) -> SensitivityMode {
        self.mode
    }

    /// Normalized gap `μ_I` at initialization `init`.
    pub fn mu(&self, init: f64) -> f64 {
        let gap = match &self.model {
            GradientModel::NoClip { a } => a - init,
            GradientModel::Clipped { a, c } => (a - init).clamp(-c, *c),
            GradientModel::Logistic { bound } => 1.0 / (1.0 + (-bound * init.abs()).exp()),
            GradientModel::Custom { gap, .. } => gap(init),
        };
        let mu = gap / self.sigma;
        match self.mode {
            SensitivityMode::WorstCase => mu.abs(),
            SensitivityMode::Instance => mu,
        }
    }

    /// Initializations where the integrand is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.model {
            GradientModel::NoClip { a } => vec![*a],
            GradientModel::Clipped { a, c } => vec![a - c, *a, a + c],
            GradientModel::Logistic { .. } => vec![0.0],
            GradientModel::Custom { kinks, .. } => kinks.clone(),
        }
    }
}

/// Errors `(α, β)` of the conditional test `N(0,1)` against `N(μ,1)` at
/// log-threshold `t`, in the signed form. Both branches reduce to the
/// Gaussian curve of `|μ|`.
pub fn conditional_errors(mu: f64, t: f64) -> (f64, f64) {
    if mu == 0.0 {
        return if t >= 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
    }
    let t_init = -t / mu + mu / 2.0;
    if mu > 0.0 {
        (gaussian_sf(t_init), gaussian_cdf(t_init - mu))
    } else {
        (gaussian_cdf(t_init), gaussian_sf(t_init - mu))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureSpec {
    pub lo: f64,
    pub hi: f64,
    /// Absolute error target for each expectation.
    pub tolerance: f64,
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            lo: -8.5,
            hi: 8.5,
            tolerance: 1e-9,
            max_panels: 200_000,
        }
    }
}

/// Panels each kink-free piece starts with.
const INITIAL_PANELS: usize = 16;

impl QuadratureSpec {
    fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(invalid(
                "domain",
                format!("[{}, {}] is not a bounded interval", self.lo, self.hi),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid(
                "tolerance",
                format!("{} must be positive", self.tolerance),
            ));
        }
        if self.outside_mass() > self.tolerance / 10.0 {
            return Err(invalid(
                "domain",
                format!(
                    "Gaussian mass {:e} outside the domain exceeds a tenth of the tolerance",
                    self.outside_mass()
                ),
            ));
        }
        Ok(())
    }

    /// `P[I ∉ [lo, hi]]`.
    pub fn outside_mass(&self) -> f64 {
        gaussian_cdf(self.lo) + gaussian_sf(self.hi)
    }

    fn breakpoints(&self, kinks: &[f64]) -> Vec<f64> {
        let mut points = vec![self.lo, self.hi];
        points.extend(
            kinks
                .iter()
                .copied()
                .filter(|k| *k > self.lo && *k < self.hi),
        );
        points.sort_by(f64::total_cmp);
        points.dedup();
        points
    }

    /// `∫ f` over the domain for a pair-valued integrand, splitting at
    /// `kinks`. Returns both integrals and the error estimate.
    pub fn integrate_pair(
        &self,
        kinks: &[f64],
        f: impl Fn(f64) -> (f64, f64),
    ) -> Result<((f64, f64), f64)> {
        self.validate()?;
        let points = self.breakpoints(kinks);
        let pieces = (points.len() - 1) * INITIAL_PANELS;
        let mut stack: Vec<Panel> = Vec::new();
        for w in points.windows(2).rev() {
            let h = (w[1] - w[0]) / INITIAL_PANELS as f64;
            for j in (0..INITIAL_PANELS).rev() {
                let (a, b) = (
                    w[0] + h * j as f64,
                    if j + 1 == INITIAL_PANELS {
                        w[1]
                    } else {
                        w[0] + h * (j + 1) as f64
                    },
                );
                stack.push(Panel::new(
                    a,
                    b,
                    f(a),
                    f(0.5 * (a + b)),
                    f(b),
                    self.tolerance / pieces as f64,
                ));
            }
        }
        let (mut sum_a, mut sum_b, mut err) = (Kahan::default(), Kahan::default(), 0.0);
        let mut panels = 0usize;
        while let Some(p) = stack.pop() {
            panels += 1;
            if panels > self.max_panels {
                return Err(Error::NonConvergence {
                    what: "adaptive quadrature",
                    limit: self.max_panels,
                });
            }
            let m = 0.5 * (p.a + p.b);
            let (lm, rm) = (f(0.5 * (p.a + m)), f(0.5 * (m + p.b)));
            let left = Panel::new(p.a, m, p.fa, lm, p.fm, 0.5 * p.tol);
            let right = Panel::new(m, p.b, p.fm, rm, p.fb, 0.5 * p.tol);
            let gap = (left.s.0 + right.s.0 - p.s.0, left.s.1 + right.s.1 - p.s.1);
            let diff = gap.0.abs().max(gap.1.abs());
            if diff <= 15.0 * p.tol || (p.b - p.a) < 1e-12 {
                sum_a.add(left.s.0 + right.s.0 + gap.0 / 15.0);
                sum_b.add(left.s.1 + right.s.1 + gap.1 / 15.0);
                err += diff / 15.0;
            } else {
                stack.push(right);
                stack.push(left);
            }
        }
        Ok(((sum_a.value(), sum_b.value()), err))
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: (f64, f64),
    fm: (f64, f64),
    fb: (f64, f64),
    s: (f64, f64),
    tol: f64,
}

impl Panel {
    fn new(a: f64, b: f64, fa: (f64, f64), fm: (f64, f64), fb: (f64, f64), tol: f64) -> Self {
        let h = (b - a) / 6.0;
        let s = (
            h * (fa.0 + 4.0 * fm.0 + fb.0),
            h * (fa.1 + 4.0 * fm.1 + fb.1),
        );
        Panel {
            a,
            b,
            fa,
            fm,
            fb,
            s,
            tol,
        }
    }
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Default number of log-thresholds.
pub const DEFAULT_T_POINTS: usize = 201;
/// Default range `[-T, T]` of log-thresholds.
pub const DEFAULT_T_RANGE: f64 = 25.0;

/// `points` log-thresholds on `[-range, range]`, packed towards zero.
pub fn tanh_t_grid(points: usize, range: f64) -> Result<Vec<f64>> {
    if points < 2 || !(range > 0.0) {
        return Err(invalid(
            "t grid",
            "need at least 2 points and a positive range",
        ));
    }
    const STRETCH: f64 = 2.5;
    Ok((0..points)
        .map(|j| {
            let u = -1.0 + 2.0 * j as f64 / (points - 1) as f64;
            range * (STRETCH * u).tanh() / STRETCH.tanh()
        })
        .collect())
}

pub fn default_t_grid() -> Vec<f64> {
    tanh_t_grid(DEFAULT_T_POINTS, DEFAULT_T_RANGE).expect("default grid is valid")
}

/// One sample `(α(t), β(t))` of the averaged conditional tests.
pub fn dpgd_sample(
    model: &InitSensitivityModel,
    quad: &QuadratureSpec,
    t: f64,
) -> Result<ParametricSample> {
    let ((alpha, beta), err) = quad.integrate_pair(&model.kinks(), |init| {
        let (a, b) = conditional_errors(model.mu(init), t);
        let w = gaussian_pdf(init);
        (w * a, w * b)
    })?;
    let err = err + quad.outside_mass();
    Ok(ParametricSample {
        t,
        alpha: alpha.clamp(0.0, 1.0),
        beta: beta.clamp(0.0, 1.0),
        slope: -(-t).exp(),
        err,
    })
}

/// Samples along `t_grid` (ascending). Build the reported curve with
/// [`ParametricCurve::tangent_envelope`], which accounts for `err`.
pub fn dpgd_curve(
    model: &InitSensitivityModel,
    quad: &QuadratureSpec,
    t_grid: &[f64],
) -> Result<ParametricCurve> {
    if t_grid.is_empty()
        || t_grid.iter().any(|t| !t.is_finite())
        || t_grid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(invalid(
            "t grid",
            "must be finite, non-empty and sorted ascending",
        ));
    }
    let samples = t_grid
        .par_iter()
        .map(|&t| dpgd_sample(model, quad, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParametricCurve { samples })
}

/// The `c`-GDP curve that ignores the initialization.
pub fn gdp_baseline(c: f64) -> Result<GaussianTradeoff> {
    if !(c > 0.0) {
        return Err(invalid("c", format!("{c} must be positive")));
    }
    gdp_curve(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginRow {
    pub alpha: f64,
    pub f_init: f64,
    pub g_c: f64,
    pub margin: f64,
}

/// `f_init(α) - G_c(α)` for the clipped model. `f_init(α)` is the tangent
/// line through the sample whose `α(t)` is bisected onto `α`, lowered by the
/// sample's quadrature error, so positive margins are certified.
pub fn amplification_report(
    model: &InitSensitivityModel,
    quad: &QuadratureSpec,
    alphas: &[f64],
) -> Result<Vec<MarginRow>> {
    let GradientModel::Clipped { c, .. } = *model.model() else {
        return Err(invalid(
            "model",
            "the margin table compares a clipped model with its GDP baseline",
        ));
    };
    let baseline = gdp_baseline(c / model.sigma())?;
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(invalid("alpha", format!("{alpha} is not in (0, 1)")));
            }
            let s = sample_at_alpha(model, quad, alpha)?;
            let f_init =
                (s.beta + s.slope * (alpha - s.alpha) - s.err * (1.0 + s.slope.abs())).max(0.0);
            let g_c = baseline.evaluate(alpha)?;
            Ok(MarginRow {
                alpha,
                f_init,
                g_c,
                margin: f_init - g_c,
            })
        })
        .collect()
}

/// Bisection steps on `t` in [`sample_at_alpha`].
const ALPHA_BISECTION_STEPS: usize = 60;

/// The sample whose `α(t)` is closest to `alpha` from below.
pub fn sample_at_alpha(
    model: &InitSensitivityModel,
    quad: &QuadratureSpec,
    alpha: f64,
) -> Result<ParametricSample> {
    let (mut lo, mut hi) = (-DEFAULT_T_RANGE, DEFAULT_T_RANGE);
    let mut best = dpgd_sample(model, quad, lo)?;
    if best.alpha > alpha {
        return Ok(best);
    }
    for _ in 0..ALPHA_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let s = dpgd_sample(model, quad, mid)?;
        if s.alpha <= alpha {
            lo = mid;
            best = s;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// Monte Carlo estimate of one sample with its standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloSample {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_se: f64,
    pub beta_se: f64,
}

/// Averages the conditional errors over `draws` initializations, reusing
/// the same draws for every `t`.
pub fn monte_carlo_samples(
    model: &InitSensitivityModel,
    ts: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<MonteCarloSample>> {
    if draws < 2 {
        return Err(invalid("draws", "need at least 2 draws"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mus: Vec<f64> = (0..draws)
        .map(|_| {
            let init: f64 = StandardNormal.sample(&mut rng);
            model.mu(init)
        })
        .collect();
    let n = draws as f64;
    Ok(ts
        .par_iter()
        .map(|&t| {
            let (mut sa, mut sa2, mut sb, mut sb2) = (0.0, 0.0, 0.0, 0.0);
            for &mu in &mus {
                let (a, b) = conditional_errors(mu, t);
                sa += a;
                sa2 += a * a;
                sb += b;
                sb2 += b * b;
            }
            let (alpha, beta) = (sa / n, sb / n);
            let se = |s2: f64, m: f64| ((s2 / n - m * m).max(0.0) / (n - 1.0)).sqrt();
            MonteCarloSample {
                t,
                alpha,
                beta,
                alpha_se: se(sa2, alpha),
                beta_se: se(sb2, beta),
            }
        })
        .collect())
}

/// `N(0, s₀²)` against `N(0, s₁²)`. Without clipping the no-clip model's
/// outputs differ in variance, which this pair captures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleGaussianPair {
    pub null_sd: f64,
    pub alt_sd: f64,
}

impl ScaleGaussianPair {
    pub fn new(null_sd: f64, alt_sd: f64) -> Result<Self> {
        if !(null_sd > 0.0 && alt_sd > 0.0 && null_sd.is_finite() && alt_sd.is_finite()) {
            return Err(invalid(
                "sd",
                "standard deviations must be positive and finite",
            ));
        }
        Ok(ScaleGaussianPair { null_sd, alt_sd })
    }

    /// Errors of the test with rejection region `|x| ≥ r` (or `|x| ≤ r`
    /// when the alternative is narrower).
    fn errors_at_radius(&self, r: f64) -> (f64, f64) {
        let outside = |sd: f64| 2.0 * gaussian_sf(r / sd);
        if self.alt_sd > self.null_sd {
            (outside(self.null_sd), 1.0 - outside(self.alt_sd))
        } else {
            (1.0 - outside(self.null_sd), outside(self.alt_sd))
        }
    }

    /// Tangent discretization at `points` likelihood-ratio thresholds.
    pub fn to_curve(&self, points: usize, max_radius: f64) -> Result<PiecewiseLinearTradeoff> {
        if points < 2 || !(max_radius > 0.0) {
            return Err(invalid(
                "points",
                "need at least 2 points and a positive radius",
            ));
        }
        let ts: Vec<f64> = (0..points)
            .map(|j| self.ratio_at_radius(max_radius * j as f64 / (points - 1) as f64))
            .collect();
        let mut ts = ts;
        ts.sort_by(f64::total_cmp);
        let samples = ts
            .into_iter()
            .map(|t| {
                let (alpha, beta) = self.errors_at(t);
                ParametricSample {
                    t,
                    alpha,
                    beta,
                    slope: -t,
                    err: 0.0,
                }
            })
            .collect();
        ParametricCurve { samples }.tangent_envelope()
    }

    /// Likelihood ratio `q/p` at `|x| = r`.
    fn ratio_at_radius(&self, r: f64) -> f64 {
        let (s0, s1) = (self.null_sd, self.alt_sd);
        (s0 / s1) * (0.5 * r * r * (1.0 / (s0 * s0) - 1.0 / (s1 * s1))).exp()
    }
}

impl LikelihoodRatioTest for ScaleGaussianPair {
    fn errors_at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0);
        }
        if self.null_sd == self.alt_sd {
            return if t <= 1.0 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        let (s0, s1) = (self.null_sd, self.alt_sd);
        let r2 = 2.0 * (t * s1 / s0).ln() / (1.0 / (s0 * s0) - 1.0 / (s1 * s1));
        if r2 <= 0.0 {
            // The threshold is met everywhere (wider alternative) or nowhere.
            return if s1 > s0 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        self.errors_at_radius(r2.sqrt())
    }

    fn breakpoints(&self) -> Option<Vec<f64>> {
        None
    }
}
