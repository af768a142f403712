//! Trade-off curves: exact piecewise-linear representation and the algebra
//! on top of it (conjugate, left inverse, symmetrization, (ε, δ) and
//! F-divergence conversion), plus the Gaussian family as a closed form.
//!
//! Orientation: `alpha` is the type I error under the null `P`, `beta` the
//! type II error under the alternative `Q`. Segment slopes are `-q/p` of the
//! likelihood-ratio region that the segment rejects.

use std::io::{BufRead, Write};

use crate::error::{ensure_probability, invalid, Error, Result};
use crate::numeric::{gaussian_cdf, gaussian_quantile, gaussian_sf};

/// Knots whose alphas agree to this relative precision are merged.
pub const KNOT_MERGE_TOL: f64 = 1e-15;
/// Slack allowed by the validator for rounding in computed knots.
pub const VALIDATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Knot {
    pub alpha: f64,
    pub beta: f64,
}

impl Knot {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Knot { alpha, beta }
    }
}

/// A convex, non-increasing trade-off curve given by its vertices.
///
/// The first knot sits at `alpha = 0` (its beta may be below one when the
/// alternative has mass the null cannot produce), the last knot has
/// `beta = 0`, and the curve is zero to the right of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearTradeoff {
    knots: Vec<Knot>,
}

impl PiecewiseLinearTradeoff {
    /// Builds a curve from knots sorted by alpha, merging near-duplicate
    /// alphas and validating every invariant.
    pub fn from_knots(knots: Vec<Knot>) -> Result<Self> {
        let curve = PiecewiseLinearTradeoff {
            knots: merge_close_knots(knots),
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Like [`from_knots`](Self::from_knots) but snaps values within the
    /// validation slack onto the unit square and drops knots that lie on
    /// the chord of their neighbours.
    pub fn from_knots_tidy(knots: Vec<Knot>) -> Result<Self> {
        let mut knots: Vec<Knot> = knots
            .into_iter()
            .map(|k| Knot::new(k.alpha.clamp(0.0, 1.0), k.beta.clamp(0.0, 1.0)))
            .collect();
        if let Some(first) = knots.first_mut() {
            if first.alpha <= VALIDATION_TOL {
                first.alpha = 0.0;
            }
        }
        if let Some(last) = knots.last_mut() {
            if last.beta <= VALIDATION_TOL {
                last.beta = 0.0;
            }
        }
        if let Some(first_zero) = knots.iter().position(|k| k.beta == 0.0) {
            knots.truncate(first_zero + 1);
        }
        // Rounding near β = 1 can leave ulp-sized dents; the hull removes them.
        // Equal alphas are merged first: hull cross products of subnormal
        // steps underflow to zero and would drop the lower knot.
        let knots = merge_close_knots(knots);
        let knots = drop_collinear(merge_close_knots(lower_hull(&knots)));
        Self::from_knots(knots)
    }

    pub fn identity() -> Self {
        PiecewiseLinearTradeoff {
            knots: vec![Knot::new(0.0, 1.0), Knot::new(1.0, 0.0)],
        }
    }

    /// The curve of perfectly distinguishable distributions.
    pub fn zero() -> Self {
        PiecewiseLinearTradeoff {
            knots: vec![Knot::new(0.0, 0.0)],
        }
    }

    /// `max(0, 1 - e^ε α, e^{-ε}(1 - α))`.
    pub fn pure_dp(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon", format!("{epsilon} is negative")));
        }
        if epsilon.is_infinite() {
            return Ok(Self::zero());
        }
        let corner = 1.0 / (1.0 + epsilon.exp());
        Self::from_knots(vec![
            Knot::new(0.0, 1.0),
            Knot::new(corner, corner),
            Knot::new(1.0, 0.0),
        ])
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn into_knots(self) -> Vec<Knot> {
        self.knots
    }

    /// Slopes of the segments between consecutive knots.
    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .map(|w| (w[1].beta - w[0].beta) / (w[1].alpha - w[0].alpha))
            .collect()
    }

    /// Knots followed by `(1, 0)` when the curve reaches zero before
    /// `alpha = 1`, so the whole domain is covered by segments.
    fn full_domain_knots(&self) -> Vec<Knot> {
        let mut knots = self.knots.clone();
        if knots.last().is_some_and(|k| k.alpha < 1.0) {
            knots.push(Knot::new(1.0, 0.0));
        }
        knots
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        let bad = |msg: String| Err(Error::InvalidCurve(msg));
        let Some(first) = k.first() else {
            return bad("no knots".into());
        };
        if first.alpha != 0.0 {
            return bad(format!("first knot has alpha {} instead of 0", first.alpha));
        }
        let last = k[k.len() - 1];
        if last.beta != 0.0 {
            return bad(format!("last knot has beta {} instead of 0", last.beta));
        }
        for (i, knot) in k.iter().enumerate() {
            if !(knot.alpha.is_finite() && knot.beta.is_finite()) {
                return bad(format!("knot {i} is not finite"));
            }
            if !(0.0..=1.0).contains(&knot.alpha) || !(0.0..=1.0).contains(&knot.beta) {
                return bad(format!(
                    "knot {i} ({}, {}) leaves the unit square",
                    knot.alpha, knot.beta
                ));
            }
            if knot.beta > 1.0 - knot.alpha + VALIDATION_TOL {
                return bad(format!(
                    "knot {i} ({}, {}) lies above the identity",
                    knot.alpha, knot.beta
                ));
            }
        }
        for (i, w) in k.windows(2).enumerate() {
            if w[1].alpha <= w[0].alpha {
                return bad(format!("alphas not strictly increasing at knot {}", i + 1));
            }
            if w[1].beta > w[0].beta {
                return bad(format!("beta increases at knot {}", i + 1));
            }
        }
        for (i, w) in k.windows(3).enumerate() {
            let chord = w[0].beta
                + (w[2].beta - w[0].beta) * (w[1].alpha - w[0].alpha) / (w[2].alpha - w[0].alpha);
            if w[1].beta > chord + VALIDATION_TOL {
                return bad(format!(
                    "not convex at knot {}: {} above chord value {chord}",
                    i + 1,
                    w[1].beta
                ));
            }
        }
        Ok(())
    }

    /// Value at `alpha`; linear between knots and zero past the last knot.
    pub fn evaluate(&self, alpha: f64) -> Result<f64> {
        ensure_probability("alpha", alpha)?;
        Ok(self.eval_unchecked(alpha))
    }

    pub(crate) fn eval_unchecked(&self, alpha: f64) -> f64 {
        let k = &self.knots;
        let idx = k.partition_point(|knot| knot.alpha <= alpha);
        if idx == 0 {
            return k[0].beta;
        }
        if idx == k.len() {
            return if alpha == k[idx - 1].alpha {
                k[idx - 1].beta
            } else {
                0.0
            };
        }
        let (a, b) = (k[idx - 1], k[idx]);
        let frac = (alpha - a.alpha) / (b.alpha - a.alpha);
        a.beta + frac * (b.beta - a.beta)
    }

    /// Left inverse `f⁻¹(y) = inf{x : f(x) ≤ y}`: the same vertices with
    /// coordinates swapped.
    pub fn left_inverse(&self) -> Result<Self> {
        let mut knots: Vec<Knot> = self
            .knots
            .iter()
            .rev()
            .map(|k| Knot::new(k.beta, k.alpha))
            .collect();
        // The zero tail of `self` becomes a jump at 0; the tail beyond the
        // old f(0) is implied by the zero convention.
        if knots[0].alpha != 0.0 {
            knots.insert(
                0,
                Knot::new(0.0, self.knots.last().map_or(0.0, |k| k.alpha)),
            );
        }
        if knots.last().is_some_and(|k| k.beta != 0.0) {
            let a = knots.last().unwrap().alpha;
            knots.push(Knot::new(a.max(f64::MIN_POSITIVE), 0.0));
        }
        Self::from_knots(knots)
    }

    pub fn conjugate(&self) -> Conjugate {
        Conjugate::of_convex(&self.full_domain_knots())
    }

    /// `δ(ε) = 1 + f*(-e^ε)`, the largest gap `1 - β - e^ε α` over knots.
    pub fn to_epsilon_delta(&self, epsilon: f64) -> Result<f64> {
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon", format!("{epsilon} is negative")));
        }
        Ok(self.delta_at_gamma(epsilon.exp()))
    }

    /// `1 + f*(-γ)` for any `γ ≥ 0`, clamped to `[0, 1]`.
    pub fn delta_at_gamma(&self, gamma: f64) -> f64 {
        self.knots
            .iter()
            .map(|k| (1.0 - k.beta) - gamma * k.alpha)
            .fold(0.0_f64, f64::max)
            .min(1.0)
    }

    /// Smallest ε ≥ 0 with `δ(ε) ≤ delta`.
    ///
    /// δ(ε) is the maximum of lines `1 - β_k - γ α_k` in `γ = e^ε`, so the
    /// crossing point is `max_k (1 - β_k - δ) / α_k` and no search is needed.
    pub fn invert_epsilon(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("{delta} is not in (0, 1)")));
        }
        let at_zero = self.delta_at_gamma(1.0);
        if at_zero <= delta {
            return Err(Error::AlreadySatisfied {
                delta_at_zero: at_zero,
            });
        }
        let floor = 1.0 - self.knots[0].beta;
        if floor > delta {
            return Err(Error::Unattainable {
                target: delta,
                floor,
            });
        }
        let gamma = self
            .knots
            .iter()
            .filter(|k| k.alpha > 0.0)
            .map(|k| ((1.0 - k.beta) - delta) / k.alpha)
            .fold(1.0_f64, f64::max);
        Ok(gamma.ln())
    }

    /// Symmetric curve lying below `max{f, f⁻¹}`.
    ///
    /// When slope −1 first becomes a subgradient at `x̄ ≤ f(x̄)` this is the
    /// three-branch curve: `f` on `[0, x̄]`, the slope −1 chord, then `f⁻¹`,
    /// built from the original knots; when `f(0) = 1` and `f > 0` on `[0, 1)` it
    /// equals `min{f, f⁻¹}**`. Otherwise the result is `min{f, f⁻¹}**` computed as
    /// the convex hull of the pointwise minimum.
    pub fn symmetrize(&self) -> Result<Self> {
        let knots = self.full_domain_knots();
        let mut cut = knots.len() - 1;
        for i in 0..knots.len() - 1 {
            let s = (knots[i + 1].beta - knots[i].beta) / (knots[i + 1].alpha - knots[i].alpha);
            if s >= -1.0 {
                cut = i;
                break;
            }
        }
        let pivot = knots[cut];
        if pivot.alpha > pivot.beta {
            return self.hull_of_min_with_inverse();
        }
        let mut out: Vec<Knot> = knots[..=cut].to_vec();
        out.extend(
            knots[..=cut]
                .iter()
                .rev()
                .map(|k| Knot::new(k.beta, k.alpha)),
        );
        Self::from_knots_tidy(out)
    }

    fn hull_of_min_with_inverse(&self) -> Result<Self> {
        let inv = self.left_inverse()?;
        let mut alphas: Vec<f64> = self
            .full_domain_knots()
            .iter()
            .chain(inv.full_domain_knots().iter())
            .map(|k| k.alpha)
            .collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let gap = |a: f64| self.eval_unchecked(a) - inv.eval_unchecked(a);
        let mut points = Vec::with_capacity(2 * alphas.len());
        for w in alphas.windows(2) {
            points.push(w[0]);
            let (g0, g1) = (gap(w[0]), gap(w[1]));
            if g0 * g1 < 0.0 {
                // Both curves are linear here, so the gap is too.
                points.push(w[0] + (w[1] - w[0]) * g0 / (g0 - g1));
            }
        }
        points.extend(alphas.last());
        let mins: Vec<Knot> = points
            .into_iter()
            .map(|a| Knot::new(a, self.eval_unchecked(a).min(inv.eval_unchecked(a))))
            .collect();
        Self::from_knots_tidy(lower_hull(&mins))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        match self.left_inverse() {
            Ok(inv) => self.max_abs_difference(&inv) <= tol,
            Err(_) => false,
        }
    }

    /// Largest `|f(α) - g(α)|` over the knots of both curves (exact for
    /// piecewise-linear curves).
    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        self.knots
            .iter()
            .chain(other.knots.iter())
            .map(|k| (self.eval_unchecked(k.alpha) - other.eval_unchecked(k.alpha)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest amount by which `other` exceeds `self` at any knot of either.
    pub fn max_excess_of(&self, other: &Self) -> f64 {
        self.knots
            .iter()
            .chain(other.knots.iter())
            .map(|k| other.eval_unchecked(k.alpha) - self.eval_unchecked(k.alpha))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `l_F(f)`: the F-divergence of any pair whose trade-off curve is `f`.
    ///
    /// Each segment rejects a region with `p/q = 1/|s|` and null mass
    /// `Δα`; the jump at `alpha = 0` is alternative-only mass and the zero
    /// tail past `z_f` is null-only mass.
    pub fn f_divergence(&self, generator: &dyn DivergenceGenerator) -> Result<f64> {
        let mut total = generator.at_zero() * (1.0 - self.knots[0].beta);
        for w in self.knots.windows(2) {
            let d_alpha = w[1].alpha - w[0].alpha;
            let d_beta = w[0].beta - w[1].beta;
            if d_beta <= 0.0 {
                continue;
            }
            let q_over_p = d_beta / d_alpha;
            total += generator.value(1.0 / q_over_p) * d_beta;
        }
        let null_only = 1.0 - self.knots.last().map_or(0.0, |k| k.alpha);
        if null_only > 0.0 {
            let tau = generator.slope_at_infinity();
            if tau.is_infinite() {
                return Err(Error::Divergent(format!(
                    "null-only mass {null_only:e} meets an infinite slope at infinity"
                )));
            }
            total += tau * null_only;
        }
        Ok(total)
    }

    /// Pointwise `Σ w_i f_i(α)` on the union of the knot sets.
    pub fn convex_combination(parts: &[(f64, &PiecewiseLinearTradeoff)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("parts", "empty combination"));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > 1e-9 || parts.iter().any(|p| !(p.0 >= 0.0)) {
            return Err(invalid(
                "weights",
                format!("must be nonnegative and sum to 1, got {total}"),
            ));
        }
        let mut alphas: Vec<f64> = parts
            .iter()
            .flat_map(|p| p.1.knots.iter().map(|k| k.alpha))
            .collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let knots = alphas
            .into_iter()
            .map(|a| Knot::new(a, parts.iter().map(|(w, f)| w * f.eval_unchecked(a)).sum()))
            .collect();
        Self::from_knots_tidy(knots)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alpha,beta")?;
        for k in &self.knots {
            writeln!(out, "{},{}", fmt_17(k.alpha), fmt_17(k.beta))?;
        }
        Ok(())
    }

    /// Reads the `alpha,beta` CSV format; `#` lines are metadata.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut knots = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| invalid("csv", e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "alpha,beta" {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| invalid("csv", format!("line {}: expected two numbers", n + 1)))
            };
            knots.push(Knot::new(next()?, next()?));
        }
        Self::from_knots(knots)
    }
}

/// Canonical 17-significant-digit rendering used by every output format.
pub fn fmt_17(x: f64) -> String {
    format!("{x:.16e}")
}

fn merge_close_knots(knots: Vec<Knot>) -> Vec<Knot> {
    let mut out: Vec<Knot> = Vec::with_capacity(knots.len());
    for k in knots {
        match out.last_mut() {
            Some(prev)
                if (k.alpha - prev.alpha).abs()
                    <= KNOT_MERGE_TOL * k.alpha.abs().max(prev.alpha.abs()) =>
            {
                if k.beta < prev.beta {
                    // A knot at alpha = 0 keeps its position.
                    let alpha = if prev.alpha == 0.0 { 0.0 } else { k.alpha };
                    *prev = Knot::new(alpha, k.beta);
                }
            }
            _ => out.push(k),
        }
    }
    out
}

fn drop_collinear(knots: Vec<Knot>) -> Vec<Knot> {
    if knots.len() < 3 {
        return knots;
    }
    let mut out: Vec<Knot> = Vec::with_capacity(knots.len());
    for k in knots {
        while out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let cross =
                (b.alpha - a.alpha) * (k.beta - a.beta) - (b.beta - a.beta) * (k.alpha - a.alpha);
            let scale = (k.alpha - a.alpha).abs() * (a.beta - k.beta).abs();
            if cross.abs() <= 1e-15 * scale {
                out.pop();
            } else {
                break;
            }
        }
        out.push(k);
    }
    out
}

/// Lower convex hull of points sorted by alpha (Andrew's monotone chain).
pub(crate) fn lower_hull(points: &[Knot]) -> Vec<Knot> {
    let mut hull: Vec<Knot> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross =
                (b.alpha - a.alpha) * (p.beta - a.beta) - (b.beta - a.beta) * (p.alpha - a.alpha);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Exact conjugate `g*(y) = max_x {x y - g(x)}` of a convex piecewise-linear
/// function given by its vertices. On the slope interval between two
/// consecutive primal slopes it is the line `x_k y - g(x_k)`.
#[derive(Debug, Clone)]
pub struct Conjugate {
    vertices: Vec<Knot>,
    /// `breaks[k]` is the primal slope left of vertex `k + 1`.
    breaks: Vec<f64>,
}

impl Conjugate {
    fn of_convex(vertices: &[Knot]) -> Self {
        let breaks = vertices
            .windows(2)
            .map(|w| (w[1].beta - w[0].beta) / (w[1].alpha - w[0].alpha))
            .collect();
        Conjugate {
            vertices: vertices.to_vec(),
            breaks,
        }
    }

    pub fn evaluate(&self, y: f64) -> f64 {
        let k = self.breaks.partition_point(|&s| s < y);
        let v = self.vertices[k];
        v.alpha * y - v.beta
    }

    /// Recovers the primal function by conjugating again, evaluated at the
    /// conjugate's own breakpoints: `f**(x) = max_j (x y_j - f*(y_j))`.
    pub fn conjugate_at(&self, x: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        // Between breakpoints f* is linear, so the supremum over y sits at a
        // breakpoint or escapes to ±∞ (domain ends).
        for &y in &self.breaks {
            best = best.max(x * y - self.evaluate(y));
        }
        let lo = self.vertices[0].alpha;
        let hi = self.vertices[self.vertices.len() - 1].alpha;
        if x < lo || x > hi {
            return f64::INFINITY;
        }
        if self.breaks.is_empty() {
            return self.vertices[0].beta;
        }
        best
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }
}

/// A convex generator `F` of an F-divergence `∫ F(p/q) dQ`.
pub trait DivergenceGenerator {
    fn value(&self, s: f64) -> f64;
    /// `F(0) = lim_{s→0+} F(s)`.
    fn at_zero(&self) -> f64;
    /// `τ_F = lim_{s→∞} F(s)/s`.
    fn slope_at_infinity(&self) -> f64;
}

/// `F(s) = (s - γ)₊`, giving the hockey-stick divergence `H_γ`.
#[derive(Debug, Clone, Copy)]
pub struct HockeyStick {
    pub gamma: f64,
}

impl DivergenceGenerator for HockeyStick {
    fn value(&self, s: f64) -> f64 {
        (s - self.gamma).max(0.0)
    }
    fn at_zero(&self) -> f64 {
        0.0
    }
    fn slope_at_infinity(&self) -> f64 {
        1.0
    }
}

/// `F(s) = (s^a - a(s - 1) - 1) / (a(a - 1))` for order `a > 1`. Its
/// divergence is `(e^{(a-1) R_a} - 1) / (a(a - 1))` with `R_a` the Rényi
/// divergence of order `a`.
#[derive(Debug, Clone, Copy)]
pub struct PowerDivergence {
    pub order: f64,
}

impl PowerDivergence {
    /// `E_Q[(p/q)^a] = e^{(a-1) R_a}` from the divergence value.
    pub fn moment_from_divergence(&self, d: f64) -> f64 {
        let a = self.order;
        a * (a - 1.0) * d + 1.0
    }
}

impl DivergenceGenerator for PowerDivergence {
    fn value(&self, s: f64) -> f64 {
        let a = self.order;
        (s.powf(a) - a * (s - 1.0) - 1.0) / (a * (a - 1.0))
    }
    fn at_zero(&self) -> f64 {
        1.0 / self.order
    }
    fn slope_at_infinity(&self) -> f64 {
        f64::INFINITY
    }
}

/// Errors of the most powerful test that rejects when `q/p ≥ t`, ties
/// rejected (randomization `c = 1`). The point `(α(t), β(t))` is a vertex
/// of the curve where slope `-t` is a subgradient.
pub trait LikelihoodRatioTest: Send + Sync {
    fn errors_at(&self, t: f64) -> (f64, f64);

    /// Ratios `q/p` at which the curve bends, when there are finitely many.
    fn breakpoints(&self) -> Option<Vec<f64>>;
}

impl LikelihoodRatioTest for PiecewiseLinearTradeoff {
    fn errors_at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0);
        }
        // Segments with |slope| ≥ t form a prefix.
        let mut end = 0;
        for w in self.knots.windows(2) {
            let q_over_p = (w[0].beta - w[1].beta) / (w[1].alpha - w[0].alpha);
            if q_over_p >= t {
                end += 1;
            } else {
                break;
            }
        }
        let k = self.knots[end];
        (k.alpha, k.beta)
    }

    fn breakpoints(&self) -> Option<Vec<f64>> {
        Some(
            self.slopes()
                .into_iter()
                .map(|s| -s)
                .chain(std::iter::once(0.0))
                .collect(),
        )
    }
}

/// How a continuous curve was turned into knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    /// Chords between points on the curve: an upper bound (overstates privacy).
    Chord,
    /// Supporting lines at points on the curve: a lower bound (conservative).
    Tangent,
}

#[derive(Debug, Clone)]
pub struct Discretized {
    pub curve: PiecewiseLinearTradeoff,
    pub envelope: Envelope,
}

/// `G_μ(α) = Φ(Φ⁻¹(1 - α) - μ)`, the curve of `N(0,1)` against `N(μ,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTradeoff {
    mu: f64,
}

/// Constructs `G_μ`; `μ = 0` is the identity.
pub fn gdp_curve(mu: f64) -> Result<GaussianTradeoff> {
    if !(mu >= 0.0) || mu.is_infinite() {
        return Err(invalid(
            "mu",
            format!("{mu} is not a finite nonnegative number"),
        ));
    }
    Ok(GaussianTradeoff { mu })
}

impl GaussianTradeoff {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn evaluate(&self, alpha: f64) -> Result<f64> {
        ensure_probability("alpha", alpha)?;
        Ok(self.eval_unchecked(alpha))
    }

    fn eval_unchecked(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return 1.0;
        }
        if alpha >= 1.0 {
            return 0.0;
        }
        // Φ⁻¹(1 - α) = -Φ⁻¹(α) avoids rounding 1 - α for small α.
        let z = -gaussian_quantile(alpha).expect("alpha in (0,1)");
        gaussian_cdf(z - self.mu)
    }

    /// `G_μ'(α) = -exp(μ z - μ²/2)` with `z = Φ⁻¹(1 - α)`.
    pub fn derivative(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("{alpha} is not in (0, 1)")));
        }
        let z = -gaussian_quantile(alpha)?;
        Ok(-(self.mu * z - 0.5 * self.mu * self.mu).exp())
    }

    /// Point of the curve where the slope is `-e^z`.
    pub fn point_at_log_ratio(&self, z: f64) -> Knot {
        let (a, b) = self.errors_at(z.exp());
        Knot::new(a, b)
    }

    /// Discretizes at the points with slopes `-e^z` for `z` in `log_ratios`.
    pub fn to_knots(&self, log_ratios: &[f64], envelope: Envelope) -> Result<Discretized> {
        let points: Vec<TangentPoint> = log_ratios
            .iter()
            .map(|&z| {
                let k = self.point_at_log_ratio(z);
                TangentPoint {
                    alpha: k.alpha,
                    beta: k.beta,
                    slope: -z.exp(),
                    err: 0.0,
                }
            })
            .collect();
        let curve = match envelope {
            Envelope::Tangent => tangent_envelope(&points)?,
            Envelope::Chord => chord_curve(&points, 1.0)?,
        };
        Ok(Discretized { curve, envelope })
    }

    /// Symmetric log-ratio grid with `n` points on `[-span, span]`.
    pub fn default_log_ratios(&self, n: usize) -> Vec<f64> {
        let span = 2.0 + 8.0 * self.mu.max(0.5) + 0.5 * self.mu * self.mu;
        (0..n)
            .map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64)
            .collect()
    }
}

impl LikelihoodRatioTest for GaussianTradeoff {
    fn errors_at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0);
        }
        if t.is_infinite() {
            return (0.0, 1.0);
        }
        let mu = self.mu;
        if mu == 0.0 {
            return if t <= 1.0 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        // q/p = exp(μx - μ²/2) ≥ t  ⇔  x ≥ ln t / μ + μ/2.
        let cut = t.ln() / mu + 0.5 * mu;
        (gaussian_sf(cut), gaussian_cdf(cut - mu))
    }

    fn breakpoints(&self) -> Option<Vec<f64>> {
        None
    }
}

/// A point on a convex curve with a subgradient there and an absolute error
/// bound on both coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TangentPoint {
    pub alpha: f64,
    pub beta: f64,
    pub slope: f64,
    pub err: f64,
}

/// Lower envelope built from supporting lines. Each line is lowered by the
/// point's error budget so the result stays below the true curve.
pub fn tangent_envelope(points: &[TangentPoint]) -> Result<PiecewiseLinearTradeoff> {
    // (slope, intercept) of each line y = intercept + slope * x.
    let mut lines: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.slope.is_finite() && p.slope <= 0.0)
        .map(|p| {
            let intercept = p.beta - p.slope * p.alpha - p.err * (1.0 + p.slope.abs());
            (p.slope, intercept)
        })
        .collect();
    lines.push((0.0, 0.0));
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    lines.dedup_by(|next, kept| next.0 == kept.0);

    // Upper hull of lines over x ∈ [0, 1], slopes ascending.
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    let cross = |l1: (f64, f64), l2: (f64, f64)| (l1.1 - l2.1) / (l2.0 - l1.0);
    for line in lines {
        while let Some(&top) = hull.last() {
            // Drop lines that never win on x ≥ 0.
            if line.1 >= top.1 {
                hull.pop();
                continue;
            }
            if hull.len() >= 2 {
                let below = hull[hull.len() - 2];
                if cross(below, line) <= cross(below, top) {
                    hull.pop();
                    continue;
                }
            }
            break;
        }
        hull.push(line);
    }
    let mut knots = vec![Knot::new(0.0, hull[0].1.min(1.0))];
    for w in hull.windows(2) {
        let x = cross(w[0], w[1]);
        if x <= 0.0 {
            continue;
        }
        if x >= 1.0 {
            break;
        }
        knots.push(Knot::new(x, w[0].1 + w[0].0 * x));
    }
    let last = knots.last().copied().unwrap();
    if last.beta > 0.0 {
        // The zero line always closes the hull before x = 1 for valid inputs;
        // guard the degenerate case of a curve touching zero only at 1.
        knots.push(Knot::new(1.0, 0.0));
    }
    // Rounding in the intersections can leave dents of a few ulp times the
    // steepest slope; the hull removes them and only lowers the curve.
    PiecewiseLinearTradeoff::from_knots_tidy(lower_hull(&knots))
}

/// Chords through the given points, anchored at `(0, start)` and `(1, 0)`.
pub fn chord_curve(points: &[TangentPoint], start: f64) -> Result<PiecewiseLinearTradeoff> {
    let mut knots: Vec<Knot> = points.iter().map(|p| Knot::new(p.alpha, p.beta)).collect();
    knots.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    knots.insert(0, Knot::new(0.0, start));
    knots.push(Knot::new(1.0, 0.0));
    PiecewiseLinearTradeoff::from_knots_tidy(knots)
}

/// Samples `(t, α(t), β(t))` of a curve parameterized by a test threshold,
/// with the slope of the curve at each sample and an error bound.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ParametricCurve {
    pub samples: Vec<ParametricSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ParametricSample {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Subgradient of the curve at this sample.
    pub slope: f64,
    pub err: f64,
}

impl ParametricCurve {
    pub fn max_err(&self) -> f64 {
        self.samples.iter().map(|s| s.err).fold(0.0, f64::max)
    }

    /// Conservative curve: supporting lines lowered by each sample's error.
    pub fn tangent_envelope(&self) -> Result<PiecewiseLinearTradeoff> {
        let points: Vec<TangentPoint> = self
            .samples
            .iter()
            .map(|s| TangentPoint {
                alpha: s.alpha,
                beta: s.beta,
                slope: s.slope,
                err: s.err,
            })
            .collect();
        tangent_envelope(&points)
    }

    /// Chords through the samples. Exact when the samples contain every
    /// vertex of a piecewise-linear curve, an upper bound otherwise.
    pub fn chord_curve(&self) -> Result<PiecewiseLinearTradeoff> {
        let mut knots: Vec<Knot> = self
            .samples
            .iter()
            .map(|s| Knot::new(s.alpha, s.beta))
            .collect();
        knots.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(b.beta.total_cmp(&a.beta)));
        if knots.first().is_some_and(|k| k.alpha > 0.0) {
            knots.insert(0, Knot::new(0.0, 1.0));
        }
        if knots.last().is_some_and(|k| k.beta > 0.0) {
            knots.push(Knot::new(1.0, 0.0));
        }
        // Samples sharing an alpha keep the lowest beta; beta past the first
        // zero is dropped so the last knot is the first zero.
        let mut out: Vec<Knot> = Vec::with_capacity(knots.len());
        for k in knots {
            if out.last().is_some_and(|p: &Knot| p.beta == 0.0) {
                break;
            }
            out.push(k);
        }
        PiecewiseLinearTradeoff::from_knots_tidy(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,alpha,beta,err")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_17(s.t),
                fmt_17(s.alpha),
                fmt_17(s.beta),
                fmt_17(s.err)
            )?;
        }
        Ok(())
    }
}
