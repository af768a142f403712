//! Lower bounds on the trade-off curve of a mixture from its components.
//!
//! Joint concavity: revealing the component index can only help a tester,
//! and the indexed pair's curve is traced by running every component's
//! likelihood-ratio test at a shared threshold and averaging the errors.
//! Advanced joint concavity sharpens this for two components using the
//! cross curves `T(P_i, Q_j)`. Those cross curves cannot be derived from
//! the diagonal ones and must be supplied.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::oracle::DiscretePair;
use crate::tradeoff::{
    DivergenceGenerator, HockeyStick, Knot, LikelihoodRatioTest, ParametricCurve, ParametricSample,
    PiecewiseLinearTradeoff, PowerDivergence,
};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// One mixture component: its weight and likelihood-ratio test errors.
#[derive(Clone)]
pub struct ComponentCurve {
    pub weight: f64,
    pub test: Arc<dyn LikelihoodRatioTest>,
}

impl ComponentCurve {
    pub fn new(weight: f64, test: impl LikelihoodRatioTest + 'static) -> Self {
        ComponentCurve {
            weight,
            test: Arc::new(test),
        }
    }
}

impl std::fmt::Debug for ComponentCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComponentCurve")
            .field("weight", &self.weight)
            .finish_non_exhaustive()
    }
}

fn check_weights(weights: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(invalid("weights", format!("{w} is not a probability")));
        }
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(invalid("weights", format!("sum to {total}")));
    }
    Ok(())
}

/// Averaged test errors `(Σ wᵢ αᵢ(t), Σ wᵢ βᵢ(t))` at each threshold `t` on
/// `q/p`. Every sample is a vertex of the indexed pair's curve with
/// subgradient `-t`.
pub fn joint_concavity(
    components: &[ComponentCurve],
    thresholds: &[f64],
) -> Result<ParametricCurve> {
    if components.is_empty() {
        return Err(invalid("components", "empty mixture"));
    }
    check_weights(components.iter().map(|c| c.weight))?;
    if thresholds.iter().any(|t| !(*t >= 0.0)) || thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid(
            "thresholds",
            "must be nonnegative and sorted ascending",
        ));
    }
    let samples = thresholds
        .par_iter()
        .map(|&t| {
            let (mut alpha, mut beta) = (0.0, 0.0);
            for c in components {
                let (a, b) = c.test.errors_at(t);
                alpha += c.weight * a;
                beta += c.weight * b;
            }
            ParametricSample {
                t,
                alpha,
                beta,
                slope: -t,
                err: 0.0,
            }
        })
        .collect();
    Ok(ParametricCurve { samples })
}

/// The indexed pair's curve exactly, when every component has finitely many
/// breakpoints: chords between the samples at all breakpoints.
pub fn joint_concavity_exact(components: &[ComponentCurve]) -> Result<PiecewiseLinearTradeoff> {
    let mut thresholds = vec![0.0, f64::INFINITY];
    for c in components {
        let Some(b) = c.test.breakpoints() else {
            return Err(invalid(
                "components",
                "a component has no finite breakpoint set",
            ));
        };
        thresholds.extend(b);
    }
    thresholds.retain(|t| !t.is_nan());
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    joint_concavity(components, &thresholds)?.chord_curve()
}

/// Coupling of the weight vectors `w_p` (rows) and `w_q` (columns) that puts
/// `min(w_pᵢ, w_qᵢ)` on the diagonal and spreads the residuals
/// north-west-corner style.
pub fn diagonal_coupling(w_p: &[f64], w_q: &[f64]) -> Result<Vec<Vec<f64>>> {
    if w_p.len() != w_q.len() || w_p.is_empty() {
        return Err(invalid(
            "weights",
            "need two weight vectors of equal nonzero length",
        ));
    }
    check_weights(w_p.iter().copied())?;
    check_weights(w_q.iter().copied())?;
    let m = w_p.len();
    let mut plan = vec![vec![0.0; m]; m];
    let mut row_left: Vec<f64> = Vec::with_capacity(m);
    let mut col_left: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let d = w_p[i].min(w_q[i]);
        plan[i][i] = d;
        row_left.push(w_p[i] - d);
        col_left.push(w_q[i] - d);
    }
    let (mut i, mut j) = (0, 0);
    while i < m && j < m {
        if row_left[i] <= 0.0 {
            i += 1;
            continue;
        }
        if col_left[j] <= 0.0 {
            j += 1;
            continue;
        }
        let moved = row_left[i].min(col_left[j]);
        plan[i][j] += moved;
        row_left[i] -= moved;
        col_left[j] -= moved;
    }
    Ok(plan)
}

/// Lower bound for `T(Σ w_pᵢ Pᵢ, Σ w_qᵢ Qᵢ)` by joint concavity over the
/// coupling from [`diagonal_coupling`]. `cross[i][j]` is `T(Pᵢ, Qⱼ)`. With
/// two components this is the known two-weight bound; more components use
/// the same coupling construction.
pub fn joint_concavity_diff_weights(
    cross: &[Vec<Arc<dyn LikelihoodRatioTest>>],
    w_p: &[f64],
    w_q: &[f64],
    thresholds: &[f64],
) -> Result<ParametricCurve> {
    let plan = diagonal_coupling(w_p, w_q)?;
    if cross.len() != plan.len() || cross.iter().any(|row| row.len() != plan.len()) {
        return Err(invalid("cross", "need an m × m matrix of cross curves"));
    }
    let components: Vec<ComponentCurve> = plan
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &w)| (i, j, w)))
        .filter(|&(_, _, w)| w > 0.0)
        .map(|(i, j, weight)| ComponentCurve {
            weight,
            test: Arc::clone(&cross[i][j]),
        })
        .collect();
    joint_concavity(&components, thresholds)
}

/// `T(P_i, Q_j)` for a two-component mixture, indexed `[i][j]` from zero.
#[derive(Debug, Clone)]
pub struct CrossCurves {
    pub curves: [[PiecewiseLinearTradeoff; 2]; 2],
}

/// Symmetry slack required of the diagonal curves.
const SYMMETRY_TOL: f64 = 1e-9;

/// Advanced joint concavity for `T((1-w)P₁ + wP₂, (1-w)Q₁ + wQ₂)` with
/// `0 ≤ γ < w < η ≤ 1`.
///
/// The conjugate sum `(Σ c F*)*` of the rescaled cross curves is the
/// weighted epigraph combination of the `F`, computed exactly on knots.
/// The rescalings satisfy `Σ c/k = 1`, so the combination lives on `[0, 1]`.
pub fn advanced_joint_concavity(
    cross: &CrossCurves,
    w: f64,
    gamma: f64,
    eta: f64,
) -> Result<PiecewiseLinearTradeoff> {
    if !(0.0 <= gamma && gamma < w && w < eta && eta <= 1.0) {
        return Err(invalid(
            "gamma, eta",
            format!("need 0 ≤ γ < w < η ≤ 1, got γ={gamma}, w={w}, η={eta}"),
        ));
    }
    for i in 0..2 {
        if !cross.curves[i][i].is_symmetric(SYMMETRY_TOL) {
            return Err(invalid(
                "cross",
                format!("diagonal curve {} is not symmetric", i + 1),
            ));
        }
    }
    let k1 = (1.0 - w) * (eta - gamma) / (eta - w);
    let k2 = w * (eta - gamma) / (w - gamma);
    let [[f11, f12], [f21, f22]] = &cross.curves;
    let parts = [
        ((1.0 - w) * (1.0 - gamma), rescaled(f11, k1)),
        (w * (1.0 - eta), rescaled(f21, k2)),
        ((1.0 - w) * gamma, rescaled(f12, k1)),
        (w * eta, rescaled(f22, k2)),
    ];
    let combined = epigraph_combination(&parts);
    PiecewiseLinearTradeoff::from_knots_tidy(combined)?.symmetrize()
}

/// The `γ = η = w` case: symmetrized pointwise `(1-w) T(P₁, M) + w T(P₂, M)`
/// with `M = (1-w)Q₁ + wQ₂`.
pub fn advanced_joint_concavity_matched(
    first_to_mix: &PiecewiseLinearTradeoff,
    second_to_mix: &PiecewiseLinearTradeoff,
    w: f64,
) -> Result<PiecewiseLinearTradeoff> {
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid("w", format!("{w} is not a probability")));
    }
    PiecewiseLinearTradeoff::convex_combination(&[(1.0 - w, first_to_mix), (w, second_to_mix)])?
        .symmetrize()
}

/// Knots of `x ↦ f(kx)` over `[0, 1/k]`.
fn rescaled(f: &PiecewiseLinearTradeoff, k: f64) -> Vec<Knot> {
    let mut knots: Vec<Knot> = f
        .knots()
        .iter()
        .map(|kn| Knot::new(kn.alpha / k, kn.beta))
        .collect();
    if f.knots().last().is_some_and(|kn| kn.alpha < 1.0) {
        knots.push(Knot::new(1.0 / k, 0.0));
    }
    knots
}

/// `(Σ cⱼ gⱼ*)*` for convex piecewise-linear `gⱼ` ending at zero, as the
/// vertices `(Σ cⱼ xⱼ, Σ cⱼ gⱼ(xⱼ))` where every `gⱼ` sits at the vertex
/// supporting the same slope.
fn epigraph_combination(parts: &[(f64, Vec<Knot>)]) -> Vec<Knot> {
    let parts: Vec<(f64, &[Knot], Vec<f64>)> = parts
        .iter()
        .filter(|(c, knots)| *c > 0.0 && !knots.is_empty())
        .map(|(c, knots)| {
            // Right slope at each vertex; the curve is flat after the last.
            let mut right: Vec<f64> = knots
                .windows(2)
                .map(|w| (w[1].beta - w[0].beta) / (w[1].alpha - w[0].alpha))
                .collect();
            right.push(0.0);
            (*c, knots.as_slice(), right)
        })
        .collect();
    let mut slopes: Vec<f64> = parts
        .iter()
        .flat_map(|p| p.2.iter().copied())
        .filter(|s| *s < 0.0)
        .collect();
    slopes.push(0.0);
    slopes.sort_by(f64::total_cmp);
    slopes.dedup();
    let mut probes = Vec::with_capacity(slopes.len());
    probes.push(slopes[0] - 1.0);
    probes.extend(slopes.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    probes
        .into_iter()
        .map(|y| {
            let (mut x, mut v) = (0.0, 0.0);
            for (c, knots, right) in &parts {
                // The vertex whose right slope first exceeds y.
                let idx = right.partition_point(|s| *s <= y).min(knots.len() - 1);
                x += c * knots[idx].alpha;
                v += c * knots[idx].beta;
            }
            Knot::new(x, v)
        })
        .collect()
}

/// What the (γ, η) search optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GridObjective {
    /// Largest curve value at this α.
    ValueAt(f64),
    /// Smallest δ at this ε.
    DeltaAt(f64),
}

#[derive(Debug, Clone)]
pub struct GridChoice {
    pub gamma: f64,
    pub eta: f64,
    /// Curve value or δ, per the objective.
    pub score: f64,
    pub curve: PiecewiseLinearTradeoff,
}

/// Default side of the (γ, η) grid.
pub const DEFAULT_GRID_SIDE: usize = 32;

/// Searches `γ = w(1 - r)` and `η = w + (1 - w) r'` with `r, r'` log-spaced
/// on `[1e-3, 1]`, returning the best cell.
pub fn advanced_grid_search(
    cross: &CrossCurves,
    w: f64,
    objective: GridObjective,
    side: usize,
) -> Result<GridChoice> {
    if !(w > 0.0 && w < 1.0) {
        return Err(invalid(
            "w",
            format!("{w} must lie strictly between 0 and 1"),
        ));
    }
    if side < 2 {
        return Err(invalid("side", "grid needs at least 2 points per axis"));
    }
    let offsets: Vec<f64> = (0..side)
        .map(|j| 10f64.powf(-3.0 + 3.0 * j as f64 / (side - 1) as f64))
        .collect();
    let cells: Vec<(f64, f64)> = offsets
        .iter()
        .flat_map(|&r| {
            offsets
                .iter()
                .map(move |&s| (w * (1.0 - r), w + (1.0 - w) * s))
        })
        .collect();
    let scored: Vec<Result<GridChoice>> = cells
        .par_iter()
        .map(|&(gamma, eta)| {
            let curve = advanced_joint_concavity(cross, w, gamma, eta)?;
            let score = match objective {
                GridObjective::ValueAt(alpha) => curve.evaluate(alpha)?,
                GridObjective::DeltaAt(eps) => curve.to_epsilon_delta(eps)?,
            };
            Ok(GridChoice {
                gamma,
                eta,
                score,
                curve,
            })
        })
        .collect();
    let mut best: Option<GridChoice> = None;
    for choice in scored {
        let choice = choice?;
        let better = match (&best, objective) {
            (None, _) => true,
            (Some(b), GridObjective::ValueAt(_)) => choice.score > b.score,
            (Some(b), GridObjective::DeltaAt(_)) => choice.score < b.score,
        };
        if better {
            best = Some(choice);
        }
    }
    best.ok_or(Error::NonConvergence {
        what: "grid search",
        limit: 0,
    })
}

/// Bound for `T((1-w)P₀ + wQ₀, (1-w)Q₀ + wP₀)`: `C(2w Id + (1-2w) f₀)`.
pub fn advanced_shuffle_bound(
    f0: &PiecewiseLinearTradeoff,
    w: f64,
) -> Result<PiecewiseLinearTradeoff> {
    if !(0.0..=0.5).contains(&w) {
        return Err(invalid("w", format!("{w} is not in [0, 1/2]")));
    }
    let id = PiecewiseLinearTradeoff::identity();
    PiecewiseLinearTradeoff::convex_combination(&[(2.0 * w, &id), (1.0 - 2.0 * w, f0)])?
        .symmetrize()
}

/// Outcome of the two-component ratio identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqualityReport {
    pub holds: bool,
    pub max_violation: f64,
}

const EQUALITY_TOL: f64 = 1e-10;

/// Checks `(w₁p₁ + w₂p₂)/(w₁q₁ + w₂q₂) = w₁ p₁/q₁ + w₂ p₂/q₂` on every atom
/// charged by `P_w`, where a component with `0/0` borrows the other's
/// ratio. This identity is necessary for joint concavity to be tight but
/// not sufficient.
pub fn equality_diagnostic(
    first: &DiscretePair,
    second: &DiscretePair,
    w: [f64; 2],
) -> Result<EqualityReport> {
    if first.len() != second.len() {
        return Err(invalid("components", "supports differ in size"));
    }
    check_weights(w)?;
    let mut max_violation: f64 = 0.0;
    for a in 0..first.len() {
        let (p1, q1) = (first.p()[a].prob(), first.q()[a].prob());
        let (p2, q2) = (second.p()[a].prob(), second.q()[a].prob());
        let mix_p = w[0] * p1 + w[1] * p2;
        if mix_p <= 0.0 {
            continue;
        }
        let lhs = ratio(mix_p, w[0] * q1 + w[1] * q2);
        let (mut r1, mut r2) = (ratio(p1, q1), ratio(p2, q2));
        if r1.is_nan() {
            r1 = r2;
        }
        if r2.is_nan() {
            r2 = r1;
        }
        let rhs = w[0] * r1 + w[1] * r2;
        let gap = if lhs.is_infinite() && rhs.is_infinite() {
            0.0
        } else if lhs.is_infinite() || rhs.is_infinite() {
            f64::INFINITY
        } else {
            (lhs - rhs).abs() / lhs.abs().max(1.0)
        };
        max_violation = max_violation.max(gap);
    }
    Ok(EqualityReport {
        holds: max_violation <= EQUALITY_TOL,
        max_violation,
    })
}

/// `x/y` with `x/0 = ∞` for `x > 0` and `0/0 = NaN`.
fn ratio(x: f64, y: f64) -> f64 {
    if y > 0.0 {
        x / y
    } else if x > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

/// Both sides of a divergence inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

const INEQUALITY_SLACK: f64 = 1e-10;

impl InequalityReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        InequalityReport {
            lhs,
            rhs,
            holds: lhs <= rhs + INEQUALITY_SLACK,
        }
    }
}

fn probs(side: &[crate::numeric::LogProb]) -> Vec<f64> {
    side.iter().map(|x| x.prob()).collect()
}

/// `D_F(P ‖ Q) = Σ q F(p/q)` plus `τ_F` times the mass `Q` misses.
pub fn discrete_f_divergence(
    p: &[f64],
    q: &[f64],
    generator: &dyn DivergenceGenerator,
) -> Result<f64> {
    let mut total = 0.0;
    let mut null_only = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if qa > 0.0 {
            total += if pa > 0.0 {
                qa * generator.value(pa / qa)
            } else {
                qa * generator.at_zero()
            };
        } else {
            null_only += pa;
        }
    }
    if null_only > 0.0 {
        let tau = generator.slope_at_infinity();
        if tau.is_infinite() {
            return Err(Error::Divergent(format!(
                "mass {null_only:e} where the reference has none"
            )));
        }
        total += tau * null_only;
    }
    Ok(total)
}

fn mix(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let len = parts[0].1.len();
    (0..len)
        .map(|a| parts.iter().map(|(w, v)| w * v[a]).sum())
        .collect()
}

fn joint_convexity(
    components: &[&DiscretePair],
    w: &[f64],
    generator: &dyn DivergenceGenerator,
) -> Result<InequalityReport> {
    if components.is_empty() || components.len() != w.len() {
        return Err(invalid("components", "need one weight per component"));
    }
    if components.iter().any(|c| c.len() != components[0].len()) {
        return Err(invalid("components", "supports differ in size"));
    }
    check_weights(w.iter().copied())?;
    let ps: Vec<Vec<f64>> = components.iter().map(|c| probs(c.p())).collect();
    let qs: Vec<Vec<f64>> = components.iter().map(|c| probs(c.q())).collect();
    let weighted = |v: &[Vec<f64>]| {
        mix(&w
            .iter()
            .copied()
            .zip(v.iter().map(|x| x.as_slice()))
            .collect::<Vec<_>>())
    };
    let lhs = discrete_f_divergence(&weighted(&ps), &weighted(&qs), generator)?;
    let mut rhs = 0.0;
    for ((p, q), wi) in ps.iter().zip(&qs).zip(w) {
        if *wi > 0.0 {
            rhs += wi * discrete_f_divergence(p, q, generator)?;
        }
    }
    Ok(InequalityReport::new(lhs, rhs))
}

/// `H_γ(P_w ‖ Q_w) ≤ Σ wᵢ H_γ(Pᵢ ‖ Qᵢ)`.
pub fn hockey_stick_joint_convexity(
    components: &[&DiscretePair],
    w: &[f64],
    gamma: f64,
) -> Result<InequalityReport> {
    joint_convexity(components, w, &HockeyStick { gamma })
}

/// The power divergence of order `order > 1` is jointly convex too.
pub fn power_joint_convexity(
    components: &[&DiscretePair],
    w: &[f64],
    order: f64,
) -> Result<InequalityReport> {
    if !(order > 1.0) {
        return Err(invalid("order", format!("{order} must exceed 1")));
    }
    joint_convexity(components, w, &PowerDivergence { order })
}

/// Joint convexity read off curves: the mixture curve's divergence against
/// the weighted component divergences.
pub fn curve_joint_convexity(
    mixture: &PiecewiseLinearTradeoff,
    components: &[(f64, &PiecewiseLinearTradeoff)],
    generator: &dyn DivergenceGenerator,
) -> Result<InequalityReport> {
    check_weights(components.iter().map(|c| c.0))?;
    let lhs = mixture.f_divergence(generator)?;
    let mut rhs = 0.0;
    for (wi, f) in components {
        rhs += wi * f.f_divergence(generator)?;
    }
    Ok(InequalityReport::new(lhs, rhs))
}

/// Parameters tying the two sides of the advanced hockey-stick inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvancedHockeyStickParams {
    pub w: f64,
    pub eps_first: f64,
    pub eps_second: f64,
    pub gamma: f64,
}

impl AdvancedHockeyStickParams {
    /// `e^{ε'} = (1-w) e^{ε₀} + w e^{ε₁}`.
    pub fn combined_epsilon(&self) -> f64 {
        ((1.0 - self.w) * self.eps_first.exp() + self.w * self.eps_second.exp()).ln()
    }

    /// `η` solving `e^{ε₀}(1-w)γ + e^{ε₁} w η = e^{ε'} w`.
    pub fn eta(&self) -> f64 {
        let e_combined = self.combined_epsilon().exp();
        (e_combined * self.w - self.eps_first.exp() * (1.0 - self.w) * self.gamma)
            / (self.eps_second.exp() * self.w)
    }
}

/// `H_{e^{ε'}}((1-w)P₁ + wP₂ ‖ (1-w)Q₁ + wQ₂)` against
/// `(1-w) H_{e^{ε₀}}(P₁ ‖ (1-γ)Q₁ + γQ₂) + w H_{e^{ε₁}}(P₂ ‖ (1-η)Q₁ + ηQ₂)`.
pub fn advanced_hockey_stick_check(
    first: &DiscretePair,
    second: &DiscretePair,
    params: AdvancedHockeyStickParams,
) -> Result<InequalityReport> {
    let AdvancedHockeyStickParams {
        w,
        eps_first,
        eps_second,
        gamma,
    } = params;
    let eta = params.eta();
    if !(0.0..=1.0).contains(&w) || !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&eta) {
        return Err(invalid(
            "params",
            format!("need w, γ, η in [0, 1], got {w}, {gamma}, {eta}"),
        ));
    }
    if eps_first < 0.0 || eps_second < 0.0 {
        return Err(invalid("params", "epsilons must be nonnegative"));
    }
    if first.len() != second.len() {
        return Err(invalid("components", "supports differ in size"));
    }
    let (p1, q1, p2, q2) = (
        probs(first.p()),
        probs(first.q()),
        probs(second.p()),
        probs(second.q()),
    );
    let hs = |p: &[f64], q: &[f64], eps: f64| {
        discrete_f_divergence(p, q, &HockeyStick { gamma: eps.exp() })
    };
    let lhs = hs(
        &mix(&[(1.0 - w, &p1), (w, &p2)]),
        &mix(&[(1.0 - w, &q1), (w, &q2)]),
        params.combined_epsilon(),
    )?;
    let rhs = (1.0 - w) * hs(&p1, &mix(&[(1.0 - gamma, &q1), (gamma, &q2)]), eps_first)?
        + w * hs(&p2, &mix(&[(1.0 - eta, &q1), (eta, &q2)]), eps_second)?;
    Ok(InequalityReport::new(lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::LogProb;
    use crate::oracle::exact_tradeoff;
    use crate::tradeoff::{gdp_curve, Envelope};
    use proptest::prelude::*;

    fn pair(p: &[f64], q: &[f64]) -> DiscretePair {
        let logs = |v: &[f64]| v.iter().map(|x| LogProb::from_prob(*x).unwrap()).collect();
        DiscretePair::new(logs(p), logs(q)).unwrap()
    }

    fn component(w: f64, p: &DiscretePair) -> ComponentCurve {
        ComponentCurve::new(w, exact_tradeoff(p).unwrap())
    }

    #[test]
    fn degenerate_mixtures_return_the_component() {
        let f = PiecewiseLinearTradeoff::pure_dp(0.7).unwrap();
        let single = joint_concavity_exact(&[ComponentCurve::new(1.0, f.clone())]).unwrap();
        assert!(single.max_abs_difference(&f) < 1e-15);
        let twice = joint_concavity_exact(&[
            ComponentCurve::new(0.3, f.clone()),
            ComponentCurve::new(0.7, f.clone()),
        ])
        .unwrap();
        assert!(twice.max_abs_difference(&f) < 1e-15);
        assert!(joint_concavity(&[], &[1.0]).is_err());
        assert!(joint_concavity(&[ComponentCurve::new(0.5, f)], &[1.0]).is_err());
    }

    #[test]
    fn three_point_mixture_sits_below_the_oracle() {
        let a = pair(&[0.5, 0.3, 0.2], &[0.2, 0.3, 0.5]);
        let b = pair(&[0.1, 0.6, 0.3], &[0.4, 0.4, 0.2]);
        let w = [0.4, 0.6];
        let bound = joint_concavity_exact(&[component(w[0], &a), component(w[1], &b)]).unwrap();
        let exact = exact_tradeoff(&DiscretePair::mixture(&[&a, &b], &w, &w).unwrap()).unwrap();
        assert!(exact.max_excess_of(&bound) <= 1e-10);
        let report = equality_diagnostic(&a, &b, w).unwrap();
        assert!(!report.holds && report.max_violation > 0.0);
        assert!(bound.max_excess_of(&exact) > 1e-6);
    }

    #[test]
    fn coupling_has_the_right_marginals() {
        let plan = diagonal_coupling(&[0.5, 0.2, 0.3], &[0.1, 0.6, 0.3]).unwrap();
        for i in 0..3 {
            let row: f64 = plan[i].iter().sum();
            let col: f64 = plan.iter().map(|r| r[i]).sum();
            assert!(
                (row - [0.5, 0.2, 0.3][i]).abs() < 1e-15
                    && (col - [0.1, 0.6, 0.3][i]).abs() < 1e-15
            );
        }
        assert_eq!(plan[0][0], 0.1);
        assert!((plan[0][1] - 0.4).abs() < 1e-15);
        let disjoint = diagonal_coupling(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(disjoint, vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn different_weights_reduce_to_the_cross_term() {
        let f: Arc<dyn LikelihoodRatioTest> =
            Arc::new(PiecewiseLinearTradeoff::pure_dp(0.5).unwrap());
        let g: Arc<dyn LikelihoodRatioTest> =
            Arc::new(PiecewiseLinearTradeoff::pure_dp(2.0).unwrap());
        let cross = vec![
            vec![Arc::clone(&f), Arc::clone(&g)],
            vec![Arc::clone(&g), Arc::clone(&f)],
        ];
        let ts = [0.0, 0.5, 1.0, 2.0, 8.0];
        let only = joint_concavity_diff_weights(&cross, &[1.0, 0.0], &[0.0, 1.0], &ts).unwrap();
        for s in &only.samples {
            assert_eq!((s.alpha, s.beta), g.errors_at(s.t));
        }
        let same = joint_concavity_diff_weights(&cross, &[0.3, 0.7], &[0.3, 0.7], &ts).unwrap();
        let plain = joint_concavity(
            &[
                ComponentCurve {
                    weight: 0.3,
                    test: Arc::clone(&f),
                },
                ComponentCurve {
                    weight: 0.7,
                    test: f,
                },
            ],
            &ts,
        )
        .unwrap();
        assert_eq!(same, plain);
    }

    /// `T` of two-component unit-variance Gaussian mixtures by fine binning.
    fn binned_gaussian_mixture(
        means_p: [f64; 2],
        w_p: [f64; 2],
        means_q: [f64; 2],
        w_q: [f64; 2],
    ) -> PiecewiseLinearTradeoff {
        use crate::numeric::gaussian_cdf;
        let (lo, hi, bins) = (-14.0, 16.0, 60_000);
        let edges: Vec<f64> = (0..=bins)
            .map(|j| lo + (hi - lo) * j as f64 / bins as f64)
            .collect();
        let mass = |means: [f64; 2], w: [f64; 2]| -> Vec<f64> {
            let mut v: Vec<f64> = edges
                .windows(2)
                .map(|e| {
                    (0..2)
                        .map(|i| {
                            w[i] * (gaussian_cdf(e[1] - means[i]) - gaussian_cdf(e[0] - means[i]))
                        })
                        .sum()
                })
                .collect();
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            v
        };
        exact_tradeoff(&pair(&mass(means_p, w_p), &mass(means_q, w_q))).unwrap()
    }

    #[test]
    fn different_weights_on_gaussians_sit_below_the_oracle() {
        let (mp, mq): ([f64; 2], [f64; 2]) = ([0.0, 2.0], [0.5, 1.5]);
        let (w_p, w_q) = ([0.5, 0.5], [0.3, 0.7]);
        let cross: Vec<Vec<Arc<dyn LikelihoodRatioTest>>> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| {
                        Arc::new(gdp_curve((mp[i] - mq[j]).abs()).unwrap())
                            as Arc<dyn LikelihoodRatioTest>
                    })
                    .collect()
            })
            .collect();
        let ts: Vec<f64> = (-60..=60).map(|j| (j as f64 / 10.0).exp()).collect();
        let bound = joint_concavity_diff_weights(&cross, &w_p, &w_q, &ts).unwrap();
        let oracle = binned_gaussian_mixture(mp, w_p, mq, w_q);
        for s in &bound.samples {
            assert!(
                s.beta <= oracle.evaluate(s.alpha).unwrap() + 1e-6,
                "t={}",
                s.t
            );
        }
    }

    fn shuffle_cross(f0: &PiecewiseLinearTradeoff) -> CrossCurves {
        let id = PiecewiseLinearTradeoff::identity();
        CrossCurves {
            curves: [[f0.clone(), id.clone()], [id, f0.clone()]],
        }
    }

    #[test]
    fn advanced_bound_on_indistinguishable_components_stays_below_identity() {
        let id = PiecewiseLinearTradeoff::identity();
        let cross = CrossCurves {
            curves: [[id.clone(), id.clone()], [id.clone(), id.clone()]],
        };
        for (g, e) in [(0.0, 1.0), (0.1, 0.5), (0.2, 0.9)] {
            let c = advanced_joint_concavity(&cross, 0.3, g, e).unwrap();
            assert!(c.is_symmetric(1e-12) && id.max_excess_of(&c) <= 1e-15);
        }
        assert!(advanced_joint_concavity(&cross, 0.3, 0.3, 0.5).is_err());
        let lopsided =
            PiecewiseLinearTradeoff::from_knots(vec![Knot::new(0.0, 0.9), Knot::new(0.3, 0.0)])
                .unwrap();
        let bad = CrossCurves {
            curves: [[lopsided, id.clone()], [id.clone(), id]],
        };
        assert!(advanced_joint_concavity(&bad, 0.3, 0.1, 0.5).is_err());
    }

    #[test]
    fn advanced_bound_is_valid_on_a_shuffle_mixture() {
        // Randomized-response-like base pair and its shuffle mixture.
        let base = pair(&[0.6, 0.3, 0.1, 0.0], &[0.0, 0.1, 0.3, 0.6]);
        let f0 = exact_tradeoff(&base).unwrap();
        let w = 0.25;
        let mixed =
            DiscretePair::mixture(&[&base, &base.swapped()], &[1.0 - w, w], &[1.0 - w, w]).unwrap();
        let exact = exact_tradeoff(&mixed).unwrap();
        let cross = shuffle_cross(&f0);
        for (g, e) in [(0.0, 1.0), (0.05, 0.6), (0.2, 0.3)] {
            let c = advanced_joint_concavity(&cross, w, g, e).unwrap();
            assert!(exact.max_excess_of(&c) <= 1e-12, "γ={g} η={e}");
            assert!(c.is_symmetric(1e-12));
        }
        let bound = advanced_shuffle_bound(&f0, w).unwrap();
        assert!(exact.max_excess_of(&bound) <= 1e-12);
    }

    #[test]
    fn shuffle_bound_extremes() {
        let f0 = PiecewiseLinearTradeoff::pure_dp(1.5).unwrap();
        assert!(
            advanced_shuffle_bound(&f0, 0.5)
                .unwrap()
                .max_abs_difference(&PiecewiseLinearTradeoff::identity())
                < 1e-15
        );
        assert!(
            advanced_shuffle_bound(&f0, 0.0)
                .unwrap()
                .max_abs_difference(&f0)
                < 1e-15
        );
        assert!(advanced_shuffle_bound(&f0, 0.6).is_err());
    }

    #[test]
    fn subsampled_gaussian_beats_plain_joint_concavity_near_zero() {
        // P = N(0,1) against Q = w N(0,1) + (1-w) N(1,1), w = 1/3.
        let w = 1.0 / 3.0;
        let g = gdp_curve(1.0).unwrap();
        let lower = g
            .to_knots(&g.default_log_ratios(801), Envelope::Tangent)
            .unwrap()
            .curve;
        let id = PiecewiseLinearTradeoff::identity();
        let cross = CrossCurves {
            curves: [[lower.clone(), id.clone()], [lower.clone(), id.clone()]],
        };
        let plain = joint_concavity(
            &[ComponentCurve::new(1.0 - w, g), ComponentCurve::new(w, id)],
            &(-80..=80)
                .map(|j| (j as f64 / 10.0).exp())
                .collect::<Vec<_>>(),
        )
        .unwrap()
        .chord_curve()
        .unwrap();
        let best = advanced_grid_search(&cross, w, GridObjective::ValueAt(0.05), DEFAULT_GRID_SIDE)
            .unwrap();
        assert!(best.curve.evaluate(0.05).unwrap() > plain.evaluate(0.05).unwrap());
        for i in 0..=10 {
            let a = 0.01 * i as f64;
            assert!(
                best.curve.evaluate(a).unwrap() >= plain.evaluate(a).unwrap() - 1e-9,
                "alpha={a}"
            );
        }
    }

    #[test]
    fn equality_cases() {
        // Disjoint supports across components.
        let a = pair(&[0.7, 0.3, 0.0, 0.0], &[0.2, 0.8, 0.0, 0.0]);
        let b = pair(&[0.0, 0.0, 0.5, 0.5], &[0.0, 0.0, 0.9, 0.1]);
        let w = [0.35, 0.65];
        assert!(equality_diagnostic(&a, &b, w).unwrap().holds);
        let bound = joint_concavity_exact(&[component(w[0], &a), component(w[1], &b)]).unwrap();
        let exact = exact_tradeoff(&DiscretePair::mixture(&[&a, &b], &w, &w).unwrap()).unwrap();
        assert!(bound.max_abs_difference(&exact) < 1e-12);
    }

    #[test]
    fn two_user_shuffle_components_meet_the_identity() {
        // Counts i = 0 and i = 1 live on atoms (a, b) with a + b = i + 1:
        // (0,1), (1,0), (0,2), (1,1), (2,0). With ε₀ = ln 3 each count has weight 1/2.
        let first = pair(&[0.0, 1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let second = pair(&[0.0, 0.0, 0.0, 0.5, 0.5], &[0.0, 0.0, 0.5, 0.5, 0.0]);
        let w = [0.5, 0.5];
        assert!(equality_diagnostic(&first, &second, w).unwrap().holds);
        let bound =
            joint_concavity_exact(&[component(w[0], &first), component(w[1], &second)]).unwrap();
        let exact =
            exact_tradeoff(&DiscretePair::mixture(&[&first, &second], &w, &w).unwrap()).unwrap();
        assert!(bound.max_abs_difference(&exact) < 1e-12);
        let base = crate::shuffle::base_knots(
            crate::shuffle::ShuffleParams::new(2, 3f64.ln()).unwrap(),
            crate::shuffle::ThresholdPolicy::default(),
        )
        .unwrap();
        assert!(base.max_abs_difference(&exact) < 1e-12);
    }

    #[test]
    fn advanced_shuffle_bound_dominates_near_zero() {
        let params = crate::shuffle::ShuffleParams::new(100, 2f64.ln()).unwrap();
        let f0 =
            crate::shuffle::base_knots(params, crate::shuffle::ThresholdPolicy::default()).unwrap();
        let w = params.mix_weight();
        let advanced = advanced_shuffle_bound(&f0, w).unwrap();
        let plain = joint_concavity_exact(&[
            ComponentCurve::new(1.0 - w, f0.clone()),
            ComponentCurve::new(w, f0.left_inverse().unwrap()),
        ])
        .unwrap();
        let slopes = plain.slopes();
        for (k, s) in plain.knots().iter().zip(slopes) {
            if s <= -(0.3f64.exp()) {
                assert!(
                    advanced.evaluate(k.alpha).unwrap() >= k.beta - 1e-12,
                    "alpha={}",
                    k.alpha
                );
            }
        }
        assert!(advanced.to_epsilon_delta(0.5).unwrap() < plain.to_epsilon_delta(0.5).unwrap());
    }

    #[test]
    fn ratio_identity_is_not_sufficient() {
        // P₁ = δ₀, P₂ = δ₁, Q₁ = Q₂ = uniform: the identity holds on both atoms,
        // yet the mixture is Id while the indexed bound is (1 - α)/2.
        let a = pair(&[1.0, 0.0], &[0.5, 0.5]);
        let b = pair(&[0.0, 1.0], &[0.5, 0.5]);
        let w = [0.5, 0.5];
        assert!(equality_diagnostic(&a, &b, w).unwrap().holds);
        let bound = joint_concavity_exact(&[component(0.5, &a), component(0.5, &b)]).unwrap();
        let exact = exact_tradeoff(&DiscretePair::mixture(&[&a, &b], &w, &w).unwrap()).unwrap();
        assert_eq!(exact, PiecewiseLinearTradeoff::identity());
        assert!((bound.evaluate(0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn divergence_checks_on_identical_components_are_tight() {
        let a = pair(&[0.2, 0.5, 0.3], &[0.4, 0.4, 0.2]);
        let hs = hockey_stick_joint_convexity(&[&a, &a], &[0.3, 0.7], 1.2).unwrap();
        assert!(hs.holds && (hs.lhs - hs.rhs).abs() < 1e-15);
        let pw = power_joint_convexity(&[&a, &a], &[0.3, 0.7], 3.0).unwrap();
        assert!(pw.holds && (pw.lhs - pw.rhs).abs() < 1e-14);
        let apart = pair(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]);
        assert!(matches!(
            power_joint_convexity(&[&apart], &[1.0], 2.0),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn curve_divergences_agree_with_discrete_sums() {
        let a = pair(&[0.2, 0.5, 0.3], &[0.4, 0.4, 0.2]);
        let b = pair(&[0.6, 0.1, 0.3], &[0.1, 0.3, 0.6]);
        let w = [0.45, 0.55];
        let mixture = exact_tradeoff(&DiscretePair::mixture(&[&a, &b], &w, &w).unwrap()).unwrap();
        let (fa, fb) = (exact_tradeoff(&a).unwrap(), exact_tradeoff(&b).unwrap());
        let generator = PowerDivergence { order: 2.5 };
        let via_curves =
            curve_joint_convexity(&mixture, &[(w[0], &fa), (w[1], &fb)], &generator).unwrap();
        let direct = power_joint_convexity(&[&a, &b], &w, 2.5).unwrap();
        assert!(via_curves.holds);
        assert!(
            (via_curves.lhs - direct.lhs).abs() < 1e-12
                && (via_curves.rhs - direct.rhs).abs() < 1e-12
        );
    }

    fn random_pair(len: usize) -> impl Strategy<Value = DiscretePair> {
        (
            prop::collection::vec(0.01f64..1.0, len),
            prop::collection::vec(0.01f64..1.0, len),
        )
            .prop_map(|(p, q)| {
                let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
                let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
                let q: Vec<f64> = q.iter().map(|x| x / sq).collect();
                DiscretePair::from_probs(&p, &q).unwrap()
            })
    }

    proptest! {
        #[test]
        fn joint_concavity_is_a_lower_bound(a in random_pair(3), b in random_pair(3), w in 0.05f64..0.95) {
            let weights = [w, 1.0 - w];
            let bound = joint_concavity_exact(&[component(w, &a), component(1.0 - w, &b)]).unwrap();
            prop_assert!(bound.validate().is_ok());
            let exact = exact_tradeoff(&DiscretePair::mixture(&[&a, &b], &weights, &weights).unwrap()).unwrap();
            prop_assert!(exact.max_excess_of(&bound) <= 1e-10);
        }

        #[test]
        fn symmetric_components_pair_thresholds(mu in 0.1f64..3.0, eps in 0.05f64..2.0, w in 0.05f64..0.95, log_t in -4.0f64..4.0) {
            let g = gdp_curve(mu).unwrap();
            let rr = PiecewiseLinearTradeoff::pure_dp(eps).unwrap();
            let comps = [ComponentCurve::new(w, g), ComponentCurve::new(1.0 - w, rr)];
            // Keep away from the pure-DP breakpoints, where ties flip sides.
            prop_assume!((log_t.abs() - eps).abs() > 1e-6);
            let t = log_t.exp();
            let s = joint_concavity(&comps, &[t.min(1.0 / t), t.max(1.0 / t)]).unwrap().samples;
            prop_assert!((s[0].alpha - s[1].beta).abs() <= 1e-10 && (s[0].beta - s[1].alpha).abs() <= 1e-10);
        }

        #[test]
        fn divergences_are_jointly_convex(a in random_pair(4), b in random_pair(4), w in 0.0f64..1.0, g in 0.0f64..1.5, order in 1.5f64..4.0) {
            let weights = [w, 1.0 - w];
            prop_assert!(hockey_stick_joint_convexity(&[&a, &b], &weights, g.exp()).unwrap().holds);
            prop_assert!(power_joint_convexity(&[&a, &b], &weights, order).unwrap().holds);
        }

        #[test]
        fn advanced_hockey_stick_inequality_holds(
            a in random_pair(4), b in random_pair(4), w in 0.05f64..0.95,
            e0 in 0.0f64..1.5, e1 in 0.0f64..1.5, gamma in 0.0f64..1.0,
        ) {
            let params = AdvancedHockeyStickParams { w, eps_first: e0, eps_second: e1, gamma };
            let eta = params.eta();
            prop_assume!((0.0..=1.0).contains(&eta));
            let report = advanced_hockey_stick_check(&a, &b, params).unwrap();
            prop_assert!(report.holds, "{:?}", report);
        }
    }
}
