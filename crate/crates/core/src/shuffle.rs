//! Shuffled randomized response.
//!
//! With `n` users each applying ε₀-randomized response, the neighbouring
//! outputs are dominated by `P = (1-w) P₀ + w Q₀` and `Q = (1-w) Q₀ + w P₀`,
//! where `w = 1/(e^ε₀ + 1)`. `P₀` and `Q₀` are mixtures over the count
//! `C = i ~ Binom(n-1, 2w)` of `(A+1, i-A)` and `(A, i-A+1)` with
//! `A ~ Binom(i, 1/2)`. An atom `(a, b)` with `a + b = i + 1` has
//! `p₀/q₀ = a/b`.
//!
//! A threshold `t = a/b` below means the most powerful test of `P₀` against
//! `Q₀` that rejects every atom with ratio `p₀/q₀ ≤ t`. In component `i` it
//! rejects `A ≤ s_i = ⌊(i a - b)/(a + b)⌋`, giving the curve vertex
//! `(Σ wᵢ Fᵢ(sᵢ), Σ wᵢ (1 - Fᵢ(sᵢ + 1)))` where the segment that follows
//! has slope `-1/t`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mixture::advanced_shuffle_bound;
use crate::numeric::{
    binom_log_pmf_pq, half_binomial_log_cdf, half_binomial_log_pmf, log_add_exp, log_sum_exp,
};
use crate::tradeoff::{tangent_envelope, Knot, PiecewiseLinearTradeoff, TangentPoint};

pub const DEFAULT_TRUNCATION_TAU: f64 = 1e-15;
/// Largest `n` for which every knot is enumerated by default.
pub const DEFAULT_ALL_KNOTS_CAP: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShuffleParams {
    n: u64,
    eps0: f64,
    truncation_tau: f64,
}

impl ShuffleParams {
    pub fn new(n: u64, eps0: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "needs at least one user"));
        }
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(invalid(
                "eps0",
                format!("{eps0} is not a positive finite number"),
            ));
        }
        Ok(ShuffleParams {
            n,
            eps0,
            truncation_tau: DEFAULT_TRUNCATION_TAU,
        })
    }

    /// Sets the mass of count weights that may be dropped from the sums.
    pub fn with_truncation(mut self, tau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(invalid("truncation_tau", format!("{tau} is not in [0, 1)")));
        }
        self.truncation_tau = tau;
        Ok(self)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn truncation_tau(&self) -> f64 {
        self.truncation_tau
    }

    /// `w = 1/(e^ε₀ + 1)`.
    pub fn mix_weight(&self) -> f64 {
        let e = (-self.eps0).exp();
        e / (1.0 + e)
    }

    /// Success probability `2w` of the count `C`.
    pub fn count_prob(&self) -> f64 {
        2.0 * self.mix_weight()
    }

    /// `1 - 2w = tanh(ε₀/2)`, without the cancellation.
    pub fn count_complement(&self) -> f64 {
        (0.5 * self.eps0).tanh()
    }

    /// `ln P[C = i]` for `i = 0..n`.
    pub fn log_count_weights(&self) -> Vec<f64> {
        let m = (self.n - 1) as i64;
        let (p, q) = (self.count_prob(), self.count_complement());
        (0..=m)
            .map(|i| {
                binom_log_pmf_pq(i, m, p, q)
                    .expect("count parameters are valid")
                    .ln()
            })
            .collect()
    }

    /// Contiguous range of counts keeping all but `truncation_tau` of the
    /// weight, at most half of it from each side.
    pub fn window(&self) -> CountWindow {
        let logs = self.log_count_weights();
        let budget = (0.5 * self.truncation_tau).ln();
        let cut = |iter: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut acc = f64::NEG_INFINITY;
            let mut kept_from = 0;
            for (idx, lw) in iter {
                let next = log_add_exp(acc, lw);
                if next > budget {
                    kept_from = idx;
                    break;
                }
                acc = next;
            }
            (kept_from, acc)
        };
        let (first, left) = cut(&mut logs.iter().copied().enumerate());
        let (last, right) = cut(&mut logs.iter().copied().enumerate().rev());
        CountWindow {
            first: first as u64,
            log_weights: logs[first..=last].to_vec(),
            tail_mass: left.exp() + right.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountWindow {
    /// Smallest retained count.
    pub first: u64,
    /// `ln P[C = i]` for the retained counts, starting at `first`.
    pub log_weights: Vec<f64>,
    /// Weight of the dropped counts.
    pub tail_mass: f64,
}

impl CountWindow {
    pub fn counts(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.log_weights
            .iter()
            .enumerate()
            .map(|(j, &lw)| (self.first + j as u64, lw))
    }

    pub fn last(&self) -> u64 {
        self.first + self.log_weights.len() as u64 - 1
    }
}

/// Which thresholds become knots of the base curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThresholdPolicy {
    /// Every achievable ratio: the exact curve.
    All { cap: u64 },
    /// `K` log-spaced thresholds; supporting lines give a lower bound.
    Grid(usize),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::All {
            cap: DEFAULT_ALL_KNOTS_CAP,
        }
    }
}

/// Binom(i, 1/2) log tables for one count.
#[derive(Debug, Clone)]
struct HalfBinomial {
    log_pmf: Vec<f64>,
    log_cdf: Vec<f64>,
}

impl HalfBinomial {
    fn new(i: u64) -> Self {
        let log_pmf = half_binomial_log_pmf(i);
        let log_cdf = half_binomial_log_cdf(&log_pmf);
        HalfBinomial { log_pmf, log_cdf }
    }

    fn trials(&self) -> i64 {
        self.log_pmf.len() as i64 - 1
    }

    /// `ln P[A ≤ s]`.
    fn log_cdf(&self, s: i64) -> f64 {
        if s < 0 {
            f64::NEG_INFINITY
        } else if s >= self.trials() {
            0.0
        } else {
            self.log_cdf[s as usize]
        }
    }

    /// `ln P[A ≥ s]`, by symmetry.
    fn log_upper(&self, s: i64) -> f64 {
        self.log_cdf(self.trials() - s)
    }

    fn log_pmf(&self, k: i64) -> f64 {
        if k < 0 || k > self.trials() {
            f64::NEG_INFINITY
        } else {
            self.log_pmf[k as usize]
        }
    }
}

/// Cached weight window and binomial tables for one parameter set.
#[derive(Debug, Clone)]
pub struct ShuffleAccountant {
    params: ShuffleParams,
    window: CountWindow,
    tables: Vec<HalfBinomial>,
}

/// JSON record for a δ or ε query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShuffleQuery {
    pub n: u64,
    pub eps0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub result: f64,
    pub t_eps: f64,
    pub truncation_tau: f64,
    pub tail_mass: f64,
}

/// `⌊(i a - b)/(a + b)⌋`: the largest `A` rejected in component `i` at
/// threshold `a/b`.
fn rejected_up_to(i: u64, a: u64, b: u64) -> i64 {
    let num = i as i128 * a as i128 - b as i128;
    num.div_euclid((a + b) as i128) as i64
}

impl ShuffleAccountant {
    pub fn new(params: ShuffleParams) -> Self {
        let window = params.window();
        let counts: Vec<u64> = window.counts().map(|(i, _)| i).collect();
        let tables = counts.par_iter().map(|&i| HalfBinomial::new(i)).collect();
        ShuffleAccountant {
            params,
            window,
            tables,
        }
    }

    pub fn params(&self) -> &ShuffleParams {
        &self.params
    }

    pub fn window(&self) -> &CountWindow {
        &self.window
    }

    fn components(&self) -> impl Iterator<Item = (u64, f64, &HalfBinomial)> + '_ {
        self.window
            .counts()
            .zip(&self.tables)
            .map(|((i, lw), table)| (i, lw, table))
    }

    /// Base-curve vertex at threshold `a/b` (`b = 0` is `+∞`).
    pub fn knot_at(&self, a: u64, b: u64) -> Knot {
        let mut alpha_terms = Vec::with_capacity(self.tables.len());
        let mut beta_terms = Vec::with_capacity(self.tables.len());
        for (i, lw, table) in self.components() {
            let s = rejected_up_to(i, a, b);
            alpha_terms.push(lw + table.log_cdf(s));
            beta_terms.push(lw + table.log_upper(s + 2));
        }
        Knot::new(
            log_sum_exp(&alpha_terms).exp(),
            log_sum_exp(&beta_terms).exp(),
        )
    }

    /// Every achievable ratio `a/b` in lowest terms, ascending, with `0/1`
    /// first and `1/0` last.
    pub fn all_thresholds(&self) -> Vec<(u64, u64)> {
        let mut ratios: Vec<(u64, u64)> = Vec::new();
        for (i, _) in self.window.counts() {
            let total = i + 1;
            ratios.extend((0..=total).map(|a| {
                let g = gcd(a, total - a);
                (a / g, (total - a) / g)
            }));
        }
        ratios.par_sort_unstable_by(|x, y| {
            (x.0 as u128 * y.1 as u128).cmp(&(y.0 as u128 * x.1 as u128))
        });
        ratios.dedup();
        ratios
    }

    /// The exact base curve `T(P₀, Q₀)` or its tangent lower bound.
    pub fn base_curve(&self, policy: ThresholdPolicy) -> Result<PiecewiseLinearTradeoff> {
        match policy {
            ThresholdPolicy::All { cap } => {
                if self.params.n > cap {
                    return Err(Error::CapExceeded {
                        what: "n for exact knots",
                        value: self.params.n,
                        cap,
                    });
                }
                let knots: Vec<Knot> = self
                    .all_thresholds()
                    .par_iter()
                    .map(|&(a, b)| self.knot_at(a, b))
                    .collect();
                PiecewiseLinearTradeoff::from_knots_tidy(knots)
            }
            ThresholdPolicy::Grid(k) => {
                if k < 2 {
                    return Err(invalid("grid", format!("{k} thresholds; need at least 2")));
                }
                tangent_envelope(&self.grid_points(k))
            }
        }
    }

    /// Vertices at `k` log-spaced thresholds, rounded to dyadic rationals so
    /// the floors are exact, plus the vertex at `α = 0`.
    fn grid_points(&self, k: usize) -> Vec<TangentPoint> {
        const DEN: u64 = 1 << 24;
        let span = (self.window.last() as f64 + 1.0).ln();
        let mut thresholds: Vec<(u64, u64)> = (0..k)
            .map(|j| {
                let t = (-span + 2.0 * span * j as f64 / (k - 1) as f64).exp();
                (((t * DEN as f64).round() as u64).max(1), DEN)
            })
            .collect();
        thresholds.dedup();
        let mut points: Vec<TangentPoint> = thresholds
            .par_iter()
            .map(|&(a, b)| {
                let knot = self.knot_at(a, b);
                TangentPoint {
                    alpha: knot.alpha,
                    beta: knot.beta,
                    slope: -(b as f64) / a as f64,
                    err: 0.0,
                }
            })
            .collect();
        // Any slope steeper than the first segment supports the curve at 0.
        let start = self.knot_at(0, 1);
        let steepest = self.window.last() as f64 + 1.0;
        points.push(TangentPoint {
            alpha: 0.0,
            beta: start.beta,
            slope: -steepest,
            err: 0.0,
        });
        points
    }

    /// `f = 2w Id + (1 - 2w) T(P₀, Q₀)`, symmetrized.
    pub fn shuffle_curve(&self, policy: ThresholdPolicy) -> Result<PiecewiseLinearTradeoff> {
        advanced_shuffle_bound(&self.base_curve(policy)?, self.params.mix_weight())
    }

    /// Exact `δ(ε)` of the amplified curve, plus the dropped weight.
    ///
    /// With `γ = (e^ε - 2w)/(1 - 2w)`, `δ = (1 - 2w) Σᵢ wᵢ Σ_a (q₀ - γ p₀)₊`
    /// where the positive part keeps the atoms with `b/a ≥ γ`. Every kept
    /// term is nonnegative, so nothing cancels.
    pub fn delta(&self, epsilon: f64) -> Result<f64> {
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon", format!("{epsilon} is negative")));
        }
        let (w, scale) = (self.params.mix_weight(), self.params.count_complement());
        let gamma = (epsilon.exp() - 2.0 * w) / scale;
        let terms: Vec<f64> = self
            .components()
            .map(|(i, lw, table)| lw + Self::log_base_hockey_stick(i, gamma, table))
            .collect();
        let delta = scale * (log_sum_exp(&terms).exp() + self.window.tail_mass);
        Ok(delta.clamp(0.0, 1.0))
    }

    /// `ln Σ_{a ≤ (i+1)/(1+γ)} pmf(a) (1 - γ a/(i+1-a))` for one count.
    fn log_base_hockey_stick(i: u64, gamma: f64, table: &HalfBinomial) -> f64 {
        let total = (i + 1) as f64;
        let last = (total / (1.0 + gamma)).floor().min(total) as i64;
        let terms: Vec<f64> = (0..=last)
            .filter_map(|a| {
                let b = total - a as f64;
                let factor = 1.0 - gamma * a as f64 / b;
                (factor > 0.0).then(|| table.log_pmf(a) + factor.ln())
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// `δ` as ε → ∞: the atoms `Q₀` puts where `P₀` has no mass.
    pub fn delta_floor(&self) -> f64 {
        let terms: Vec<f64> = self
            .components()
            .map(|(_, lw, table)| lw + table.log_pmf(0))
            .collect();
        self.params.count_complement() * (log_sum_exp(&terms).exp() + self.window.tail_mass)
    }

    /// Smallest ε with `δ(ε) ≤ delta`, by bisection to `1e-10`.
    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("{delta} is not in (0, 1)")));
        }
        let at_zero = self.delta(0.0)?;
        if at_zero <= delta {
            return Err(Error::AlreadySatisfied {
                delta_at_zero: at_zero,
            });
        }
        let floor = self.delta_floor();
        if floor >= delta {
            return Err(Error::Unattainable {
                target: delta,
                floor,
            });
        }
        let (mut lo, mut hi) = (0.0, self.params.eps0.max(1.0));
        let mut doublings = 0;
        while self.delta(hi)? > delta {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 64 {
                return Err(Error::NonConvergence {
                    what: "epsilon bracket",
                    limit: 64,
                });
            }
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.delta(mid)? > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Largest achievable threshold `a/b ≤ (1 - 2w)/(e^ε - 2w)`: the knot at
    /// which the slope of the amplified curve first reaches `-e^ε`.
    pub fn t_eps(&self, epsilon: f64) -> f64 {
        let w = self.params.mix_weight();
        let gamma = (epsilon.exp() - 2.0 * w) / self.params.count_complement();
        self.window
            .counts()
            .map(|(i, _)| {
                let total = (i + 1) as f64;
                let a = (total / (1.0 + gamma)).floor();
                a / (total - a)
            })
            .fold(0.0, f64::max)
    }

    /// The ratio `-Σ wᵢ pᵢ(⌊i+1-(i+1)/(t+1)⌋) / Σ wᵢ pᵢ(⌊i-(i+1)/(t+1)⌋)`
    /// of Binom(i, 1/2) masses, a derivative surrogate reported alongside δ.
    pub fn slope_surrogate(&self, t: f64) -> f64 {
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for (i, lw, table) in self.components() {
            let x = i as f64 - (i + 1) as f64 / (t + 1.0);
            upper.push(lw + table.log_pmf((x + 1.0).floor() as i64));
            lower.push(lw + table.log_pmf(x.floor() as i64));
        }
        -(log_sum_exp(&upper) - log_sum_exp(&lower)).exp()
    }

    pub fn delta_query(&self, epsilon: f64) -> Result<ShuffleQuery> {
        Ok(ShuffleQuery {
            eps: Some(epsilon),
            delta: None,
            result: self.delta(epsilon)?,
            t_eps: self.t_eps(epsilon),
            ..self.query_base()
        })
    }

    pub fn epsilon_query(&self, delta: f64) -> Result<ShuffleQuery> {
        let eps = self.epsilon(delta)?;
        Ok(ShuffleQuery {
            eps: None,
            delta: Some(delta),
            result: eps,
            t_eps: self.t_eps(eps),
            ..self.query_base()
        })
    }

    fn query_base(&self) -> ShuffleQuery {
        ShuffleQuery {
            n: self.params.n,
            eps0: self.params.eps0,
            eps: None,
            delta: None,
            result: f64::NAN,
            t_eps: f64::NAN,
            truncation_tau: self.params.truncation_tau,
            tail_mass: self.window.tail_mass,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

pub fn base_knots(
    params: ShuffleParams,
    policy: ThresholdPolicy,
) -> Result<PiecewiseLinearTradeoff> {
    ShuffleAccountant::new(params).base_curve(policy)
}

pub fn shuffle_curve(
    params: ShuffleParams,
    policy: ThresholdPolicy,
) -> Result<PiecewiseLinearTradeoff> {
    ShuffleAccountant::new(params).shuffle_curve(policy)
}

pub fn shuffle_delta(params: ShuffleParams, epsilon: f64) -> Result<f64> {
    ShuffleAccountant::new(params).delta(epsilon)
}

pub fn shuffle_epsilon(params: ShuffleParams, delta: f64) -> Result<f64> {
    ShuffleAccountant::new(params).epsilon(delta)
}
