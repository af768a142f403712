//! Brute-force ground truth for finite distribution pairs.
//!
//! Atoms are sorted by likelihood ratio `q/p` and rejected greedily, which
//! by Neyman–Pearson traces the exact trade-off curve. Nothing here reuses
//! the closed forms of [`shuffle`](crate::shuffle); the shuffle pair is
//! enumerated atom by atom from binomial masses.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::inv_beta_reg;

use crate::error::{invalid, Error, Result};
use crate::numeric::{
    binom_log_pmf, binom_log_pmf_pq, log_add_exp, log_sum_exp, neumaier_sum, LogProb,
};
use crate::shuffle::ShuffleParams;
use crate::tradeoff::{Knot, PiecewiseLinearTradeoff};

/// Largest `n` accepted by [`build_shuffle_pair`].
pub const SHUFFLE_PAIR_CAP: u64 = 20_000;
/// Components and atoms with log mass below this are dropped.
pub const LOG_MASS_FLOOR: f64 = -800.0;
/// Log likelihood ratios closer than this are treated as ties.
const LOG_RATIO_TIE: f64 = 1e-14;
/// Slack on total mass in [`DiscretePair::new`].
const NORMALIZATION_TOL: f64 = 1e-12;

/// An exact ratio `q/p = num/den`, compared by cross-multiplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RatioKey {
    pub num: u64,
    pub den: u64,
}

impl RatioKey {
    fn cmp_value(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

/// Two distributions over a shared finite support. Atoms may carry no mass
/// under either side, which lets mixture components share one support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePair {
    p: Vec<LogProb>,
    q: Vec<LogProb>,
    /// Exact ratio keys whose order matches `q/p`, when known.
    keys: Option<Vec<RatioKey>>,
}

impl DiscretePair {
    pub fn new(p: Vec<LogProb>, q: Vec<LogProb>) -> Result<Self> {
        Self::with_keys(p, q, None)
    }

    fn with_keys(p: Vec<LogProb>, q: Vec<LogProb>, keys: Option<Vec<RatioKey>>) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(invalid(
                "pair",
                format!("supports of size {} and {}", p.len(), q.len()),
            ));
        }
        for (name, side) in [("p", &p), ("q", &q)] {
            let logs: Vec<f64> = side.iter().map(|x| x.ln()).collect();
            let total = log_sum_exp(&logs).exp();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(invalid("pair", format!("{name} sums to {total}")));
            }
        }
        Ok(DiscretePair { p, q, keys })
    }

    /// From probability vectors. Atoms with zero mass under both are dropped.
    pub fn from_probs(p: &[f64], q: &[f64]) -> Result<Self> {
        if p.len() != q.len() {
            return Err(invalid(
                "pair",
                format!("supports of size {} and {}", p.len(), q.len()),
            ));
        }
        let mut lp = Vec::with_capacity(p.len());
        let mut lq = Vec::with_capacity(q.len());
        for (&a, &b) in p.iter().zip(q) {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            lp.push(LogProb::from_prob(a)?);
            lq.push(LogProb::from_prob(b)?);
        }
        Self::new(lp, lq)
    }

    /// ε₀-randomized response on one bit.
    pub fn randomized_response(eps0: f64) -> Result<Self> {
        let params = ShuffleParams::new(1, eps0)?;
        build_shuffle_pair(params)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p(&self) -> &[LogProb] {
        &self.p
    }

    pub fn q(&self) -> &[LogProb] {
        &self.q
    }

    pub fn swapped(&self) -> Self {
        let keys = self.keys.as_ref().map(|k| {
            k.iter()
                .map(|r| RatioKey {
                    num: r.den,
                    den: r.num,
                })
                .collect()
        });
        DiscretePair {
            p: self.q.clone(),
            q: self.p.clone(),
            keys,
        }
    }

    /// Coarsens the support by pooling atoms `i` and `j`.
    pub fn merge_atoms(&self, i: usize, j: usize) -> Result<Self> {
        if i == j || i >= self.len() || j >= self.len() {
            return Err(invalid(
                "atoms",
                format!("cannot merge {i} and {j} of {}", self.len()),
            ));
        }
        let (keep, drop) = (i.min(j), i.max(j));
        let mut p = self.p.clone();
        let mut q = self.q.clone();
        p[keep] = LogProb::from_ln_unchecked(log_add_exp(p[keep].ln(), p[drop].ln()));
        q[keep] = LogProb::from_ln_unchecked(log_add_exp(q[keep].ln(), q[drop].ln()));
        p.remove(drop);
        q.remove(drop);
        Ok(DiscretePair { p, q, keys: None })
    }

    /// `Σ wᵢ Pᵢ` against `Σ w'ᵢ Qᵢ` for pairs on a common support.
    pub fn mixture(components: &[&DiscretePair], w_p: &[f64], w_q: &[f64]) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(invalid("components", "empty mixture"));
        };
        if components.iter().any(|c| c.len() != first.len()) {
            return Err(invalid("components", "supports differ in size"));
        }
        if w_p.len() != components.len() || w_q.len() != components.len() {
            return Err(invalid("weights", "one weight per component is required"));
        }
        let mix =
            |weights: &[f64], side: fn(&DiscretePair) -> &[LogProb]| -> Result<Vec<LogProb>> {
                let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
                (0..first.len())
                    .map(|a| {
                        let terms: Vec<f64> = components
                            .iter()
                            .zip(&logs)
                            .map(|(c, lw)| lw + side(c)[a].ln())
                            .collect();
                        LogProb::new(log_sum_exp(&terms))
                    })
                    .collect()
            };
        let p = mix(w_p, |c| c.p())?;
        let q = mix(w_q, |c| c.q())?;
        // Atoms without mass in either mixture carry no information.
        let (p, q): (Vec<LogProb>, Vec<LogProb>) = p
            .into_iter()
            .zip(q)
            .filter(|(a, b)| !(a.is_zero() && b.is_zero()))
            .unzip();
        Self::new(p, q)
    }

    /// Atom indices from largest `q/p` to smallest, grouped into ties.
    fn ratio_groups(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        match &self.keys {
            Some(keys) => {
                order.par_sort_unstable_by(|&x, &y| keys[y].cmp_value(&keys[x]).then(x.cmp(&y)));
                for idx in order {
                    match groups.last_mut() {
                        Some(g) if keys[g[0]].cmp_value(&keys[idx]).is_eq() => g.push(idx),
                        _ => groups.push(vec![idx]),
                    }
                }
            }
            None => {
                let lr: Vec<f64> = self
                    .p
                    .iter()
                    .zip(&self.q)
                    .map(|(p, q)| log_ratio(q.ln(), p.ln()))
                    .collect();
                order.par_sort_unstable_by(|&x, &y| lr[y].total_cmp(&lr[x]).then(x.cmp(&y)));
                for idx in order {
                    match groups.last_mut() {
                        Some(g) if same_ratio(lr[*g.last().unwrap()], lr[idx]) => g.push(idx),
                        _ => groups.push(vec![idx]),
                    }
                }
            }
        }
        groups
    }
}

/// `ln(x) - ln(y)` with `x/0 = +∞` and `0/y = -∞`.
fn log_ratio(ln_x: f64, ln_y: f64) -> f64 {
    if ln_y == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        ln_x - ln_y
    }
}

fn same_ratio(a: f64, b: f64) -> bool {
    a == b || (a.is_finite() && b.is_finite() && (a - b).abs() <= LOG_RATIO_TIE)
}

/// Base pair `(P₀, Q₀)` of the shuffle model, mixed over the count `C`.
pub fn build_shuffle_base_pair(params: ShuffleParams) -> Result<DiscretePair> {
    build_shuffle_atoms(params, false)
}

/// The dominating pair `P = (1-w)P₀ + wQ₀`, `Q = (1-w)Q₀ + wP₀`.
pub fn build_shuffle_pair(params: ShuffleParams) -> Result<DiscretePair> {
    build_shuffle_atoms(params, true)
}

fn build_shuffle_atoms(params: ShuffleParams, mixed: bool) -> Result<DiscretePair> {
    let n = params.n();
    if n > SHUFFLE_PAIR_CAP {
        return Err(Error::CapExceeded {
            what: "n for the shuffle pair",
            value: n,
            cap: SHUFFLE_PAIR_CAP,
        });
    }
    let m = (n - 1) as i64;
    let (pc, qc) = (params.count_prob(), params.count_complement());
    let w = params.mix_weight();
    let (ln_stay, ln_flip) = ((1.0 - w).ln(), w.ln());
    let per_count: Vec<Vec<(LogProb, LogProb, RatioKey)>> = (0..=m)
        .into_par_iter()
        .map(|i| {
            let lw = binom_log_pmf_pq(i, m, pc, qc)
                .expect("valid count parameters")
                .ln();
            if lw < LOG_MASS_FLOOR {
                return Vec::new();
            }
            (0..=i + 1)
                .filter_map(|a| {
                    // (a, b) = (A+1, i-A) under P₀ and (A, i-A+1) under Q₀.
                    let b = i + 1 - a;
                    let lp0 = lw + binom_log_pmf(a - 1, i, 0.5).expect("valid").ln();
                    let lq0 = lw + binom_log_pmf(a, i, 0.5).expect("valid").ln();
                    let (lp, lq) = if mixed {
                        (
                            log_add_exp(ln_stay + lp0, ln_flip + lq0),
                            log_add_exp(ln_stay + lq0, ln_flip + lp0),
                        )
                    } else {
                        (lp0, lq0)
                    };
                    if lp.max(lq) < LOG_MASS_FLOOR {
                        return None;
                    }
                    // q/p is increasing in b/a for both pairs since w < 1/2.
                    let key = RatioKey {
                        num: b as u64,
                        den: a as u64,
                    };
                    Some((
                        LogProb::from_ln_unchecked(lp),
                        LogProb::from_ln_unchecked(lq),
                        key,
                    ))
                })
                .collect()
        })
        .collect();
    let atoms = per_count.into_iter().flatten();
    let (mut p, mut q, mut keys) = (Vec::new(), Vec::new(), Vec::new());
    for (lp, lq, key) in atoms {
        p.push(lp);
        q.push(lq);
        keys.push(key);
    }
    DiscretePair::with_keys(p, q, Some(keys))
}

/// Exact `T(P, Q)` by rejecting atoms in decreasing `q/p`.
pub fn exact_tradeoff(pair: &DiscretePair) -> Result<PiecewiseLinearTradeoff> {
    let groups = pair.ratio_groups();
    let mass = |side: &[LogProb], g: &[usize]| neumaier_sum(g.iter().map(|&i| side[i].prob()));
    let p_mass: Vec<f64> = groups.iter().map(|g| mass(&pair.p, g)).collect();
    let q_mass: Vec<f64> = groups.iter().map(|g| mass(&pair.q, g)).collect();
    // Type II errors as suffix sums keep relative accuracy near zero.
    let mut beta = vec![0.0; groups.len() + 1];
    let mut acc = Compensated::default();
    for j in (0..groups.len()).rev() {
        acc.add(q_mass[j]);
        beta[j] = acc.value();
    }
    let mut knots = Vec::with_capacity(groups.len() + 1);
    knots.push(Knot::new(0.0, beta[0]));
    let mut alpha = Compensated::default();
    for j in 0..groups.len() {
        alpha.add(p_mass[j]);
        knots.push(Knot::new(alpha.value(), beta[j + 1]));
    }
    PiecewiseLinearTradeoff::from_knots_tidy(knots)
}

#[derive(Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `H_γ(P ‖ Q) = Σ (p - γ q)₊` for `γ ≥ 1`.
pub fn exact_hockey_stick(pair: &DiscretePair, gamma: f64) -> Result<f64> {
    if !(gamma >= 1.0) {
        return Err(invalid("gamma", format!("{gamma} is below 1")));
    }
    let ln_gamma = gamma.ln();
    let terms = pair.p.iter().zip(&pair.q).filter_map(|(p, q)| {
        let gap = log_ratio(q.ln() + ln_gamma, p.ln());
        // p - γq = p (1 - γq/p), positive when γq/p < 1.
        (gap < 0.0).then(|| p.prob() * -gap.exp_m1())
    });
    Ok(neumaier_sum(terms).clamp(0.0, 1.0))
}

/// Smallest ε with `H_{e^ε}(P ‖ Q) ≤ delta`, by bisection to `1e-12`.
pub fn exact_epsilon(pair: &DiscretePair, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("{delta} is not in (0, 1)")));
    }
    let at_zero = exact_hockey_stick(pair, 1.0)?;
    if at_zero <= delta {
        return Err(Error::AlreadySatisfied {
            delta_at_zero: at_zero,
        });
    }
    // Mass that no γ can cancel.
    let floor = neumaier_sum(
        pair.p
            .iter()
            .zip(&pair.q)
            .filter(|(_, q)| q.is_zero())
            .map(|(p, _)| p.prob()),
    );
    if floor >= delta {
        return Err(Error::Unattainable {
            target: delta,
            floor,
        });
    }
    let max_log_ratio = pair
        .p
        .iter()
        .zip(&pair.q)
        .filter(|(p, q)| !q.is_zero() && !p.is_zero())
        .map(|(p, q)| p.ln() - q.ln())
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, max_log_ratio);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if exact_hockey_stick(pair, mid.exp())? > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Settings for the sampling attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloSpec {
    pub samples: u64,
    pub seed: u64,
    /// Two-sided error probability shared by all candidate tests.
    pub alpha_level: f64,
    /// Number of likelihood-ratio tests tried.
    pub tests: usize,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        MonteCarloSpec {
            samples: 10_000_000,
            seed: 0,
            alpha_level: 0.05,
            tests: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    /// Largest certified ε lower bound over the tests, 0 when none certifies.
    pub epsilon_lower: f64,
    /// Index of the winning test in decreasing-ratio order, if any.
    pub best_test: Option<usize>,
    pub samples: u64,
    pub seed: u64,
}

/// Clopper–Pearson bounds on a binomial proportion at total level `level`.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    let (k, n) = (successes as f64, trials as f64);
    let half = 0.5 * level;
    let lower = if successes == 0 {
        0.0
    } else {
        inv_beta_reg(k, n - k + 1.0, half)
    };
    let upper = if successes == trials {
        1.0
    } else {
        inv_beta_reg(k + 1.0, n - k, 1.0 - half)
    };
    (lower, upper)
}

/// Sampling attack: for each candidate rejection region `R` (prefixes of the
/// likelihood-ratio order), estimate `P(R)` and `Q(R)` from `samples` draws
/// each and certify `ε ≥ ln((Q(R)_low - δ) / P(R)_high)`.
pub fn monte_carlo_epsilon(
    pair: &DiscretePair,
    delta: f64,
    spec: MonteCarloSpec,
) -> Result<MonteCarloReport> {
    if spec.samples == 0 || spec.tests == 0 {
        return Err(invalid(
            "monte carlo",
            "needs at least one sample and one test",
        ));
    }
    let curve = exact_tradeoff(pair)?;
    let knots = curve.knots();
    // Spread the candidate tests over the knots with positive alpha.
    let inner: Vec<Knot> = knots
        .iter()
        .copied()
        .filter(|k| k.alpha > 0.0 && k.beta < 1.0)
        .collect();
    let picks: Vec<Knot> = if inner.len() <= spec.tests {
        inner
    } else {
        (0..spec.tests)
            .map(|j| inner[j * (inner.len() - 1) / (spec.tests - 1).max(1)])
            .collect()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let level = spec.alpha_level / picks.len().max(1) as f64;
    let mut best = (0.0, None);
    for (j, k) in picks.iter().enumerate() {
        let draw = |prob: f64, rng: &mut ChaCha20Rng| -> Result<u64> {
            let dist = Binomial::new(spec.samples, prob.clamp(0.0, 1.0))
                .map_err(|e| invalid("monte carlo", e.to_string()))?;
            Ok(dist.sample(rng))
        };
        let hits_p = draw(k.alpha, &mut rng)?;
        let hits_q = draw(1.0 - k.beta, &mut rng)?;
        let (_, p_high) = clopper_pearson(hits_p, spec.samples, level);
        let (q_low, _) = clopper_pearson(hits_q, spec.samples, level);
        if q_low > delta && p_high > 0.0 {
            let eps = ((q_low - delta) / p_high).ln();
            if eps > best.0 {
                best = (eps, Some(j));
            }
        }
    }
    Ok(MonteCarloReport {
        epsilon_lower: best.0,
        best_test: best.1,
        samples: spec.samples,
        seed: spec.seed,
    })
}
