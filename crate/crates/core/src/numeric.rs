//! Stable special functions: log-space masses, binomial pmf/cdf and the
//! standard normal distribution.
//!
//! Binomial masses use Loader's saddle-point form (`stirlerr` + `bd0`), which
//! keeps full relative accuracy for trial counts in the tens of thousands.
//! The normal cdf is Cody's rational approximation evaluated directly in `x`,
//! so the deep tails keep their relative accuracy.

use crate::error::{ensure_probability, invalid, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Natural log of a probability mass. `-inf` is an exact zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    /// Wraps a log mass. Values up to `1e-12` above zero are rounding noise
    /// from summation and are clamped to 0.
    pub fn new(ln: f64) -> Result<Self> {
        if ln.is_nan() || ln > 1e-12 {
            return Err(invalid(
                "log mass",
                format!("{ln} is not the log of a probability"),
            ));
        }
        Ok(LogProb(ln.min(0.0)))
    }

    pub fn from_prob(p: f64) -> Result<Self> {
        ensure_probability("probability", p)?;
        Ok(LogProb(p.ln()))
    }

    pub(crate) fn from_ln_unchecked(ln: f64) -> Self {
        debug_assert!(!ln.is_nan());
        LogProb(ln.min(0.0))
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl std::ops::Mul for LogProb {
    type Output = LogProb;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: LogProb) -> LogProb {
        LogProb(self.0 + rhs.0)
    }
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(x_i)`, with the largest term factored out and the rest summed
/// with compensation, so `ln_1p` sees only the small remainder.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let Some((imax, &max)) = xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return f64::NEG_INFINITY;
    };
    if max.is_infinite() || max.is_nan() {
        return max;
    }
    let rest = neumaier_sum(
        xs.iter()
            .enumerate()
            .filter(|&(i, _)| i != imax)
            .map(|(_, &x)| (x - max).exp()),
    );
    max + rest.ln_1p()
}

/// Compensated (Kahan–Babuška–Neumaier) summation.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Pairwise tree summation with a fixed split order, so the result depends
/// only on the slice contents and never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return neumaier_sum(xs.iter().copied());
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

// Stirling series coefficients 1/12, 1/360, 1/1260, ...
const S0: f64 = 0.083_333_333_333_333_333;
const S1: f64 = 0.002_777_777_777_777_777_8;
const S2: f64 = 0.000_793_650_793_650_793_65;
const S3: f64 = 0.000_595_238_095_238_095_24;
const S4: f64 = 0.000_841_750_841_750_841_75;
const S5: f64 = 0.001_917_526_917_526_917_5;
const S6: f64 = 0.006_410_256_410_256_410_3;

/// `ln n! - [(n + 1/2) ln n - n + ln sqrt(2π)]` for integers 0..=15.
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_2,
    0.041_340_695_955_409_294_093_822_1,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_567,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_318,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_152,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_690,
];

/// Stirling remainder for a nonnegative integer `n`. `n = 0` is never used
/// by the callers (the boundary cases are handled separately).
fn stirlerr(n: u64) -> f64 {
    if n <= 15 {
        return STIRLERR_SMALL[n as usize];
    }
    let x = n as f64;
    let nn = x * x;
    if n > 15_700_000 {
        S0 / x
    } else if n > 6180 {
        (S0 - S1 / nn) / x
    } else if n > 205 {
        (S0 - (S1 - S2 / nn) / nn) / x
    } else if n > 86 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / x
    } else if n > 27 {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - (S4 - (S5 - S6 / nn) / nn) / nn) / nn) / nn) / nn) / x
    }
}

/// Deviance term `x ln(x/np) + np - x`, by series when `x ≈ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

fn check_trials(m: i64, p: f64) -> Result<()> {
    if m < 0 {
        return Err(invalid("trials", format!("{m} is negative")));
    }
    ensure_probability("p", p)
}

/// `ln P[Binom(m, p) = k]`.
pub fn binom_log_pmf(k: i64, m: i64, p: f64) -> Result<LogProb> {
    check_trials(m, p)?;
    Ok(LogProb(binom_log_pmf_raw(k, m, p, 1.0 - p)))
}

/// As [`binom_log_pmf`] with the complement `q = 1 - p` supplied by the
/// caller, for parameters whose complement has a more accurate closed form.
pub fn binom_log_pmf_pq(k: i64, m: i64, p: f64, q: f64) -> Result<LogProb> {
    check_trials(m, p)?;
    ensure_probability("q", q)?;
    if (p + q - 1.0).abs() > 1e-12 {
        return Err(invalid("q", format!("p + q = {} is not 1", p + q)));
    }
    Ok(LogProb(binom_log_pmf_raw(k, m, p, q)))
}

fn binom_log_pmf_raw(k: i64, m: i64, p: f64, q: f64) -> f64 {
    if k < 0 || k > m {
        return f64::NEG_INFINITY;
    }
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == m { 0.0 } else { f64::NEG_INFINITY };
    }
    let mf = m as f64;
    if k == 0 {
        if m == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -bd0(mf, mf * q) - mf * p
        } else {
            mf * q.ln()
        };
    }
    if k == m {
        return if q < 0.1 {
            -bd0(mf, mf * p) - mf * q
        } else {
            mf * p.ln()
        };
    }
    let kf = k as f64;
    let lc = stirlerr(m as u64)
        - stirlerr(k as u64)
        - stirlerr((m - k) as u64)
        - bd0(kf, mf * p)
        - bd0(mf - kf, mf * q);
    let lf = LN_2PI + kf.ln() + (-kf / mf).ln_1p();
    lc - 0.5 * lf
}

/// `ln P[Binom(m, p) ≤ k]`; `k < 0` gives an exact zero and `k ≥ m` an exact one.
pub fn binom_log_cdf(k: i64, m: i64, p: f64) -> Result<LogProb> {
    check_trials(m, p)?;
    if k < 0 {
        return Ok(LogProb::ZERO);
    }
    if k >= m {
        return Ok(LogProb::ONE);
    }
    if p == 0.5 {
        return Ok(LogProb::from_ln_unchecked(half_log_cdf(k, m)));
    }
    if p == 0.0 {
        return Ok(LogProb::ONE);
    }
    if p == 1.0 {
        return Ok(LogProb::ZERO);
    }
    Ok(LogProb::from_ln_unchecked(tail_log_cdf(k, m, p)))
}

/// Sums whichever tail of Binom(m, 1/2) is smaller; the upper tail is the
/// mirror image of the lower one.
fn half_log_cdf(k: i64, m: i64) -> f64 {
    let lower = |k: i64| -> f64 {
        let terms: Vec<f64> = (0..=k).map(|j| binom_log_pmf_raw(j, m, 0.5, 0.5)).collect();
        log_sum_exp(&terms)
    };
    if 2 * k < m {
        lower(k)
    } else {
        (-lower(m - k - 1).exp()).ln_1p()
    }
}

/// Smaller-tail sum anchored at the saddle-point pmf of the boundary term.
/// Deeper terms follow from the exact ratio of neighbouring masses, so only
/// an O(1) relative factor accumulates rounding.
fn tail_log_cdf(k: i64, m: i64, p: f64) -> f64 {
    let q = 1.0 - p;
    if (k as f64) < m as f64 * p {
        // pmf(j-1) / pmf(j) = j q / ((m - j + 1) p)
        let rel = relative_tail(k, -1, |j| {
            (j > 0).then(|| j as f64 * q / ((m - j + 1) as f64 * p))
        });
        binom_log_pmf_raw(k, m, p, q) + rel.ln()
    } else {
        // pmf(j+1) / pmf(j) = (m - j) p / ((j + 1) q)
        let rel = relative_tail(k + 1, 1, |j| {
            (j < m).then(|| (m - j) as f64 * p / ((j + 1) as f64 * q))
        });
        let upper = (binom_log_pmf_raw(k + 1, m, p, q) + rel.ln()).exp();
        (-upper).ln_1p()
    }
}

/// Σ of `1, r(j0), r(j0) r(j0+dir), ...`, stopping once terms fall below
/// double precision of the running total.
fn relative_tail(start: i64, dir: i64, ratio: impl Fn(i64) -> Option<f64>) -> f64 {
    let mut total = 0.0;
    let mut comp = 0.0;
    let mut term = 1.0;
    let mut j = start;
    loop {
        let t = total + term;
        comp += (total - t) + term;
        total = t;
        match ratio(j) {
            Some(r) if term > 1e-18 * total => {
                term *= r;
                j += dir;
            }
            _ => return total + comp,
        }
    }
}

/// Natural-log pmf of Binom(m, 1/2) at k = 0..=m.
pub fn half_binomial_log_pmf(m: u64) -> Vec<f64> {
    let m = m as i64;
    (0..=m).map(|k| binom_log_pmf_raw(k, m, 0.5, 0.5)).collect()
}

/// Natural-log cdf of Binom(m, 1/2) at k = 0..=m, accumulated from whichever
/// tail is nearer so neither half loses precision to cancellation.
pub fn half_binomial_log_cdf(log_pmf: &[f64]) -> Vec<f64> {
    let len = log_pmf.len();
    let mut lower = vec![f64::NEG_INFINITY; len];
    let mut acc = f64::NEG_INFINITY;
    for (j, &lp) in log_pmf.iter().enumerate() {
        acc = log_add_exp(acc, lp);
        lower[j] = acc;
    }
    // Upper half from the mirrored lower tail: F(k) = 1 - F(m - k - 1).
    let m = len - 1;
    let mut out = lower.clone();
    for k in 0..len {
        if 2 * k >= m && k < m {
            out[k] = (-lower[m - k - 1].exp()).ln_1p();
        }
    }
    if let Some(last) = out.last_mut() {
        *last = 0.0;
    }
    out
}

#[allow(clippy::excessive_precision)]
mod cody {
    pub const A: [f64; 5] = [
        2.2352520354606839287,
        161.02823106855587881,
        1067.6894854603709582,
        18154.981253343561249,
        0.065682337918207449113,
    ];
    pub const B: [f64; 4] = [
        47.20258190468824187,
        976.09855173777669322,
        10260.932208618978205,
        45507.789335026729956,
    ];
    pub const C: [f64; 9] = [
        0.39894151208813466764,
        8.8831497943883759412,
        93.506656132177855979,
        597.27027639480026226,
        2494.5375852903726711,
        6848.1904505362823326,
        11602.651437647350124,
        9842.7148383839780218,
        1.0765576773720192317e-8,
    ];
    pub const D: [f64; 8] = [
        22.266688044328115691,
        235.38790178262499861,
        1519.377599407554805,
        6485.558298266760755,
        18615.571640885098091,
        34900.952721145977266,
        38912.003286093271411,
        19685.429676859990727,
    ];
    pub const P: [f64; 6] = [
        0.21589853405795699,
        0.1274011611602473639,
        0.022235277870649807,
        0.001421619193227893466,
        2.9112874951168792e-5,
        0.02307344176494017303,
    ];
    pub const Q: [f64; 5] = [
        1.28426009614491121,
        0.468238212480865118,
        0.0659881378689285515,
        0.00378239633202758244,
        7.29751555083966205e-5,
    ];
}

/// Returns `(Φ(x), 1 - Φ(x))`, each with full relative accuracy.
fn normal_both_tails(x: f64) -> (f64, f64) {
    use cody::*;
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    let y = x.abs();
    // exp(-x²/2) with x² split so the exponent is exact in its leading part.
    let gauss_factor = |z: f64| {
        let zsq = (z * 16.0).trunc() / 16.0;
        let del = (z - zsq) * (z + zsq);
        (-zsq * zsq * 0.5).exp() * (-del * 0.5).exp()
    };
    if y <= 0.674_489_75 {
        let (mut num, mut den) = (0.0, 0.0);
        if y > f64::EPSILON * 0.5 {
            let xsq = x * x;
            num = A[4] * xsq;
            den = xsq;
            for i in 0..3 {
                num = (num + A[i]) * xsq;
                den = (den + B[i]) * xsq;
            }
        }
        let t = x * (num + A[3]) / (den + B[3]);
        return (0.5 + t, 0.5 - t);
    }
    let small_tail = if y <= 32f64.sqrt() {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        gauss_factor(y) * (num + C[7]) / (den + D[7])
    } else if y < 40.0 {
        let xsq = 1.0 / (x * x);
        let mut num = P[5] * xsq;
        let mut den = xsq;
        for i in 0..4 {
            num = (num + P[i]) * xsq;
            den = (den + Q[i]) * xsq;
        }
        let t = xsq * (num + P[4]) / (den + Q[4]);
        gauss_factor(y) * (FRAC_1_SQRT_2PI - t) / y
    } else {
        0.0
    };
    if x > 0.0 {
        (1.0 - small_tail, small_tail)
    } else {
        (small_tail, 1.0 - small_tail)
    }
}

/// Standard normal cdf Φ(x).
pub fn gaussian_cdf(x: f64) -> f64 {
    normal_both_tails(x).0
}

/// Standard normal survival function 1 - Φ(x), accurate in the upper tail.
pub fn gaussian_sf(x: f64) -> f64 {
    normal_both_tails(x).1
}

pub fn gaussian_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Φ⁻¹(q) for q in (0, 1).
pub fn gaussian_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid("quantile level", format!("{q} is not in (0, 1)")));
    }
    if q > 0.5 {
        // 1 - q is exact on [0.5, 1).
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

/// Quantile for q ≤ 1/2: an inverse-erfc seed polished by Halley steps on
/// the relative residual, which stays well conditioned in the far tail.
fn lower_quantile(q: f64) -> f64 {
    if q == 0.5 {
        return 0.0;
    }
    let mut x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * q);
    for _ in 0..3 {
        let cdf = gaussian_cdf(x);
        if cdf <= 0.0 {
            break;
        }
        let u = (cdf - q) / gaussian_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-17 * x.abs().max(1.0) {
            break;
        }
    }
    x
}
