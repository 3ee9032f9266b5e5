//! Student-t tail probabilities and the one-sided paired test used to decide
//! when the rollout baseline is replaced.

use crate::util;

/// Regularised incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * util::ln(x) + b * util::ln(1.0 - x);
    let front = util::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Outcome of the one-sided paired t-test "candidate costs are lower".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    /// Mean of `baseline - candidate`.
    pub mean_improvement: f64,
    pub t: f64,
    pub p_value: f64,
}

/// One-sided paired t-test on `baseline[k] - candidate[k]`.
pub fn paired_improvement_test(candidate: &[f64], baseline: &[f64]) -> PairedTest {
    assert_eq!(candidate.len(), baseline.len());
    let n = candidate.len();
    if n == 0 {
        return PairedTest {
            mean_improvement: 0.0,
            t: 0.0,
            p_value: 1.0,
        };
    }
    let nf = n as f64;
    let mean = candidate.iter().zip(baseline).map(|(c, b)| b - c).sum::<f64>() / nf;
    let var = if n > 1 {
        candidate
            .iter()
            .zip(baseline)
            .map(|(c, b)| {
                let d = b - c - mean;
                d * d
            })
            .sum::<f64>()
            / (nf - 1.0)
    } else {
        0.0
    };
    if var <= 0.0 || n < 2 {
        let p = if mean > 0.0 && n >= 2 { 0.0 } else { 1.0 };
        let t = if mean > 0.0 { f64::INFINITY } else { 0.0 };
        return PairedTest {
            mean_improvement: mean,
            t,
            p_value: p,
        };
    }
    let t = mean / util::sqrt(var / nf);
    PairedTest {
        mean_improvement: mean,
        t,
        p_value: t_upper_tail(t, nf - 1.0),
    }
}
