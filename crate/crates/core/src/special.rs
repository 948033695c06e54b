//! Gamma-family special functions and log-space arithmetic helpers.
//!
//! All three gamma derivatives are implemented directly (Lanczos series for
//! `ln_gamma`, recurrence plus asymptotic expansion for `digamma` and
//! `trigamma`) so their accuracy is under our control: the regression
//! machinery evaluates them at arguments ranging from ~1e-12 up to ~1e12.

use thiserror::Error;

/// Argument outside the domain of a special function.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{function} is undefined for argument {argument}")]
pub struct DomainError {
    pub function: &'static str,
    pub argument: f64,
}

// Lanczos approximation, g = 607/128, 14 terms. Relative error is at the
// 1e-15 level over the whole positive axis.
const LANCZOS_G: f64 = 4.742_187_5;
const LANCZOS_SER0: f64 = 0.999_999_999_999_997_092;
const LANCZOS_COEF: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

pub(crate) fn ln_gamma_raw(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma_raw needs x > 0, got {x}");
    let tmp = x + LANCZOS_G + 0.5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = LANCZOS_SER0;
    let mut y = x;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

/// Natural log of the gamma function, `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, DomainError> {
    if !(x > 0.0) {
        return Err(DomainError {
            function: "ln_gamma",
            argument: x,
        });
    }
    Ok(ln_gamma_raw(x))
}

// Shift point for the asymptotic expansions below. At x = 10 the truncated
// Bernoulli series are accurate to ~1e-16 relative.
const ASYMPTOTIC_CUTOFF: f64 = 10.0;

pub(crate) fn digamma_raw(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma_raw needs x > 0, got {x}");
    let mut acc = 0.0;
    let mut x = x;
    while x < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n))
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Digamma function (derivative of `ln_gamma`), `x > 0`.
pub fn digamma(x: f64) -> Result<f64, DomainError> {
    if !(x > 0.0) {
        return Err(DomainError {
            function: "digamma",
            argument: x,
        });
    }
    Ok(digamma_raw(x))
}

pub(crate) fn trigamma_raw(x: f64) -> f64 {
    debug_assert!(x > 0.0, "trigamma_raw needs x > 0, got {x}");
    let mut acc = 0.0;
    let mut x = x;
    while x < ASYMPTOTIC_CUTOFF {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0
            + inv
                * (0.5
                    + inv
                        * (1.0 / 6.0
                            - inv2
                                * (1.0 / 30.0
                                    - inv2
                                        * (1.0 / 42.0
                                            - inv2
                                                * (1.0 / 30.0
                                                    - inv2
                                                        * (5.0 / 66.0
                                                            - inv2
                                                                * (691.0 / 2730.0
                                                                    - inv2 * (7.0 / 6.0)))))))));
    acc + series
}

/// Trigamma function (second derivative of `ln_gamma`), `x > 0`.
pub fn trigamma(x: f64) -> Result<f64, DomainError> {
    if !(x > 0.0) {
        return Err(DomainError {
            function: "trigamma",
            argument: x,
        });
    }
    Ok(trigamma_raw(x))
}

/// Natural log of the Beta function `B(a, b)`, both arguments positive.
pub fn ln_beta(a: f64, b: f64) -> Result<f64, DomainError> {
    if !(a > 0.0) {
        return Err(DomainError {
            function: "ln_beta",
            argument: a,
        });
    }
    if !(b > 0.0) {
        return Err(DomainError {
            function: "ln_beta",
            argument: b,
        });
    }
    Ok(ln_gamma_raw(a) + ln_gamma_raw(b) - ln_gamma_raw(a + b))
}

/// Logistic function, numerically stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds transform, the inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(exp(a) + exp(b))` without overflow; `-inf` inputs drop out.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// `ln(sum exp(x_i))` over a slice; empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_86;

    #[test]
    fn ln_gamma_integer_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-14);
        // Gamma(5) = 24
        assert!((ln_gamma(5.0).unwrap() - 24.0_f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn ln_gamma_half() {
        // Gamma(1/2) = sqrt(pi)
        let expect = std::f64::consts::PI.sqrt().ln();
        assert!((ln_gamma(0.5).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn ln_gamma_recurrence_over_wide_range() {
        // ln Gamma(x+1) = ln Gamma(x) + ln x
        let mut x = 1e-3;
        while x < 1e8 {
            let lhs = ln_gamma(x + 1.0).unwrap();
            let rhs = ln_gamma(x).unwrap() + x.ln();
            let scale = lhs.abs().max(1.0);
            assert!(
                ((lhs - rhs) / scale).abs() < 1e-12,
                "recurrence failed at x={x}: {lhs} vs {rhs}"
            );
            x *= 3.7;
        }
    }

    #[test]
    fn digamma_at_one_is_negative_euler() {
        assert!((digamma(1.0).unwrap() + EULER_MASCHERONI).abs() < 1e-13);
    }

    #[test]
    fn trigamma_at_one_is_pi_squared_over_six() {
        let expect = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn digamma_trigamma_recurrences() {
        // psi(x+1) = psi(x) + 1/x and psi'(x+1) = psi'(x) - 1/x^2
        let mut x = 1e-3;
        while x < 1e8 {
            let d = (digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x).abs();
            let scale = digamma(x).unwrap().abs().max(1.0);
            assert!(d / scale < 1e-10, "digamma recurrence at x={x}: {d}");
            let t =
                (trigamma(x + 1.0).unwrap() - trigamma(x).unwrap() + 1.0 / (x * x)).abs();
            let tscale = trigamma(x).unwrap().abs().max(1.0);
            assert!(t / tscale < 1e-10, "trigamma recurrence at x={x}: {t}");
            x *= 3.1;
        }
    }

    #[test]
    fn domain_errors_for_nonpositive_arguments() {
        assert!(ln_gamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
        assert!(trigamma(f64::NAN).is_err());
        assert!(ln_beta(1.0, 0.0).is_err());
    }

    #[test]
    fn sigmoid_logit_roundtrip() {
        for &x in &[-30.0, -4.2, 0.0, 0.37, 12.0] {
            let p = sigmoid(x);
            assert!((logit(p) - x).abs() < 1e-9, "roundtrip at {x}");
        }
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn log_sum_exp_matches_direct_evaluation() {
        let vals = [0.5_f64, 2.0, -1.0];
        let direct = vals.iter().map(|v| f64::exp(*v)).sum::<f64>().ln();
        assert!((log_sum_exp(&vals) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        let shifted = log_sum_exp(&[1234.0, 1232.0]);
        assert!((shifted - (1234.0 + (-2.0_f64).exp().ln_1p())).abs() < 1e-10);
        assert!((log_add_exp(1234.0, 1232.0) - shifted).abs() < 1e-12);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }
}
