//! Scalar special functions used by the likelihoods.

use std::f64::consts::PI;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
///
/// Lanczos below 10, Stirling series above. Relative error stays below
/// 1e-13 on `[0.5, 1e6)` away from the roots at 1 and 2, where the absolute
/// error is below 1e-15.
pub fn ln_gamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        return stirling_ln_gamma(x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    HALF_LN_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

fn stirling_ln_gamma(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k(2k-1) x^{2k-1})
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0)))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `ln C(m, n)` for `n <= m`.
pub fn ln_choose(m: u64, n: u64) -> f64 {
    ln_factorial(m) - ln_factorial(n) - ln_factorial(m - n)
}

/// Digamma function ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || (x <= 0.0 && x == x.floor()) {
        return f64::NAN;
    }
    if x < 0.0 {
        return digamma(1.0 - x) - PI / (PI * x).tan();
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let tail = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    acc + x.ln() - 0.5 / x - tail
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_factorial_by_sum(n: u64) -> f64 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn ln_gamma_matches_factorial_sums() {
        for n in [3u64, 5, 10, 11, 25, 100, 1000, 20_000] {
            let exact = ln_factorial_by_sum(n - 1);
            let got = ln_gamma(n as f64);
            assert!(
                ((got - exact) / exact).abs() < 1e-12,
                "n={n}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn ln_gamma_half_integers() {
        // Γ(k + 1/2) = (2k)! √π / (4^k k!)
        for k in [0u64, 1, 2, 4, 7, 9, 15, 40] {
            let exact = ln_factorial_by_sum(2 * k) + 0.5 * PI.ln()
                - (k as f64) * 4f64.ln()
                - ln_factorial_by_sum(k);
            let got = ln_gamma(k as f64 + 0.5);
            let scale = exact.abs().max(1.0);
            assert!((got - exact).abs() / scale < 1e-13, "k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn ln_gamma_near_roots_and_large() {
        assert!(ln_gamma(1.0).abs() < 1e-15);
        assert!(ln_gamma(2.0).abs() < 1e-15);
        // Stirling/Lanczos seam is continuous
        let below = ln_gamma(10.0 - 1e-9);
        let above = ln_gamma(10.0);
        assert!((above - below).abs() < 1e-7);
        let big = 999_999.5;
        let rec = ln_gamma(big + 1.0) - ln_gamma(big);
        assert!((rec - big.ln()).abs() < 1e-8);
    }

    #[test]
    fn digamma_known_values_and_derivative() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-13);
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-13);
        for x in [0.3f64, 1.7, 4.2, 12.5, 300.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((digamma(x) - fd).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
    }
}
