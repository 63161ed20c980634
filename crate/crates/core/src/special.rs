//! Special functions used by the closed-form oracles and tail intervals.

use statrs::function::beta::beta_reg;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Natural log of the standard normal CDF, accurate in the far left tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        // Mills ratio asymptotics
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Two-sided Clopper-Pearson upper limit for `successes` out of `trials`
/// at confidence `1 - alpha`.
pub fn clopper_pearson_upper(successes: u64, trials: u64, alpha: f64) -> f64 {
    assert!(trials > 0 && successes <= trials);
    if successes == trials {
        return 1.0;
    }
    let tail = alpha / 2.0;
    if successes == 0 {
        return 1.0 - tail.powf(1.0 / trials as f64);
    }
    // upper p solves P(Bin(n, p) <= k) = tail, i.e. I_p(k + 1, n - k) = 1 - tail
    let a = successes as f64 + 1.0;
    let b = (trials - successes) as f64;
    let (mut lo, mut hi) = (successes as f64 / trials as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < 1.0 - tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    hi
}
