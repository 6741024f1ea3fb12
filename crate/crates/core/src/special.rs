//! Special functions behind the cap and ball measures.

use crate::error::{invalid, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 20_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid(format!("beta parameters must be positive: a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("incomplete beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_lower_reg(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(invalid(format!("gamma shape must be positive, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(invalid(format!("gamma argument must be non-negative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let ln_front = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..CF_MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * CF_EPS {
                break;
            }
        }
        Ok((sum * ln_front.exp()).clamp(0.0, 1.0))
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / CF_TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=CF_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < CF_TINY {
                d = CF_TINY;
            }
            c = b + an / c;
            if c.abs() < CF_TINY {
                c = CF_TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < CF_EPS {
                break;
            }
        }
        Ok((1.0 - ln_front.exp() * h).clamp(0.0, 1.0))
    }
}

/// Quantile tolerance of [`chi_square_quantile`].
pub const QUANTILE_TOL: f64 = 1e-10;

/// Inverse CDF of the chi-square distribution with `dof` degrees of freedom,
/// found by bisection on `P(dof/2, x/2)`.
pub fn chi_square_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(invalid(format!("degrees of freedom must be positive, got {dof}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("quantile level {p} outside (0, 1)")));
    }
    let cdf = |x: f64| gamma_lower_reg(dof / 2.0, x / 2.0);
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while cdf(hi)? < p {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Radius of the centered ball holding 99% of the mass of N(0, I_d).
pub fn ball99(dim: usize) -> Result<f64> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    Ok(chi_square_quantile(dim as f64, 0.99)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn beta_reg_agrees_with_statrs() {
        for &(a, b) in &[(0.5, 0.5), (1.0, 0.5), (1.5, 0.5), (31.5, 0.5), (1535.5, 0.5), (3.0, 7.0)] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let ours = beta_reg(a, b, x).unwrap();
                let theirs = statrs::function::beta::beta_reg(a, b, x);
                assert!((ours - theirs).abs() < 1e-12, "a={a} b={b} x={x}: {ours} vs {theirs}");
            }
        }
    }

    #[test]
    fn beta_reg_closed_form_b_one() {
        // I_x(a, 1) = x^a
        for i in 1..10 {
            let x = i as f64 / 10.0;
            assert!((beta_reg(2.5, 1.0, x).unwrap() - x.powf(2.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn chi_square_quantile_agrees_with_statrs() {
        for dof in [1usize, 2, 3, 6, 16, 64, 3072] {
            let ours = chi_square_quantile(dof as f64, 0.99).unwrap();
            let theirs = ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.99);
            assert!((ours - theirs).abs() < 1e-6 * theirs, "dof={dof}: {ours} vs {theirs}");
            let back = gamma_lower_reg(dof as f64 / 2.0, ours / 2.0).unwrap();
            assert!((back - 0.99).abs() < 1e-9);
        }
    }

    #[test]
    fn ball99_in_one_dimension() {
        // P(|z| <= r) = 0.99 for z ~ N(0,1) gives r = 2.5758293035489...
        assert!((ball99(1).unwrap() - 2.575_829_303_548_9).abs() < 1e-9);
    }

    #[test]
    fn domain_errors() {
        assert!(beta_reg(0.0, 1.0, 0.5).is_err());
        assert!(beta_reg(1.0, 1.0, 1.5).is_err());
        assert!(chi_square_quantile(3.0, 1.0).is_err());
        assert!(ball99(0).is_err());
    }
}
