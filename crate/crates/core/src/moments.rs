//! Cutoff moments of the exponential law and the derived ratios.
//!
//! With `X` exponential of mean `rho` and the cutoff
//! `tau_K(r) = min(r, K)`:
//! `m1 = E tau_K(X)`, `m11 = E[X tau_K(X)]`, `m2 = E tau_K(X)^2`,
//! `Theta_K = (2 m11 - rho m1)/3`, `Gamma_K = (2/3) m2 - (1/3) m1^2`.

use crate::error::{invalid, Result};

/// `1 - e^{-x}`.
fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `1 - (1 + x) e^{-x}`, accurate for small `x`.
fn one_minus_linear_exp(x: f64) -> f64 {
    if x < 0.1 {
        // sum_{n>=2} (-1)^n (n-1) x^n / n!
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        let mut n = 2.0;
        loop {
            let c = (n - 1.0) * term;
            sum += c;
            if c.abs() < 1e-18 * sum.abs() {
                break;
            }
            n += 1.0;
            term *= -x / n;
        }
        sum
    } else {
        1.0 - (1.0 + x) * (-x).exp()
    }
}

fn ratio(rho: f64, k: f64) -> f64 {
    k / rho
}

pub fn m1(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    rho * one_minus_exp(ratio(rho, k))
}

pub fn m11(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let x = ratio(rho, k);
    rho * rho * (2.0 * one_minus_linear_exp(x) + x * (-x).exp())
}

pub fn m2(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    2.0 * rho * rho * one_minus_linear_exp(ratio(rho, k))
}

pub fn theta(rho: f64, k: f64) -> f64 {
    (2.0 * m11(rho, k) - rho * m1(rho, k)) / 3.0
}

/// Derivative of `rho -> Theta_K(rho)`.
pub fn theta_derivative(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let x = k / rho;
    2.0 * rho - (-x).exp() * (2.0 * rho + 5.0 * k / 3.0 + 2.0 * k * x / 3.0)
}

/// `lim_{rho -> inf} Theta_K(rho) / rho = K/3`.
pub fn theta_infinity(k: f64) -> f64 {
    k / 3.0
}

pub fn gamma(rho: f64, k: f64) -> f64 {
    let a = m1(rho, k);
    2.0 * m2(rho, k) / 3.0 - a * a / 3.0
}

/// `A_K = rho^2 / Theta_K`, extended by its limit 1 at `rho = 0`.
pub fn a_k(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 1.0;
    }
    rho * rho / theta(rho, k)
}

/// `R_K = Gamma_K rho^2 / Theta_K^2`, extended by its limit 1 at `rho = 0`.
pub fn r_k(rho: f64, k: f64) -> f64 {
    if rho <= 0.0 {
        return 1.0;
    }
    let th = theta(rho, k);
    gamma(rho, k) * rho * rho / (th * th)
}

/// Supremum of `|R_K - 1|` over a 512-point grid of `[m, big_m]`.
pub fn ratio_defect(m: f64, big_m: f64, k: f64) -> f64 {
    let pts = 512;
    (0..pts)
        .map(|i| {
            let rho = if pts == 1 {
                m
            } else {
                m + (big_m - m) * i as f64 / (pts - 1) as f64
            };
            (r_k(rho, k) - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest `K` on the grid `{2^j}` with `sup |R_K - 1| <= delta / (1 + J)`
/// over densities in `[m, big_m]`.
pub fn choose_cutoff(m: f64, big_m: f64, delta: f64, j_est: f64) -> Result<f64> {
    if !(m > 0.0 && big_m >= m && big_m.is_finite()) {
        return invalid(format!(
            "density bounds must satisfy 0 < m <= M < inf, got [{m}, {big_m}]"
        ));
    }
    if !(delta > 0.0) || !(j_est >= 0.0) {
        return invalid("tolerance must be positive and cost estimate nonnegative");
    }
    let target = delta / (1.0 + j_est);
    let ok = |j: i32| ratio_defect(m, big_m, 2f64.powi(j)) <= target;
    let mut j = big_m.log2().ceil() as i32;
    if ok(j) {
        while j > -60 && ok(j - 1) {
            j -= 1;
        }
    } else {
        while !ok(j) {
            j += 1;
            if j > 200 {
                return Err(crate::KmpError::Numerical(
                    "cutoff search did not terminate".into(),
                ));
            }
        }
    }
    Ok(2f64.powi(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussRule;

    fn quad_exp<F: Fn(f64) -> f64>(rho: f64, f: F) -> f64 {
        // E f(X) for X ~ Exp(mean rho), integrate in u = x/rho on [0, 60]
        let r = GaussRule::new(32);
        r.composite(0.0, 60.0, 240, |u| f(rho * u) * (-u).exp())
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for &rho in &[0.5, 1.0, 2.0] {
            for &k in &[1.0, 4.0, 16.0] {
                let tau = |x: f64| x.min(k);
                let q1 = quad_exp(rho, tau);
                let q2 = quad_exp(rho, |x| tau(x).powi(2));
                let q11 = quad_exp(rho, |x| x * tau(x));
                assert!((m1(rho, k) - q1).abs() < 1e-12 * q1.max(1.0));
                assert!((m2(rho, k) - q2).abs() < 1e-11 * q2.max(1.0));
                assert!((m11(rho, k) - q11).abs() < 1e-12 * q11.max(1.0));
            }
        }
    }

    #[test]
    fn theta_matches_compact_form() {
        for &rho in &[0.01, 0.3, 1.0, 5.0, 100.0] {
            for &k in &[0.5, 1.0, 16.0] {
                let x: f64 = k / rho;
                let direct = rho * rho * (1.0 - (1.0 + 2.0 * x / 3.0) * (-x).exp());
                assert!((theta(rho, k) - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn limits() {
        assert!((a_k(1.0, 1e4) - 1.0).abs() < 1e-12);
        assert!((r_k(1.0, 1e4) - 1.0).abs() < 1e-12);
        assert!((theta(1e9, 3.0) / 1e9 - 1.0).abs() < 1e-6);
        let h = 1e-6;
        for &rho in &[0.2, 1.0, 7.0] {
            let fd = (theta(rho + h, 2.0) - theta(rho - h, 2.0)) / (2.0 * h);
            assert!((theta_derivative(rho, 2.0) - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn cutoff_choice_is_minimal_and_brackets_bisection() {
        let k = choose_cutoff(0.5, 1.5, 0.01, 1.0).unwrap();
        let target = 0.01 / 2.0;
        assert!(ratio_defect(0.5, 1.5, k) <= target);
        assert!(ratio_defect(0.5, 1.5, k / 2.0) > target);
        // bisection in continuous K lands in (k/2, k]
        let (mut lo, mut hi) = (k / 2.0, k);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ratio_defect(0.5, 1.5, mid) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!(hi > k / 2.0 && hi <= k);
        let tighter = choose_cutoff(0.5, 1.5, 0.001, 1.0).unwrap();
        assert!(tighter >= k);
    }
}
