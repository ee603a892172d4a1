//! Rényi-DP accounting for the subsampled Gaussian mechanism.
//!
//! One training step that samples each example with rate `q` and adds
//! Gaussian noise with multiplier `z` has a Rényi divergence bound at each
//! order α. Those per-step values compose additively over steps and convert
//! to an (ε, δ) guarantee by minimizing over the order grid:
//!
//! ```text
//! ε = min over α of  K · rdp(α) + ln(1/δ) / (α − 1)
//! ```
//!
//! Integer orders use the exact binomial expansion
//! `rdp(α) = ln( Σ_k C(α,k) (1−q)^{α−k} q^k e^{k(k−1)/(2z²)} ) / (α−1)`;
//! fractional orders use the stable two-series evaluation built on `erfc`.
//! Everything runs in log space so large orders cannot overflow.

use crate::error::{Error, Result};

const LN_HALF: f64 = -std::f64::consts::LN_2;

/// Orders where the ε minimum is searched: a handful of fractional orders
/// below 5 where subsampled-Gaussian minima often fall, then integers, then
/// sparse large orders for the high-privacy regime.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0, 4.5];
    orders.extend((5..=64).map(|a| a as f64));
    orders.extend([128.0, 256.0, 512.0]);
    orders
}

/// One sampled-Gaussian configuration to be accounted over `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountantQuery {
    /// Per-step sampling rate, in (0, 1].
    pub q: f64,
    /// Noise multiplier z = sigma / clip bound, > 0.
    pub z: f64,
    /// Number of composed steps.
    pub steps: u64,
    /// Target delta, in (0, 1).
    pub delta: f64,
}

/// RDP values over an ascending order grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyCurve {
    orders: Vec<f64>,
    rdp: Vec<f64>,
}

impl PrivacyCurve {
    pub fn new(orders: Vec<f64>, rdp: Vec<f64>) -> Result<PrivacyCurve> {
        if orders.len() != rdp.len() {
            return Err(Error::invalid(format!(
                "{} orders vs {} rdp values",
                orders.len(),
                rdp.len()
            )));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("orders must be strictly ascending".to_string()));
        }
        if orders.iter().any(|&a| !(a > 1.0)) {
            return Err(Error::invalid("orders must exceed 1".to_string()));
        }
        if rdp.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::numeric("rdp values must be finite and nonnegative".to_string()));
        }
        Ok(PrivacyCurve { orders, rdp })
    }

    /// Per-step curve of the sampled Gaussian mechanism on the given grid.
    pub fn per_step(q: f64, z: f64, orders: &[f64]) -> Result<PrivacyCurve> {
        let rdp = orders
            .iter()
            .map(|&a| rdp_sampled_gaussian(q, z, a))
            .collect::<Result<Vec<_>>>()?;
        PrivacyCurve::new(orders.to_vec(), rdp)
    }

    pub fn zero(orders: &[f64]) -> Result<PrivacyCurve> {
        PrivacyCurve::new(orders.to_vec(), vec![0.0; orders.len()])
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(exp(a) - exp(b)) for a >= b. Values that cross zero by more than
/// rounding noise are an internal error.
fn log_sub(a: f64, b: f64) -> Result<f64> {
    if b == f64::NEG_INFINITY {
        return Ok(a);
    }
    if b > a {
        if b - a < 1e-9 {
            return Ok(f64::NEG_INFINITY);
        }
        return Err(Error::numeric(format!("log_sub: {b} > {a}")));
    }
    if a == b {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(a + (-((b - a).exp())).ln_1p())
}

/// ln(erfc(x)), stable for large positive x where erfc underflows.
fn log_erfc(x: f64) -> f64 {
    if x <= 8.0 {
        libm::erfc(x).ln()
    } else {
        let x2 = x * x;
        -x2 - 0.5 * std::f64::consts::PI.ln() - x.ln()
            + (-1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2)).ln_1p()
    }
}

/// (ln |binom(alpha, i)|, sign) for real alpha and integer i.
fn log_abs_binom(alpha: f64, i: u64) -> (f64, f64) {
    let mut log_abs = -libm::lgamma(i as f64 + 1.0);
    let mut sign = 1.0;
    for k in 0..i {
        let factor = alpha - k as f64;
        if factor == 0.0 {
            return (f64::NEG_INFINITY, 1.0);
        }
        if factor < 0.0 {
            sign = -sign;
        }
        log_abs += factor.abs().ln();
    }
    (log_abs, sign)
}

fn rdp_integer_order(q: f64, z: f64, alpha: u64) -> f64 {
    // logsumexp over k of ln C(alpha,k) + (alpha-k) ln(1-q) + k ln q + k(k-1)/(2 z^2)
    let a = alpha as f64;
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        let kf = k as f64;
        let mut t = libm::lgamma(a + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(a - kf + 1.0);
        t += (a - kf) * (-q).ln_1p();
        if k > 0 {
            t += kf * q.ln();
        }
        t += kf * (kf - 1.0) / (2.0 * z * z);
        terms.push(t);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()) / (a - 1.0)
}

fn rdp_fractional_order(q: f64, z: f64, alpha: f64) -> Result<f64> {
    // two-series split of the defining integral at z0, each term weighted by
    // a generalized binomial coefficient and an erfc tail
    let sigma = z;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let mut i: u64 = 0;
    loop {
        let (log_coef, sign) = log_abs_binom(alpha, i);
        let fi = i as f64;
        let j = alpha - fi;
        let log_t0 = log_coef + fi * q.ln() + j * (-q).ln_1p();
        let log_t1 = log_coef + j * q.ln() + fi * (-q).ln_1p();
        let log_e0 = LN_HALF + log_erfc((fi - z0) / sqrt2_sigma);
        let log_e1 = LN_HALF + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if sign > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0)?;
            log_a1 = log_sub(log_a1, log_s1)?;
        }
        i += 1;
        if log_s0.max(log_s1) < -30.0 {
            break;
        }
        if i > 10_000 {
            return Err(Error::numeric(format!(
                "fractional rdp series did not converge (q={q}, z={z}, alpha={alpha})"
            )));
        }
    }
    Ok(log_add(log_a0, log_a1) / (alpha - 1.0))
}

/// Per-step RDP of the sampled Gaussian mechanism at order `alpha` (> 1).
///
/// `q = 1` collapses to the unsampled Gaussian closed form `alpha / (2 z²)`.
pub fn rdp_sampled_gaussian(q: f64, z: f64, alpha: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling rate {q} outside (0,1]")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::invalid(format!("noise multiplier {z} must be positive")));
    }
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("order {alpha} must exceed 1")));
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * z * z));
    }
    let value = if alpha.fract() == 0.0 {
        rdp_integer_order(q, z, alpha as u64)
    } else {
        rdp_fractional_order(q, z, alpha)?
    };
    if !value.is_finite() || value < -1e-10 {
        return Err(Error::numeric(format!(
            "rdp(q={q}, z={z}, alpha={alpha}) = {value}"
        )));
    }
    // values at the resolution floor of the log-sum can round fractionally
    // below zero; the divergence itself is nonnegative
    Ok(value.max(0.0))
}

/// Linear composition: `steps` repetitions of the per-step mechanism.
pub fn compose(curve: &PrivacyCurve, steps: u64) -> PrivacyCurve {
    PrivacyCurve {
        orders: curve.orders.clone(),
        rdp: curve.rdp.iter().map(|r| r * steps as f64).collect(),
    }
}

/// Convert a composed curve to (ε, achieving order) at the given δ.
pub fn to_epsilon(curve: &PrivacyCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0,1)")));
    }
    if curve.orders.is_empty() {
        return Err(Error::invalid("empty privacy curve".to_string()));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let mut best: Option<(f64, f64)> = None;
    for (&a, &r) in curve.orders.iter().zip(&curve.rdp) {
        let eps = r + log_inv_delta / (a - 1.0);
        if best.map_or(true, |(e, _)| eps < e) {
            best = Some((eps, a));
        }
    }
    Ok(best.unwrap())
}

/// End-to-end privacy cost of a training run: `q = b/n`,
/// `K = epochs · floor(n/b)`, composed and converted at `delta`.
pub fn epsilon_for_run(n: usize, b: usize, z: f64, epochs: u64, delta: f64) -> Result<(f64, f64)> {
    let curve = curve_for_run(n, b, z, epochs)?;
    to_epsilon(&curve, delta)
}

/// The composed curve behind [`epsilon_for_run`], for table printing.
pub fn curve_for_run(n: usize, b: usize, z: f64, epochs: u64) -> Result<PrivacyCurve> {
    if n == 0 || b == 0 || b > n {
        return Err(Error::invalid(format!("batch {b} of dataset {n}")));
    }
    let q = b as f64 / n as f64;
    let steps = epochs * (n / b) as u64;
    let orders = default_orders();
    if steps == 0 {
        return PrivacyCurve::zero(&orders);
    }
    let per_step = PrivacyCurve::per_step(q, z, &orders)?;
    Ok(compose(&per_step, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q1_matches_gaussian_closed_form_on_whole_grid() {
        for z in [0.5, 0.8, 1.0, 2.0] {
            for &a in &default_orders() {
                let got = rdp_sampled_gaussian(1.0, z, a).unwrap();
                let expect = a / (2.0 * z * z);
                assert!(
                    (got - expect).abs() <= 1e-12 * expect,
                    "z={z} a={a}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn vanishing_q_vanishing_rdp() {
        let r = rdp_sampled_gaussian(1e-12, 1.0, 2.0).unwrap();
        assert!(r < 1e-9, "rdp {r}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(rdp_sampled_gaussian(0.0, 1.0, 2.0).is_err());
        assert!(rdp_sampled_gaussian(1.5, 1.0, 2.0).is_err());
        assert!(rdp_sampled_gaussian(0.1, 0.0, 2.0).is_err());
        assert!(rdp_sampled_gaussian(0.1, -1.0, 2.0).is_err());
        assert!(rdp_sampled_gaussian(0.1, 1.0, 1.0).is_err());
        assert!(rdp_sampled_gaussian(0.1, 1.0, 0.5).is_err());
        assert!(to_epsilon(&PrivacyCurve::zero(&default_orders()).unwrap(), 0.0).is_err());
        assert!(to_epsilon(&PrivacyCurve::zero(&default_orders()).unwrap(), 1.0).is_err());
    }

    /// Order-2 Rényi divergence between the subsampled mixture and the plain
    /// Gaussian via Simpson quadrature — independent of the binomial path.
    fn order2_divergence_quadrature(q: f64, z: f64) -> f64 {
        let p = |x: f64| {
            let n0 = (-x * x / (2.0 * z * z)).exp();
            let n1 = (-(x - 1.0) * (x - 1.0) / (2.0 * z * z)).exp();
            (1.0 - q) * n0 + q * n1
        };
        let q0 = |x: f64| (-x * x / (2.0 * z * z)).exp();
        // integrand of exp((alpha-1) D_alpha) for alpha = 2, the 1/(z sqrt(2pi))
        // normalization cancels between P^2 and Q^1
        let f = |x: f64| {
            let pp = p(x);
            pp * pp / q0(x) / (z * (2.0 * std::f64::consts::PI).sqrt())
        };
        let (lo, hi, n) = (-30.0f64, 31.0f64, 600_000usize);
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        (acc * h / 3.0).ln()
    }

    #[test]
    fn order2_matches_quadrature_oracle() {
        let got = rdp_sampled_gaussian(0.01, 1.0, 2.0).unwrap();
        let expect = order2_divergence_quadrature(0.01, 1.0);
        assert!(
            (got - expect).abs() <= 1e-6 * expect.abs(),
            "{got} vs {expect}"
        );
    }

    #[test]
    fn fractional_orders_match_quadrature_shape() {
        // order 2.5 between the integer anchors, same mechanism pair: the
        // value must sit between the order-2 and order-3 divergences
        let r2 = rdp_sampled_gaussian(0.01, 1.0, 2.0).unwrap();
        let r25 = rdp_sampled_gaussian(0.01, 1.0, 2.5).unwrap();
        let r3 = rdp_sampled_gaussian(0.01, 1.0, 3.0).unwrap();
        assert!(r2 < r25 && r25 < r3, "{r2} {r25} {r3}");
    }

    #[test]
    fn large_order_is_finite_and_matches_high_precision_value() {
        // reference computed with 200-digit arithmetic for q=0.01, z=0.8
        let got = rdp_sampled_gaussian(0.01, 0.8, 256.0).unwrap();
        let expect = 195.37677032308645;
        assert!(got.is_finite());
        assert!(
            (got - expect).abs() <= 1e-6 * expect,
            "{got} vs {expect}"
        );
    }

    #[test]
    fn rdp_nondecreasing_in_order() {
        for (q, z) in [(0.01, 0.8), (0.004, 1.0), (0.5, 0.6), (0.001, 2.0)] {
            let curve = PrivacyCurve::per_step(q, z, &default_orders()).unwrap();
            for w in curve.rdp().windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "q={q} z={z}: {} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn compose_is_linear() {
        let orders = default_orders();
        let per = PrivacyCurve::per_step(0.01, 1.0, &orders).unwrap();
        let twice = compose(&per, 2);
        for (a, b) in per.rdp().iter().zip(twice.rdp()) {
            assert_eq!(*b, 2.0 * a);
        }
        let zero = compose(&per, 0);
        assert!(zero.rdp().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn zero_curve_epsilon_collapses_to_largest_order() {
        let orders = default_orders();
        let curve = PrivacyCurve::zero(&orders).unwrap();
        let delta = 1e-6;
        let (eps, best) = to_epsilon(&curve, delta).unwrap();
        let a_max = *orders.last().unwrap();
        assert_eq!(best, a_max);
        let expect = (1.0 / delta).ln() / (a_max - 1.0);
        assert!((eps - expect).abs() < 1e-12);
    }

    #[test]
    fn epoch_zero_equals_zero_curve_conversion() {
        let (eps, best) = epsilon_for_run(60_000, 256, 0.8, 0, 1e-6).unwrap();
        let curve = PrivacyCurve::zero(&default_orders()).unwrap();
        let (e2, b2) = to_epsilon(&curve, 1e-6).unwrap();
        assert_eq!((eps, best), (e2, b2));
    }

    #[test]
    fn paper_anchor_a() {
        let (eps, _) = epsilon_for_run(60_000, 256, 0.8, 60, 1e-6).unwrap();
        assert!((eps - 6.23).abs() <= 0.25, "eps {eps}");
    }

    #[test]
    fn paper_anchor_b() {
        let (eps, _) = epsilon_for_run(60_000, 32, 0.6, 30, 1e-6).unwrap();
        assert!((eps - 4.67).abs() <= 0.25, "eps {eps}");
    }

    #[test]
    fn noise_multiplier_threshold_below_ten() {
        let (lo, _) = epsilon_for_run(60_000, 256, 0.7, 60, 1e-6).unwrap();
        let (hi, _) = epsilon_for_run(60_000, 256, 0.6, 60, 1e-6).unwrap();
        assert!(lo < 10.0, "z=0.7 gives {lo}");
        assert!(hi > 10.0, "z=0.6 gives {hi}");
    }

    #[test]
    fn epsilon_monotone_over_parameter_lattice() {
        let base = (60_000usize, 256usize, 0.8f64, 30u64, 1e-6f64);
        let eps = |n, b, z, t, d| epsilon_for_run(n, b, z, t, d).unwrap().0;
        let e0 = eps(base.0, base.1, base.2, base.3, base.4);
        // nonincreasing in z
        for z in [0.9, 1.0, 1.5, 2.0] {
            assert!(eps(base.0, base.1, z, base.3, base.4) <= e0 + 1e-12);
        }
        // nondecreasing in steps (epochs)
        let mut prev = 0.0;
        for t in [1, 10, 30, 60, 120] {
            let e = eps(base.0, base.1, base.2, t, base.4);
            assert!(e >= prev - 1e-12);
            prev = e;
        }
        // nondecreasing in q (batch size up at fixed n)
        let mut prev = 0.0;
        for b in [32, 64, 128, 256, 512] {
            let e = eps(base.0, b, base.2, base.3, base.4);
            assert!(e >= prev - 1e-12, "b={b}: {e} < {prev}");
            prev = e;
        }
        // nondecreasing as delta shrinks
        let mut prev = 0.0;
        for d in [1e-4, 1e-6, 1e-8, 1e-10] {
            let e = eps(base.0, base.1, base.2, base.3, d);
            assert!(e >= prev - 1e-12);
            prev = e;
        }
    }
}
