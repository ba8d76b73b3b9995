//! Gauss–Chebyshev sampling schedules and derivative-at-zero estimators.
//!
//! A schedule places `r + 1` nodes on `[0, tau_max]` at the mapped roots of
//! `T_{r+1}` and carries linear weights that turn samples taken at those
//! nodes into estimates of the first and second derivative of the degree-`r`
//! interpolant at `t = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest polynomial degree any schedule may use.
pub const MAX_DEGREE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChebyshevSchedule<T: Real> {
    pub tau_max: T,
    pub r: usize,
    /// Sampling times, descending.
    pub nodes: Vec<T>,
    pub eps_s: T,
    pub weights1: Vec<T>,
    pub weights2: Vec<T>,
}

/// `(tau_max, r, eps_s)` produced by the parameter rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScheduleParams<T: Real> {
    pub tau_max: T,
    pub r: usize,
    pub eps_s: T,
}

/// Chebyshev roots `z_m = cos((2m+1) pi / (2(r+1)))` for `m = 0..=r`.
pub fn chebyshev_roots<T: Real>(r: usize) -> Vec<T> {
    let pi = T::lit(std::f64::consts::PI);
    let denom = T::lit(2.0 * (r as f64 + 1.0));
    (0..=r)
        .map(|m| (T::lit(2.0 * m as f64 + 1.0) * pi / denom).cos())
        .collect()
}

/// `T_0(z), ..., T_r(z)` by the three-term recurrence.
fn chebyshev_values<T: Real>(z: T, r: usize) -> Vec<T> {
    let mut t = Vec::with_capacity(r + 1);
    t.push(T::one());
    if r >= 1 {
        t.push(z);
    }
    for k in 2..=r {
        let next = T::lit(2.0) * z * t[k - 1] - t[k - 2];
        t.push(next);
    }
    t
}

/// Weights for any degree `r >= 1`. [`make_schedule`] enforces `r >= 2`;
/// this lower-level entry point also admits the two-node rule.
pub fn derivative_weights<T: Real>(tau_max: T, r: usize) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if r < 1 {
        return Err(Error::DegreeTooSmall(r));
    }
    if r > MAX_DEGREE {
        return Err(Error::CapExceeded {
            what: "Chebyshev degree",
            value: r,
            cap: MAX_DEGREE,
        });
    }
    if !(tau_max > T::zero()) || !tau_max.is_finite() {
        return Err(Error::InvalidArgument(
            "tau_max must be positive and finite".into(),
        ));
    }
    let zs = chebyshev_roots::<T>(r);
    let rp1 = T::lit(r as f64 + 1.0);
    let c1 = T::lit(4.0) / (tau_max * rp1);
    let c2 = T::lit(8.0) / (T::lit(3.0) * tau_max * tau_max * rp1);
    let mut nodes = Vec::with_capacity(r + 1);
    let mut w1 = Vec::with_capacity(r + 1);
    let mut w2 = Vec::with_capacity(r + 1);
    for &z in &zs {
        nodes.push((z + T::one()) / T::lit(2.0) * tau_max);
        let tn = chebyshev_values(z, r);
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for (k, &tk) in tn.iter().enumerate().skip(1) {
            let kk = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            // T_k'(-1) = (-1)^{k+1} k^2 and T_k''(-1) = (-1)^k k^2 (k^2 - 1) / 3.
            s1 = s1 + T::lit(sign * kk * kk) * tk;
            s2 = s2 - T::lit(sign * kk * kk * (kk * kk - 1.0)) * tk;
        }
        w1.push(c1 * s1);
        w2.push(c2 * s2);
    }
    Ok((nodes, w1, w2))
}

/// Build a schedule on `[0, tau_max]` with degree `r >= 2`.
pub fn make_schedule<T: Real>(tau_max: T, r: usize, eps_s: T) -> Result<ChebyshevSchedule<T>> {
    if r < 2 {
        return Err(Error::DegreeTooSmall(r));
    }
    let (nodes, weights1, weights2) = derivative_weights(tau_max, r)?;
    Ok(ChebyshevSchedule {
        tau_max,
        r,
        nodes,
        eps_s,
        weights1,
        weights2,
    })
}

impl<T: Real> ChebyshevSchedule<T> {
    pub fn from_params(p: ScheduleParams<T>) -> Result<Self> {
        make_schedule(p.tau_max, p.r, p.eps_s)
    }

    fn apply(&self, w: &[T], samples: &[T]) -> Result<T> {
        if samples.len() != w.len() {
            return Err(Error::LengthMismatch {
                expected: w.len(),
                got: samples.len(),
            });
        }
        Ok(w.iter()
            .zip(samples)
            .fold(T::zero(), |acc, (&a, &f)| acc + a * f))
    }

    /// Estimate of `f'(0)` from samples aligned with `nodes`.
    pub fn estimate_deriv1(&self, samples: &[T]) -> Result<T> {
        self.apply(&self.weights1, samples)
    }

    /// Estimate of `f''(0)` from samples aligned with `nodes`.
    pub fn estimate_deriv2(&self, samples: &[T]) -> Result<T> {
        self.apply(&self.weights2, samples)
    }

    /// Smallest gap between consecutive nodes.
    pub fn min_spacing(&self) -> T {
        self.nodes
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(T::infinity(), |a, b| a.min(b))
    }

    /// Noise contribution of the first-derivative bound at the schedule's `eps_s`.
    pub fn noise_bound1(&self) -> T {
        let r = T::lit(self.r as f64);
        T::lit(5.0) * r * r * r * self.eps_s / (T::lit(2.0) * self.tau_max)
    }

    /// Noise contribution of the second-derivative bound.
    pub fn noise_bound2(&self) -> T {
        let r = T::lit(self.r as f64);
        r.powi(5) * self.eps_s / (self.tau_max * self.tau_max)
    }

    /// Full first-derivative error bound given `sup |f^{(r+1)}|` on the window.
    pub fn error_bound1(&self, deriv_sup: T) -> T {
        let r = self.r as f64;
        let bias = 2.0
            * (r + 1.0).powi(2)
            * self.tau_max.to_f64().unwrap().powi(self.r as i32)
            * deriv_sup.to_f64().unwrap()
            / factorial(self.r);
        self.noise_bound1() + T::lit(bias)
    }

    /// Full second-derivative error bound given `sup |f^{(r+1)}|` on the window.
    pub fn error_bound2(&self, deriv_sup: T) -> T {
        let r = self.r as f64;
        let bias = 2.0 / 3.0
            * (r + 1.0).powi(2)
            * ((r + 1.0).powi(2) - 1.0)
            * self.tau_max.to_f64().unwrap().powi(self.r as i32 - 1)
            * deriv_sup.to_f64().unwrap()
            / factorial(self.r - 1);
        self.noise_bound2() + T::lit(bias)
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}

/// Bound on the interpolation error of a degree-`r` Chebyshev interpolant on
/// an interval of length `len`, given `sup |f^{(r+1)}|`.
pub fn interpolation_error_bound(r: usize, len: f64, deriv_sup: f64) -> f64 {
    2.0 * deriv_sup / factorial(r + 1) * (len / 4.0).powi(r as i32 + 1)
}

/// Evaluate the degree-`r` interpolant through `(nodes, samples)` at time `t`.
pub fn interpolate<T: Real>(schedule: &ChebyshevSchedule<T>, samples: &[T], t: T) -> Result<T> {
    let r = schedule.r;
    if samples.len() != r + 1 {
        return Err(Error::LengthMismatch {
            expected: r + 1,
            got: samples.len(),
        });
    }
    let zs = chebyshev_roots::<T>(r);
    let rp1 = T::lit(r as f64 + 1.0);
    let mut coeffs = vec![T::zero(); r + 1];
    for (z, &f) in zs.iter().zip(samples) {
        let tn = chebyshev_values(*z, r);
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = *c + f * tn[k];
        }
    }
    for (k, c) in coeffs.iter_mut().enumerate() {
        let norm = if k == 0 { T::one() } else { T::lit(2.0) };
        *c = *c * norm / rp1;
    }
    let z = T::lit(2.0) * t / schedule.tau_max - T::one();
    let tn = chebyshev_values(z, r);
    Ok(coeffs
        .iter()
        .zip(&tn)
        .fold(T::zero(), |a, (&c, &v)| a + c * v))
}

fn degree_from(value: f64) -> Result<usize> {
    if !value.is_finite() {
        return Err(Error::InvalidArgument(
            "schedule parameters must be finite".into(),
        ));
    }
    let r = value.ceil().max(2.0);
    if r > MAX_DEGREE as f64 {
        return Err(Error::CapExceeded {
            what: "Chebyshev degree",
            value: r as usize,
            cap: MAX_DEGREE,
        });
    }
    Ok(r as usize)
}

fn check_positive(b: f64, lambda: f64, eps: f64) -> Result<()> {
    if !(b > 0.0 && lambda > 0.0 && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "B, Lambda and eps must be positive (got {b}, {lambda}, {eps})"
        )));
    }
    Ok(())
}

/// First-derivative rule for `|f^{(k)}| <= B Lambda^k`.
pub fn params_first<T: Real>(b: T, lambda: T, eps: T) -> Result<ScheduleParams<T>> {
    let (b, l, e) = (
        b.to_f64().unwrap(),
        lambda.to_f64().unwrap(),
        eps.to_f64().unwrap(),
    );
    check_positive(b, l, e)?;
    let r = degree_from((18.0 * b * l / e).log2())?;
    Ok(ScheduleParams {
        tau_max: T::lit(1.0 / (2.0 * l)),
        r,
        eps_s: T::lit(e / (10.0 * l * (r as f64).powi(3))),
    })
}

/// Second-derivative rule for `|f^{(k)}| <= B Lambda^k`.
pub fn params_second<T: Real>(b: T, lambda: T, eps: T) -> Result<ScheduleParams<T>> {
    let (b, l, e) = (
        b.to_f64().unwrap(),
        lambda.to_f64().unwrap(),
        eps.to_f64().unwrap(),
    );
    check_positive(b, l, e)?;
    let r = degree_from((320.0 * b * l * l / e).log2())?;
    Ok(ScheduleParams {
        tau_max: T::lit(1.0 / (2.0 * l)),
        r,
        eps_s: T::lit(e / (8.0 * l * l * (r as f64).powi(5))),
    })
}

/// First-derivative rule for `|f^{(k)}| <= B Lambda^k k!`.
pub fn params_first_factorial<T: Real>(b: T, lambda: T, eps: T) -> Result<ScheduleParams<T>> {
    let (b, l, e) = (
        b.to_f64().unwrap(),
        lambda.to_f64().unwrap(),
        eps.to_f64().unwrap(),
    );
    check_positive(b, l, e)?;
    let r = degree_from((4.0 * (8.0 * l * b / e).log2()).max(16.0))?;
    Ok(ScheduleParams {
        tau_max: T::lit(1.0 / (2.0 * l)),
        r,
        eps_s: T::lit(e / (10.0 * l * (r as f64).powi(3))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_nodes() {
        let s = make_schedule(1.0f64, 2, 0.0).unwrap();
        let expect = [0.9330127018922193, 0.5, 0.0669872981077807];
        for (a, b) in s.nodes.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn two_node_rule() {
        let (nodes, w1, _) = derivative_weights(1.0f64, 1).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        assert!((w1[0] - s2).abs() < 1e-12 && (w1[1] + s2).abs() < 1e-12);
        let est: f64 = w1.iter().zip(&nodes).map(|(a, t)| a * t).sum();
        assert!((est - 1.0).abs() < 1e-12);
        assert!(matches!(
            make_schedule(1.0f64, 1, 0.0),
            Err(Error::DegreeTooSmall(1))
        ));
    }

    #[test]
    fn constants_and_lines() {
        let s = make_schedule(0.3f64, 9, 0.0).unwrap();
        let ones = vec![2.5; 10];
        assert!(s.estimate_deriv1(&ones).unwrap().abs() < 1e-9);
        assert!(s.estimate_deriv2(&ones).unwrap().abs() < 1e-7);
        let lin: Vec<f64> = s.nodes.iter().map(|t| 3.0 * t - 1.0).collect();
        assert!((s.estimate_deriv1(&lin).unwrap() - 3.0).abs() < 1e-9);
        assert!(s.estimate_deriv2(&lin).unwrap().abs() < 1e-7);
        let sq: Vec<f64> = s.nodes.iter().map(|t| t * t).collect();
        assert!((s.estimate_deriv2(&sq).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn works_in_single_precision() {
        let s = make_schedule(0.5f32, 6, 0.0).unwrap();
        let f: Vec<f32> = s.nodes.iter().map(|t| 2.0 * t).collect();
        assert!((s.estimate_deriv1(&f).unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn exponential_derivative() {
        let s = make_schedule(0.25f64, 8, 0.0).unwrap();
        let f: Vec<f64> = s.nodes.iter().map(|t| (-t).exp()).collect();
        assert!((s.estimate_deriv1(&f).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn sin_squared_second_derivative() {
        let h = 0.25f64;
        let s = make_schedule(1.0f64, 10, 0.0).unwrap();
        let f: Vec<f64> = s.nodes.iter().map(|t| (h * t).sin().powi(2)).collect();
        assert!((s.estimate_deriv2(&f).unwrap() - 2.0 * h * h).abs() < 1e-5);
    }

    #[test]
    fn parameter_rules() {
        let p = params_first(1.0f64, 2.0, 0.25).unwrap();
        assert_eq!(p.r, 8);
        assert!((p.tau_max - 0.25).abs() < 1e-15);
        assert!((p.eps_s - 0.25 / (20.0 * 512.0)).abs() < 1e-18);
        let q = params_first_factorial(1.0f64, 2.0, 0.1).unwrap();
        assert_eq!(q.r, 30);
        let small = params_first_factorial(1.0f64, 0.001, 1.0).unwrap();
        assert_eq!(small.r, 16);
        let s = params_second(1.0f64, 1.0, 0.04).unwrap();
        assert_eq!(s.r, 13);
        assert!(matches!(
            params_first(1.0f64, 1.0, 1e-30),
            Err(Error::CapExceeded { .. })
        ));
        assert_eq!(params_first(1.0f64, 0.01, 10.0).unwrap().r, 2);
    }

    #[test]
    fn interpolant_reproduces_samples() {
        let s = make_schedule(0.7f64, 5, 0.0).unwrap();
        let f: Vec<f64> = s.nodes.iter().map(|t| t.sin()).collect();
        for (t, v) in s.nodes.iter().zip(&f) {
            assert!((interpolate(&s, &f, *t).unwrap() - v).abs() < 1e-12);
        }
    }
}
