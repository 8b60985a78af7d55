//! Scalar inequality validators and the decay-exponent estimator.

use crate::error::{invalid, Result};
use crate::quad1d;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Closed time window `[t_lo, t_hi]` used by [`fit_decay_exponent`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_lo: f64,
    pub t_hi: f64,
}

impl FitWindow {
    pub const DEFAULT_T_LO: f64 = 10.0;

    pub fn new(t_lo: f64, t_hi: f64) -> Result<Self> {
        if !(t_lo >= 0.0 && t_hi > t_lo) {
            return invalid(format!("fit window [{t_lo}, {t_hi}] is empty"));
        }
        Ok(Self { t_lo, t_hi })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_lo && t <= self.t_hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    /// 95% half-width of the slope.
    pub half_width: f64,
    pub window: FitWindow,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 8;

/// Least-squares slope of `log value` against `−log(1+t)` over `window`.
pub fn fit_decay_exponent(series: &[(f64, f64)], window: FitWindow) -> Result<DecayFit> {
    fit_log_slope(series, window, |t| -(1.0 + t).ln())
}

/// Exponential rate: slope of `log value` against `−t`.
pub fn fit_exponential_rate(series: &[(f64, f64)], window: FitWindow) -> Result<DecayFit> {
    fit_log_slope(series, window, |t| -t)
}

fn fit_log_slope(series: &[(f64, f64)], window: FitWindow, abscissa: impl Fn(f64) -> f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| window.contains(*t)).collect();
    if pts.len() < MIN_FIT_POINTS {
        return invalid(format!("{} points in window [{}, {}], need {MIN_FIT_POINTS}", pts.len(), window.t_lo, window.t_hi));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return invalid(format!("nonpositive value {v} at t = {t}"));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| abscissa(*t)).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = n - 2.0;
    let se = (ss / dof / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, dof).map(|d| d.inverse_cdf(0.975)).unwrap_or(2.0);
    Ok(DecayFit {
        exponent: slope,
        half_width: tq * se,
        window,
        residual: (ss / n).sqrt(),
        points: pts.len(),
    })
}

/// `ρ = min(λ+μ−1, μ)`.
pub fn basic_decay_rho(lambda: f64, mu: f64) -> f64 {
    (lambda + mu - 1.0).min(mu)
}

/// `∫₀ᵗ (1+t−s)^{−λ}(1+s)^{−μ} ds`.
pub fn basic_decay_integral(lambda: f64, mu: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let f = |s: f64| (1.0 + t - s).powf(-lambda) * (1.0 + s).powf(-mu);
    quad1d::integrate(f, 0.0, 0.5 * t, 1e-13) + quad1d::integrate(f, 0.5 * t, t, 1e-13)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasicDecayReport {
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub log_factor: bool,
    /// `sup I(t)(1+t)^ρ / C(t)` over `[T/2, T]` and over `[T, 2T]`.
    pub sup_half: f64,
    pub sup_double: f64,
    /// Same two sups without the log factor.
    pub sup_half_plain: f64,
    pub sup_double_plain: f64,
    pub finite: bool,
    pub plain_finite: bool,
}

/// Relative growth tolerated between the two sups for "finite".
pub const SUP_GROWTH_TOL: f64 = 0.01;

pub fn basic_decay_check(lambda: f64, mu: f64, t_max: f64, n_samples: usize) -> Result<BasicDecayReport> {
    if !(lambda >= mu && mu >= 0.0) {
        return invalid(format!("need λ ≥ μ ≥ 0, got λ = {lambda}, μ = {mu}; swap the arguments"));
    }
    if !(t_max > 1.0) || n_samples < 2 {
        return invalid("need T > 1 and at least two samples");
    }
    let rho = basic_decay_rho(lambda, mu);
    let log_factor = lambda == 1.0;
    let sup_over = |lo: f64, hi: f64, with_log: bool| -> f64 {
        (0..n_samples)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / (n_samples - 1) as f64;
                let c = if with_log { (2.0 + t).ln() } else { 1.0 };
                basic_decay_integral(lambda, mu, t) * (1.0 + t).powf(rho) / c
            })
            .fold(0.0, f64::max)
    };
    let (a, b) = (sup_over(0.5 * t_max, t_max, log_factor), sup_over(t_max, 2.0 * t_max, log_factor));
    let (ap, bp) = (sup_over(0.5 * t_max, t_max, false), sup_over(t_max, 2.0 * t_max, false));
    Ok(BasicDecayReport {
        lambda,
        mu,
        rho,
        log_factor,
        sup_half: a,
        sup_double: b,
        sup_half_plain: ap,
        sup_double_plain: bp,
        finite: b <= a * (1.0 + SUP_GROWTH_TOL),
        plain_finite: bp <= ap * (1.0 + SUP_GROWTH_TOL),
    })
}

/// `max{1, e^{a−k} k^k a^{−k}}`, the sup over `y ≥ 0` of `e^{−ay}(1+y)^k`.
pub fn elem_calc_bound(a: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    if a == 0.0 {
        return f64::INFINITY;
    }
    (a - k + k * (k / a).ln()).exp().max(1.0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalcReport {
    pub a: f64,
    pub k: f64,
    pub bound: f64,
    pub sampled_max: f64,
    /// Value at the interior critical point `y* = k/a − 1`, or at 0.
    pub maximizer_value: f64,
    /// `max(0, sampled − bound)/bound`.
    pub violation: f64,
}

pub fn calc_inequality_check(a: f64, k: f64, y_max: f64) -> Result<CalcReport> {
    if !(a >= 0.0 && k >= 0.0 && y_max >= 0.0) {
        return invalid("a, k and y_max must be nonnegative");
    }
    let g = |y: f64| (-a * y + k * (1.0 + y).ln()).exp();
    let n = 20_001;
    let sampled_max = (0..n).map(|i| g(y_max * i as f64 / (n - 1) as f64)).fold(0.0, f64::max);
    let ystar = if a > 0.0 { (k / a - 1.0).max(0.0) } else { y_max };
    let maximizer_value = g(ystar.min(y_max).max(0.0)).max(g(0.0));
    let bound = elem_calc_bound(a, k);
    let top = sampled_max.max(maximizer_value);
    Ok(CalcReport { a, k, bound, sampled_max, maximizer_value, violation: ((top - bound) / bound).max(0.0) })
}

/// Smallest `C_k` with `e^{−ν t} ≤ C_k w(p)(1+t)^{−k}` for all `t`, for
/// one `(ν(p), w_k(p))` pair.
pub fn poly_e_constant(nu: f64, weight: f64, k: f64) -> f64 {
    elem_calc_bound(nu, k) / weight
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let s: Vec<(f64, f64)> = (0..100).map(|i| {
            let t = 10.0 + i as f64 * 10.0;
            (t, 3.0 * (1.0 + t).powf(-2.0))
        }).collect();
        let f = fit_decay_exponent(&s, FitWindow::new(10.0, 1000.0).unwrap()).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-6);
    }

    #[test]
    fn calc_examples() {
        let r = calc_inequality_check(1.0, 2.0, 20.0).unwrap();
        assert!((r.maximizer_value - 4.0 / std::f64::consts::E).abs() < 1e-12);
        assert!(r.violation == 0.0);
        assert_eq!(calc_inequality_check(1.0, 0.0, 5.0).unwrap().bound, 1.0);
    }

    #[test]
    fn zero_exponents_integral_is_t() {
        for t in [0.5, 3.0, 40.0] {
            assert!((basic_decay_integral(0.0, 0.0, t) - t).abs() < 1e-10 * t);
        }
    }

    #[test]
    fn rejects_unordered() {
        assert!(basic_decay_check(0.5, 1.0, 10.0, 8).is_err());
    }
}
