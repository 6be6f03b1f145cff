//! Adaptive Gauss-Kronrod quadrature on a log-transformed axis.
//!
//! The main target is
//!
//! ```text
//! I(d, a1, a2) = ∫_0^∞ [ e^{-t} - 2^{-d} ((1+2 a1² t)^{-1/2} + (1+2 a2² t)^{-1/2})^d ] / (2t) dt
//! ```
//!
//! which equals `E[log |phi(W e1)|]` for `W` with i.i.d. standard normal
//! entries. Substituting `t = e^s` turns the `1/t` weight into `ds` and
//! compresses the slowly decaying tail (support out to `t ~ 1/min(a_i^2)`)
//! into a bounded interval. Both ends of the truncated interval get a
//! leading-order analytic tail correction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSlopes;
use crate::error::{Error, Result};

/// Tolerances and work limit for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-11,
            max_subdivisions: 2000,
        }
    }
}

impl QuadSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::domain("quadrature tolerances must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::domain("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub subdivisions: usize,
    pub evaluations: usize,
}

// Gauss-Kronrod 10/21 nodes on [0, 1]; the rule is symmetric about 0.
// Odd indices are the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 21-point Kronrod evaluation with the QUADPACK error heuristic.
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut res_k = WGK[10] * fc;
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();

    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (1.0f64).min((200.0 * error / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }

    Panel { a, b, value, error }
}

/// Globally adaptive integration of `f` over `[a, b]`.
///
/// The interval is first cut into `initial_panels` equal panels, then the
/// panel with the largest error estimate is bisected until the summed error
/// meets `max(abs_tol, rel_tol * |value|)` or `max_subdivisions` panels are
/// in use.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    settings: &QuadSettings,
) -> Result<QuadResult> {
    settings.validate()?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::domain(format!("invalid interval [{a}, {b}]")));
    }
    let n0 = initial_panels.clamp(1, settings.max_subdivisions);
    let width = (b - a) / n0 as f64;

    let mut heap = BinaryHeap::with_capacity(settings.max_subdivisions);
    for k in 0..n0 {
        let lo = a + width * k as f64;
        let hi = if k + 1 == n0 { b } else { lo + width };
        heap.push(gk21(&f, lo, hi));
    }
    let mut evaluations = 21 * n0;

    loop {
        // Sum in a fixed order so the result does not depend on heap layout.
        let mut panels: Vec<&Panel> = heap.iter().collect();
        panels.sort_by(|p, q| p.a.total_cmp(&q.a));
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = settings.abs_tol.max(settings.rel_tol * value.abs());

        if !value.is_finite() {
            return Err(Error::Internal("non-finite integrand value".into()));
        }
        if error <= target {
            return Ok(QuadResult {
                value,
                abs_error: error,
                subdivisions: heap.len(),
                evaluations,
            });
        }
        if heap.len() >= settings.max_subdivisions {
            return Err(Error::Accuracy {
                estimate: value,
                error_bound: error,
                subdivisions: heap.len(),
            });
        }

        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(worst.a < mid && mid < worst.b) {
            // Panel can no longer be split in double precision.
            return Err(Error::Accuracy {
                estimate: value,
                error_bound: error,
                subdivisions: heap.len() + 1,
            });
        }
        heap.push(gk21(&f, worst.a, mid));
        heap.push(gk21(&f, mid, worst.b));
        evaluations += 42;
    }
}

/// Lower end of the log-axis window for `I(d, ...)`.
pub const S_MIN: f64 = -40.0;

/// Upper end of the log-axis window: `max(40, 40 + ln(1 / min(a_i^2)))`.
pub fn s_max(slopes: &ActivationSlopes) -> f64 {
    40.0f64.max(40.0 + (1.0 / slopes.min_sq()).ln())
}

/// `(1/2) * sum_i ((1 + 2 a_i^2 t)^{-1/2} - 1)`, i.e. `B(t) - 1` where
/// `B(t)` is the bracket average. Accurate for small `t`.
fn bracket_minus_one(t: f64, slopes: &ActivationSlopes) -> f64 {
    let m = |alpha: f64| (-0.5 * (2.0 * alpha * alpha * t).ln_1p()).exp_m1();
    0.5 * (m(slopes.alpha1) + m(slopes.alpha2))
}

/// `ln B(t)` with `B(t) = (1/2) sum_i (1 + 2 a_i^2 t)^{-1/2}`.
fn ln_bracket(t: f64, slopes: &ActivationSlopes) -> f64 {
    let x_max = 2.0 * t * (slopes.alpha1 * slopes.alpha1).max(slopes.alpha2 * slopes.alpha2);
    if x_max < 1.0 {
        bracket_minus_one(t, slopes).ln_1p()
    } else {
        let r = |alpha: f64| (1.0 + 2.0 * alpha * alpha * t).sqrt().recip();
        (0.5 * (r(slopes.alpha1) + r(slopes.alpha2))).ln()
    }
}

/// Numerator `e^{-t} - B(t)^d`, computed without cancellation near `t = 0`
/// and with the power formed as `exp(d ln B)`.
fn numerator_i(t: f64, d: usize, slopes: &ActivationSlopes) -> f64 {
    (-t).exp_m1() - (d as f64 * ln_bracket(t, slopes)).exp_m1()
}

/// `t -> 0` limit of the `I` integrand.
pub fn integrand_i_limit(d: usize, slopes: &ActivationSlopes) -> f64 {
    let s = slopes.alpha1 * slopes.alpha1 + slopes.alpha2 * slopes.alpha2;
    0.5 * (d as f64 * s / 2.0 - 1.0)
}

/// The integrand of `I(d, a1, a2)` at `t`. At `t = 0` the analytic limit
/// `(d (a1^2 + a2^2)/2 - 1)/2` is returned.
pub fn integrand_i(t: f64, d: usize, slopes: &ActivationSlopes) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!(
            "integrand needs finite t >= 0, got {t}"
        )));
    }
    check_width(d)?;
    if t == 0.0 {
        return Ok(integrand_i_limit(d, slopes));
    }
    Ok(numerator_i(t, d, slopes) / (2.0 * t))
}

pub const MAX_WIDTH: usize = 4096;

fn check_width(d: usize) -> Result<()> {
    if d == 0 || d > MAX_WIDTH {
        return Err(Error::domain(format!(
            "width must be in 1..={MAX_WIDTH}, got {d}"
        )));
    }
    Ok(())
}

/// `I(d, a1, a2)` and its error estimate.
pub fn integral_i_detailed(
    d: usize,
    slopes: &ActivationSlopes,
    settings: &QuadSettings,
) -> Result<QuadResult> {
    check_width(d)?;
    let slopes = ActivationSlopes::new(slopes.alpha1, slopes.alpha2)?;
    let lo = S_MIN;
    let hi = s_max(&slopes);

    // On the log axis the integrand is t * f(t) = numerator / 2.
    let g = |s: f64| {
        let t = s.exp();
        0.5 * numerator_i(t, d, &slopes)
    };
    let panels = (hi - lo).ceil() as usize;
    let mut result = integrate(g, lo, hi, panels, settings)?;

    // Below S_MIN the integrand is c*t to leading order.
    let lower_tail = integrand_i_limit(d, &slopes) * lo.exp();
    // Above the window e^{-t} is gone and B(t) ~ K t^{-1/2}, so the
    // remaining piece is -(1/2) ∫ K^d e^{-d s/2} ds.
    let k = 0.5
        * ((2.0 * slopes.alpha1 * slopes.alpha1).sqrt().recip()
            + (2.0 * slopes.alpha2 * slopes.alpha2).sqrt().recip());
    let df = d as f64;
    let upper_tail = -(df * (k.ln() - 0.5 * hi)).exp() / df;

    result.value += lower_tail + upper_tail;
    Ok(result)
}

/// `I(d, a1, a2)`.
pub fn integral_i(d: usize, slopes: &ActivationSlopes, settings: &QuadSettings) -> Result<f64> {
    integral_i_detailed(d, slopes, settings).map(|r| r.value)
}

/// `ln x` through the Frullani integral `∫_0^∞ (e^{-t} - e^{-x t}) / t dt`.
///
/// Only used to exercise the integrator against a known answer. The window
/// `s ∈ [-60, 60]` is adequate for `x` roughly in `[1e-20, 1e20]`.
pub fn frullani_log(x: f64, settings: &QuadSettings) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("frullani_log needs x > 0, got {x}")));
    }
    let (lo, hi) = (-60.0, 60.0);
    let g = |s: f64| {
        let t = s.exp();
        (-t).exp_m1() - (-x * t).exp_m1()
    };
    let result = integrate(g, lo, hi, 120, settings)?;
    let lower_tail = (x - 1.0) * f64::exp(lo);
    Ok(result.value + lower_tail)
}
