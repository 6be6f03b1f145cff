//! Forward dynamics `X_l = phi(W_l X_{l-1})` and Monte-Carlo estimators.
//!
//! Activations are carried as a unit direction plus an accumulated log-norm.
//! Since `phi` is positively homogeneous, `|X_l| = |x0| * prod_k |phi(W_k S_{k-1})|`
//! with `S_k` the normalized direction, so depth never causes overflow or
//! underflow.
//!
//! Trials run in parallel on the current rayon pool. Trial `k` draws from
//! `RngStream::new(seed, k)` and per-trial values are reduced in trial order,
//! which makes every estimate bit-identical for any worker count.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::ActivationSlopes;
use crate::analytic::EnsembleSpec;
use crate::ensembles::{
    sample_matrix, sample_uniform_positive_matrix, sample_unit_sphere, Matrix, RngStream,
    WeightStack,
};
use crate::error::{Error, Result};

/// One forward pass in (direction, log-norm) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub depth: usize,
    /// `Z_k = log |phi(W_k S_{k-1})|`.
    pub increments: Vec<f64>,
    pub final_direction: Vec<f64>,
    /// `log |x0| + sum_k Z_k`; `-inf` once the state hits zero.
    pub log_norm: f64,
    /// First layer (1-based) whose output was exactly zero.
    pub hit_zero_at: Option<usize>,
}

/// Apply one layer to the unit direction in `dir`, leaving the new unit
/// direction there. Returns `log |phi(W dir)|`, or `None` if that is zero.
#[inline]
fn step(w: &Matrix, slopes: &ActivationSlopes, dir: &mut [f64], buf: &mut [f64]) -> Option<f64> {
    w.mul_vec_into(dir, buf);
    slopes.apply_in_place(buf);
    let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    for (d, b) in dir.iter_mut().zip(buf.iter()) {
        *d = b / norm;
    }
    Some(norm.ln())
}

fn unit_and_log_norm(x0: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::usage("initial vector must be nonzero and finite"));
    }
    Ok((x0.iter().map(|v| v / norm).collect(), norm.ln()))
}

/// Run `x0` through `matrices` in log space.
///
/// Zero slopes are accepted here (ReLU); a zero post-activation stops the pass
/// and records the layer in `hit_zero_at`.
pub fn forward_matrices(
    matrices: &[Matrix],
    x0: &[f64],
    slopes: &ActivationSlopes,
) -> Result<Trajectory> {
    let d = x0.len();
    if let Some(bad) = matrices.iter().position(|m| m.dim() != d) {
        return Err(Error::usage(format!(
            "layer {bad} is {0}x{0} but the input has dimension {d}",
            matrices[bad].dim()
        )));
    }
    let (mut dir, log_x0) = unit_and_log_norm(x0)?;
    let mut buf = vec![0.0; d];
    let mut increments = Vec::with_capacity(matrices.len());
    let mut log_norm = log_x0;
    for (k, w) in matrices.iter().enumerate() {
        match step(w, slopes, &mut dir, &mut buf) {
            Some(z) => {
                increments.push(z);
                log_norm += z;
            }
            None => {
                return Ok(Trajectory {
                    depth: matrices.len(),
                    increments,
                    final_direction: vec![0.0; d],
                    log_norm: f64::NEG_INFINITY,
                    hit_zero_at: Some(k + 1),
                });
            }
        }
    }
    Ok(Trajectory {
        depth: matrices.len(),
        increments,
        final_direction: dir,
        log_norm,
        hit_zero_at: None,
    })
}

pub fn forward(weights: &WeightStack, x0: &[f64], slopes: &ActivationSlopes) -> Result<Trajectory> {
    if x0.len() != weights.d() {
        return Err(Error::usage(format!(
            "input has dimension {} but the stack has width {}",
            x0.len(),
            weights.d()
        )));
    }
    forward_matrices(&weights.matrices, x0, slopes)
}

/// Mean and standard error of per-trial values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_trial_values: Option<Vec<f64>>,
}

impl MCEstimate {
    /// Summarize `values` (kept in the result when `keep_values`).
    pub fn from_values(values: Vec<f64>, keep_values: bool) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::usage("an estimate needs at least 2 trials"));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        Ok(Self {
            mean,
            std_error: (var / nf).sqrt(),
            trials: n,
            per_trial_values: keep_values.then_some(values),
        })
    }

    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.std_error
    }
}

/// Where layer weights come from in a Monte-Carlo run.
#[derive(Debug, Clone)]
pub enum WeightSource {
    /// Fresh draws from the ensemble for every trial.
    Ensemble(EnsembleSpec),
    /// The same fixed stack in every trial; only the input varies.
    Fixed(Arc<WeightStack>),
}

impl WeightSource {
    pub fn d(&self) -> usize {
        match self {
            WeightSource::Ensemble(e) => e.d,
            WeightSource::Fixed(s) => s.d(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, WeightSource::Ensemble(_))
    }
}

impl From<EnsembleSpec> for WeightSource {
    fn from(e: EnsembleSpec) -> Self {
        WeightSource::Ensemble(e)
    }
}

/// Run `f(k)` for `k in 0..trials` on the rayon pool, results in trial order.
pub fn run_trials<T, F>(trials: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(f).collect()
}

fn require_leaky(slopes: &ActivationSlopes) -> Result<()> {
    if slopes.is_relu() {
        return Err(Error::usage(
            "zero slopes have no finite exponent; use counterexample_relu instead",
        ));
    }
    ActivationSlopes::new(slopes.alpha1, slopes.alpha2).map(|_| ())
}

/// Sum of log-norm increments over `depth` layers starting from unit `dir`.
fn deep_log_growth<R: Rng + ?Sized>(
    source: &WeightSource,
    slopes: &ActivationSlopes,
    depth: usize,
    dir: &mut [f64],
    rng: &mut R,
) -> Result<f64> {
    let mut buf = vec![0.0; dir.len()];
    let mut total = 0.0;
    for layer in 0..depth {
        let z = match source {
            WeightSource::Ensemble(e) => {
                let w = sample_matrix(e, rng)?;
                step(&w, slopes, dir, &mut buf)
            }
            WeightSource::Fixed(stack) => step(&stack.matrices[layer], slopes, dir, &mut buf),
        };
        match z {
            Some(z) => total += z,
            // Probability zero for nonzero slopes and continuous weights.
            None => return Ok(f64::NEG_INFINITY),
        }
    }
    Ok(total)
}

fn check_depth(source: &WeightSource, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::usage("depth must be at least 1"));
    }
    if let WeightSource::Fixed(stack) = source {
        if stack.depth() < depth {
            return Err(Error::usage(format!(
                "fixed stack has {} layers, {depth} requested",
                stack.depth()
            )));
        }
    }
    Ok(())
}

/// Average of `log |phi(W e1)|` over fresh draws of `W`. Keeps the
/// per-trial values.
pub fn estimate_lambda_single_step(
    ensemble: &EnsembleSpec,
    slopes: &ActivationSlopes,
    trials: usize,
    seed: u64,
) -> Result<MCEstimate> {
    require_leaky(slopes)?;
    if trials < 100 {
        return Err(Error::usage(
            "single-step estimate needs at least 100 trials",
        ));
    }
    let d = ensemble.d;
    let values = run_trials(trials, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let w = sample_matrix(ensemble, &mut rng)?;
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        let mut buf = vec![0.0; d];
        Ok(step(&w, slopes, &mut dir, &mut buf).unwrap_or(f64::NEG_INFINITY))
    })?;
    MCEstimate::from_values(values, true)
}

/// Per-trial `(log |X_depth| - log |x0|) / depth` with `x0` uniform on the
/// sphere. Keeps the per-trial values.
pub fn estimate_lambda_deep(
    source: &WeightSource,
    slopes: &ActivationSlopes,
    depth: usize,
    trials: usize,
    seed: u64,
) -> Result<MCEstimate> {
    require_leaky(slopes)?;
    check_depth(source, depth)?;
    let d = source.d();
    let values = run_trials(trials, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let mut dir = sample_unit_sphere(d, &mut rng)?;
        Ok(deep_log_growth(source, slopes, depth, &mut dir, &mut rng)? / depth as f64)
    })?;
    MCEstimate::from_values(values, true)
}

/// Sample moments of the CLT statistic `(log |X_l| - l lambda) / sqrt(l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CLTReport {
    pub depth: usize,
    pub trials: usize,
    pub lambda: f64,
    pub mean: f64,
    /// Sample variance; estimates the limiting CLT variance.
    pub gamma_hat: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    #[serde(skip)]
    pub normalized_samples: Vec<f64>,
}

/// Mean, unbiased variance, skewness `m3 / m2^1.5` and excess kurtosis
/// `m4 / m2^2 - 3` (central moments with `1/n`).
pub fn sample_moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    let var_unbiased = m2 / (n - 1.0);
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    (mean, var_unbiased, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

pub fn estimate_clt(
    source: &WeightSource,
    slopes: &ActivationSlopes,
    depth: usize,
    trials: usize,
    lambda: f64,
    seed: u64,
) -> Result<CLTReport> {
    require_leaky(slopes)?;
    check_depth(source, depth)?;
    if !source.is_random() {
        return Err(Error::usage(
            "the CLT statistic needs random weights; a fixed stack has no fluctuations",
        ));
    }
    if trials < 1000 {
        return Err(Error::usage("CLT estimate needs at least 1000 trials"));
    }
    let d = source.d();
    let root = (depth as f64).sqrt();
    let samples = run_trials(trials, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let mut dir = sample_unit_sphere(d, &mut rng)?;
        let growth = deep_log_growth(source, slopes, depth, &mut dir, &mut rng)?;
        Ok((growth - depth as f64 * lambda) / root)
    })?;
    let (mean, gamma_hat, skewness, excess_kurtosis) = sample_moments(&samples);
    if !(gamma_hat > 0.0 && gamma_hat.is_finite()) {
        return Err(Error::Internal(format!(
            "degenerate CLT variance estimate {gamma_hat}"
        )));
    }
    Ok(CLTReport {
        depth,
        trials,
        lambda,
        mean,
        gamma_hat,
        skewness,
        excess_kurtosis,
        normalized_samples: samples,
    })
}

/// Empirical first and second moments of the direction chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub d: usize,
    pub steps: usize,
    pub trials: usize,
    pub mean: Vec<f64>,
    /// Row-major `E[S S^T]`.
    pub second_moment: Vec<f64>,
    /// `max_i |E[S]_i|`.
    pub mean_max_abs: f64,
    /// `max_ij |E[S S^T] - I/d|_ij`.
    pub second_moment_max_dev: f64,
}

/// Start from a uniform direction, apply `steps` chain steps
/// `S -> phi(W S) / |phi(W S)|`, and report the moments of the result.
pub fn stationarity_check(
    ensemble: &EnsembleSpec,
    slopes: &ActivationSlopes,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<StationarityReport> {
    require_leaky(slopes)?;
    if steps == 0 {
        return Err(Error::usage("steps must be at least 1"));
    }
    if trials < 2 {
        return Err(Error::usage("need at least 2 trials"));
    }
    let d = ensemble.d;
    let source = WeightSource::Ensemble(*ensemble);
    let finals = run_trials(trials, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let mut dir = sample_unit_sphere(d, &mut rng)?;
        deep_log_growth(&source, slopes, steps, &mut dir, &mut rng)?;
        Ok(dir)
    })?;
    let n = trials as f64;
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    for s in &finals {
        for i in 0..d {
            mean[i] += s[i];
            for j in 0..d {
                second[i * d + j] += s[i] * s[j];
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    second.iter_mut().for_each(|v| *v /= n);
    let mean_max_abs = mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut second_moment_max_dev = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 / d as f64 } else { 0.0 };
            second_moment_max_dev = second_moment_max_dev.max((second[i * d + j] - target).abs());
        }
    }
    Ok(StationarityReport {
        d,
        steps,
        trials,
        mean,
        second_moment: second,
        mean_max_abs,
        second_moment_max_dev,
    })
}

/// Fractions of ReLU runs absorbed at the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReluAbsorptionReport {
    pub d: usize,
    pub depth: usize,
    pub trials: usize,
    pub zero_fraction_layer1: f64,
    pub std_error_layer1: f64,
    pub zero_fraction_final: f64,
    pub std_error_final: f64,
}

/// ReLU network with `N(0, sigma^2)` weights started at `e1`.
pub fn counterexample_relu(
    d: usize,
    sigma: f64,
    depth: usize,
    trials: usize,
    seed: u64,
) -> Result<ReluAbsorptionReport> {
    let ensemble = EnsembleSpec::gaussian(d, sigma)?;
    if depth == 0 {
        return Err(Error::usage("depth must be at least 1"));
    }
    if trials < 2 {
        return Err(Error::usage("need at least 2 trials"));
    }
    let relu = ActivationSlopes::relu();
    let hits = run_trials(trials, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        let mut buf = vec![0.0; d];
        for layer in 1..=depth {
            let w = sample_matrix(&ensemble, &mut rng)?;
            if step(&w, &relu, &mut dir, &mut buf).is_none() {
                return Ok(Some(layer));
            }
        }
        Ok(None)
    })?;
    let n = trials as f64;
    let frac =
        |pred: &dyn Fn(&Option<usize>) -> bool| hits.iter().filter(|h| pred(h)).count() as f64 / n;
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    let layer1 = frac(&|h| *h == Some(1));
    let fin = frac(&|h| h.is_some());
    Ok(ReluAbsorptionReport {
        d,
        depth,
        trials,
        zero_fraction_layer1: layer1,
        std_error_layer1: se(layer1),
        zero_fraction_final: fin,
        std_error_final: se(fin),
    })
}

/// Exponents from the positive and negative cones under entrywise-positive
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositiveConeReport {
    pub d: usize,
    pub a: f64,
    pub alpha: f64,
    pub depth: usize,
    pub limit_pos: MCEstimate,
    pub limit_neg: MCEstimate,
    /// `limit_pos - limit_neg`; tends to `ln(1 / alpha)`.
    pub gap: f64,
    pub gap_std_error: f64,
    /// Number of (trial, layer) pairs where the state left its starting cone.
    pub cone_violations: usize,
}

/// Slopes `(1, alpha)`, `Unif[0, a]` weights, started at `+1/sqrt(d)` and at
/// `-1/sqrt(d)`. The two runs use independent weight draws.
pub fn counterexample_positive_cone(
    d: usize,
    a: f64,
    alpha: f64,
    depth: usize,
    trials: usize,
    seed: u64,
) -> Result<PositiveConeReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::domain(format!("a must be positive, got {a}")));
    }
    if d == 0 || depth == 0 {
        return Err(Error::usage("d and depth must be at least 1"));
    }
    let slopes = ActivationSlopes::leaky(alpha)?;
    let run = |sign: f64, family: u64| {
        run_trials(trials, move |k| {
            let mut rng = RngStream::family(seed, family, k).rng();
            let mut dir = vec![sign / (d as f64).sqrt(); d];
            let mut buf = vec![0.0; d];
            let mut total = 0.0;
            let mut violations = 0usize;
            for _ in 0..depth {
                let w = sample_uniform_positive_matrix(d, a, &mut rng)?;
                total += step(&w, &slopes, &mut dir, &mut buf).unwrap_or(f64::NEG_INFINITY);
                if !dir.iter().all(|&v| v * sign > 0.0) {
                    violations += 1;
                }
            }
            Ok((total / depth as f64, violations))
        })
    };
    let pos = run(1.0, 0)?;
    let neg = run(-1.0, 1)?;
    let cone_violations = pos.iter().chain(&neg).map(|(_, v)| v).sum();
    let limit_pos = MCEstimate::from_values(pos.into_iter().map(|(x, _)| x).collect(), false)?;
    let limit_neg = MCEstimate::from_values(neg.into_iter().map(|(x, _)| x).collect(), false)?;
    Ok(PositiveConeReport {
        d,
        a,
        alpha,
        depth,
        gap: limit_pos.mean - limit_neg.mean,
        gap_std_error: limit_pos.std_error.hypot(limit_neg.std_error),
        limit_pos,
        limit_neg,
        cone_violations,
    })
}

/// Monte-Carlo `E[exp(t phi(Z)^2)]` for standard normal `Z`.
pub fn estimate_mgf_phi_sq(
    t: f64,
    slopes: &ActivationSlopes,
    samples: usize,
    seed: u64,
) -> Result<MCEstimate> {
    const CHUNK: usize = 10_000;
    if samples < 2 {
        return Err(Error::usage("need at least 2 samples"));
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts = run_trials(chunks, |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let len = CHUNK.min(samples - k as usize * CHUNK);
        Ok((0..len)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let p = slopes.apply(z);
                (t * p * p).exp()
            })
            .collect::<Vec<_>>())
    })?;
    MCEstimate::from_values(parts.concat(), false)
}
