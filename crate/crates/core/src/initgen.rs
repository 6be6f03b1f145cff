//! Critical-scale weight initialization.
//!
//! [`lyapunov_init`] draws a stack at `sigma_crit` (Gaussian) or `eta_crit`
//! (orthogonal). [`sampled_lyapunov_init`] draws several such candidates and
//! keeps the one whose mean output norm over a set of probe inputs is closest
//! to 1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::ActivationSlopes;
use crate::analytic::{critical_scale, EnsembleKind, EnsembleSpec};
use crate::dynamics::forward;
use crate::ensembles::{sample_unit_sphere, RngStream, WeightStack};
use crate::error::{Error, Result};
use crate::quad::QuadSettings;

/// Stream family used for probe inputs (shared by all candidates).
const PROBE_FAMILY: u64 = 0x0070_726f_6265;

/// Distribution of network inputs used to score candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDistribution {
    UniformSphere {
        d: usize,
    },
    /// Independent `Unif[lo, hi]` coordinates.
    UniformBox {
        d: usize,
        lo: f64,
        hi: f64,
    },
    /// A fixed finite set; every vector is used once.
    FixedSet {
        vectors: Vec<Vec<f64>>,
    },
}

impl InputDistribution {
    pub fn d(&self) -> usize {
        match self {
            InputDistribution::UniformSphere { d } | InputDistribution::UniformBox { d, .. } => *d,
            InputDistribution::FixedSet { vectors } => vectors.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputDistribution::UniformSphere { d } if *d == 0 => {
                Err(Error::domain("input width must be at least 1"))
            }
            InputDistribution::UniformBox { d, lo, hi } => {
                if *d == 0 {
                    return Err(Error::domain("input width must be at least 1"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::domain(format!("invalid box [{lo}, {hi}]")));
                }
                Ok(())
            }
            InputDistribution::FixedSet { vectors } => {
                let d = self.d();
                if vectors.is_empty() || d == 0 {
                    return Err(Error::domain("fixed input set is empty"));
                }
                for v in vectors {
                    if v.len() != d {
                        return Err(Error::domain("fixed input vectors differ in dimension"));
                    }
                    if !v.iter().any(|x| *x != 0.0) || !v.iter().all(|x| x.is_finite()) {
                        return Err(Error::domain(
                            "fixed input vectors must be nonzero and finite",
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Draw `count` probe inputs (ignored for a fixed set).
    pub fn probes<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self {
            InputDistribution::UniformSphere { d } => {
                (0..count).map(|_| sample_unit_sphere(*d, rng)).collect()
            }
            InputDistribution::UniformBox { d, lo, hi } => {
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let v: Vec<f64> = (0..*d)
                        .map(|_| lo + (hi - lo) * rng.random::<f64>())
                        .collect();
                    // a box containing 0 can, with probability zero, give the origin
                    if v.iter().any(|x| *x != 0.0) {
                        out.push(v);
                    }
                }
                Ok(out)
            }
            InputDistribution::FixedSet { vectors } => Ok(vectors.clone()),
        }
    }
}

/// How "closest to 1" is measured for the mean output norm `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// `|ln m|`
    #[default]
    Log,
    /// `|m - 1|`
    Linear,
}

impl SelectionMetric {
    fn score(self, m: f64) -> f64 {
        if !m.is_finite() {
            return f64::INFINITY;
        }
        match self {
            SelectionMetric::Log => m.ln().abs(),
            SelectionMetric::Linear => (m - 1.0).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostics {
    pub candidate_count: usize,
    pub probe_inputs: usize,
    pub metric: SelectionMetric,
    /// `E[|X_depth|]` over the unit-normalized probes, one per candidate.
    pub per_candidate_norm_estimate: Vec<f64>,
    pub per_candidate_score: Vec<f64>,
    pub selected_index: usize,
    pub selection_score: f64,
    /// Mean norm of the probe inputs before normalization.
    pub mean_raw_input_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledInitOptions {
    /// Defaults to `ceil(2 sqrt(depth))`.
    pub candidate_count: Option<usize>,
    pub probe_inputs: usize,
    pub metric: SelectionMetric,
}

impl Default for SampledInitOptions {
    fn default() -> Self {
        Self {
            candidate_count: None,
            probe_inputs: 256,
            metric: SelectionMetric::Log,
        }
    }
}

/// `ceil(2 sqrt(depth))`.
pub fn default_candidate_count(depth: usize) -> usize {
    (2.0 * (depth as f64).sqrt()).ceil() as usize
}

fn critical_ensemble(
    d: usize,
    alpha: f64,
    kind: EnsembleKind,
    settings: &QuadSettings,
) -> Result<EnsembleSpec> {
    if d == 0 {
        return Err(Error::domain("width d must be at least 1"));
    }
    EnsembleSpec::new(kind, d, critical_scale(kind, d, alpha, settings)?)
}

/// Stack of `depth` layers at the critical scale, drawn from stream
/// `(seed, 0)`. Biases are not modelled (all zero).
pub fn lyapunov_init(
    d: usize,
    depth: usize,
    alpha: f64,
    kind: EnsembleKind,
    seed: u64,
    settings: &QuadSettings,
) -> Result<WeightStack> {
    let ensemble = critical_ensemble(d, alpha, kind, settings)?;
    let mut stack = WeightStack::sample(ensemble, depth, RngStream::new(seed, 0))?;
    stack.diagnostics.insert("alpha".into(), alpha.into());
    stack
        .diagnostics
        .insert("algorithm".into(), "lyapunov_init".into());
    Ok(stack)
}

/// Draw candidates `k = 0..count` from streams `(seed, k)` at the critical
/// scale and return the one minimizing the selection score.
///
/// Probe inputs are shared by all candidates and normalized to unit length
/// before the forward pass, so the score depends only on the weights.
#[allow(clippy::too_many_arguments)]
pub fn sampled_lyapunov_init(
    d: usize,
    depth: usize,
    alpha: f64,
    kind: EnsembleKind,
    input_dist: &InputDistribution,
    options: &SampledInitOptions,
    seed: u64,
    settings: &QuadSettings,
) -> Result<(WeightStack, CandidateDiagnostics)> {
    input_dist.validate()?;
    if input_dist.d() != d {
        return Err(Error::usage(format!(
            "input distribution has dimension {}, network width is {d}",
            input_dist.d()
        )));
    }
    if options.probe_inputs == 0 {
        return Err(Error::usage("probe_inputs must be at least 1"));
    }
    let count = options
        .candidate_count
        .unwrap_or_else(|| default_candidate_count(depth));
    if count == 0 {
        return Err(Error::usage("candidate_count must be at least 1"));
    }
    let slopes = ActivationSlopes::leaky(alpha)?;
    let ensemble = critical_ensemble(d, alpha, kind, settings)?;

    let raw = input_dist.probes(
        options.probe_inputs,
        &mut RngStream::family(seed, PROBE_FAMILY, 0).rng(),
    )?;
    let raw_norms: Vec<f64> = raw
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let probes: Vec<Vec<f64>> = raw
        .iter()
        .zip(&raw_norms)
        .map(|(v, n)| v.iter().map(|x| x / n).collect())
        .collect();

    let candidates = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let stack = WeightStack::sample(ensemble, depth, RngStream::new(seed, k))?;
            let mut total = 0.0;
            for x in &probes {
                let log_norm = forward(&stack, x, &slopes)?.log_norm;
                total += if log_norm > 700.0 {
                    f64::INFINITY
                } else if log_norm < -700.0 {
                    0.0
                } else {
                    log_norm.exp()
                };
            }
            let m = total / probes.len() as f64;
            let score = if m == 0.0 {
                f64::INFINITY
            } else {
                options.metric.score(m)
            };
            Ok((stack, m, score))
        })
        .collect::<Result<Vec<_>>>()?;

    // First index wins ties.
    let (selected_index, selection_score) =
        candidates
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (k, (_, _, s))| {
                    if *s < best.1 {
                        (k, *s)
                    } else {
                        best
                    }
                },
            );
    if !selection_score.is_finite() {
        return Err(Error::Internal(
            "every candidate produced a non-finite output norm estimate".into(),
        ));
    }

    let diagnostics = CandidateDiagnostics {
        candidate_count: count,
        probe_inputs: probes.len(),
        metric: options.metric,
        per_candidate_norm_estimate: candidates.iter().map(|c| c.1).collect(),
        per_candidate_score: candidates.iter().map(|c| c.2).collect(),
        selected_index,
        selection_score,
        mean_raw_input_norm: raw_norms.iter().sum::<f64>() / raw_norms.len() as f64,
    };
    let mut stack = candidates
        .into_iter()
        .nth(selected_index)
        .expect("selected index is in range")
        .0;
    stack.diagnostics.insert("alpha".into(), alpha.into());
    stack
        .diagnostics
        .insert("algorithm".into(), "sampled_lyapunov_init".into());
    if let Value::Object(map) = serde_json::to_value(&diagnostics)? {
        stack.diagnostics.extend(map);
    }
    stack.diagnostics.insert(
        "input_distribution".into(),
        serde_json::to_value(input_dist)?,
    );
    Ok((stack, diagnostics))
}
