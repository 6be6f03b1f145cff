use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lyapunov_core::analytic::{self, LyapunovReport};
use lyapunov_core::dynamics::{self, MCEstimate, WeightSource};
use lyapunov_core::initgen::{self, InputDistribution, SampledInitOptions, SelectionMetric};
use lyapunov_core::output::{fmt_f64, to_json_string, ExperimentRecord};
use lyapunov_core::table::{self, DEFAULT_DIMS};
use lyapunov_core::{ActivationSlopes, EnsembleKind, EnsembleSpec, QuadSettings};
use serde_json::{json, Map, Value};

use crate::{
    usage, Cli, CliError, Command, Ensemble, Experiment, ExponentArgs, InitArgs, Metric, Scale,
    SimulateArgs, TableArgs, TableFormat,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let settings = QuadSettings::default();
    match cli.command {
        Command::Exponent(a) => exponent(a, &settings),
        Command::Table(a) => table_cmd(a, &settings),
        Command::Simulate(a) => simulate(a, &settings),
        Command::Init(a) => init(a, &settings),
    }
}

/// Write to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn resolve_scale(
    kind: EnsembleKind,
    d: usize,
    alpha: f64,
    scale: Scale,
    s: &QuadSettings,
) -> Result<f64> {
    Ok(match scale {
        Scale::Value(v) => v,
        Scale::Crit => analytic::critical_scale(kind, d, alpha, s)?,
        Scale::He if kind == EnsembleKind::Gaussian => analytic::sigma_he(d, alpha)?,
        Scale::He => return Err(usage("--scale he applies to the gaussian ensemble only")),
    })
}

fn exponent(a: ExponentArgs, s: &QuadSettings) -> Result<()> {
    let kind = a.ensemble.into();
    let scale = resolve_scale(kind, a.d, a.alpha, a.scale, s)?;
    let report = LyapunovReport::compute(EnsembleSpec::new(kind, a.d, scale)?, a.alpha, s)?;
    emit(a.out.as_deref(), &to_json_string(&report)?)
}

fn table_cmd(a: TableArgs, s: &QuadSettings) -> Result<()> {
    let dims = a.dims.unwrap_or_else(|| DEFAULT_DIMS.to_vec());
    if dims.is_empty() {
        return Err(usage("--dims is empty"));
    }
    let rows = table::compute_table(a.alpha, &dims, s)?;
    let text = match a.format {
        TableFormat::Csv => table::to_csv(&rows),
        TableFormat::Md => table::to_markdown(&rows, a.alpha),
        TableFormat::Json => table::to_json(&rows, a.alpha)?,
    };
    emit(a.out.as_deref(), &text)
}

fn values_csv(header: &str, values: &[f64]) -> String {
    let mut out = format!("trial,{header}\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", fmt_f64(*v)));
    }
    out
}

fn simulate(a: SimulateArgs, s: &QuadSettings) -> Result<()> {
    let counterexample = matches!(
        a.experiment,
        Experiment::ReluZero | Experiment::PositiveCone
    );
    if counterexample {
        if a.ensemble == Some(Ensemble::Orthogonal) {
            return Err(usage(
                "relu-zero and positive-cone fix their own weight distribution",
            ));
        }
        if !matches!(a.scale, Scale::Value(_)) {
            return Err(usage("relu-zero and positive-cone need a numeric --scale"));
        }
    }
    let per_trial = matches!(
        a.experiment,
        Experiment::Lln | Experiment::SingleStep | Experiment::Clt
    );
    if a.csv.is_some() && !per_trial {
        return Err(usage(
            "--csv is available for lln, single-step and clt only",
        ));
    }

    let seed = seed_or_entropy(a.seed);
    let kind: EnsembleKind = a.ensemble.unwrap_or(Ensemble::Gaussian).into();
    let mut params = json!({
        "d": a.d,
        "alpha": a.alpha,
        "depth": a.depth,
        "trials": a.trials,
    });
    let mut extra = Map::new();
    let mut csv = None;

    let (mean, std_error, trials) = if counterexample {
        let Scale::Value(scale) = a.scale else {
            unreachable!()
        };
        params["scale"] = scale.into();
        if a.experiment == Experiment::ReluZero {
            params["alpha"] = 0.0.into();
            params["kind"] = "gaussian".into();
            let r = dynamics::counterexample_relu(a.d, scale, a.depth, a.trials, seed)?;
            extra.insert("expected_layer1".into(), 0.5f64.powi(a.d as i32).into());
            extra.insert("zero_fraction_final".into(), r.zero_fraction_final.into());
            extra.insert("std_error_final".into(), r.std_error_final.into());
            (r.zero_fraction_layer1, r.std_error_layer1, r.trials)
        } else {
            params["kind"] = "uniform_positive".into();
            let r = dynamics::counterexample_positive_cone(
                a.d, scale, a.alpha, a.depth, a.trials, seed,
            )?;
            extra.insert("expected_gap".into(), (1.0 / a.alpha).ln().into());
            extra.insert("limit_pos".into(), estimate_json(&r.limit_pos));
            extra.insert("limit_neg".into(), estimate_json(&r.limit_neg));
            extra.insert("cone_violations".into(), r.cone_violations.into());
            (r.gap, r.gap_std_error, a.trials)
        }
    } else {
        let scale = resolve_scale(kind, a.d, a.alpha, a.scale, s)?;
        let ens = EnsembleSpec::new(kind, a.d, scale)?;
        let slopes = ActivationSlopes::leaky(a.alpha)?;
        params["kind"] = serde_json::to_value(kind).expect("kind serializes");
        params["scale"] = scale.into();
        let lambda = ens.lambda(a.alpha, s)?;
        match a.experiment {
            Experiment::Lln | Experiment::SingleStep => {
                let est = if a.experiment == Experiment::Lln {
                    dynamics::estimate_lambda_deep(&ens.into(), &slopes, a.depth, a.trials, seed)?
                } else {
                    dynamics::estimate_lambda_single_step(&ens, &slopes, a.trials, seed)?
                };
                extra.insert("lambda_exact".into(), lambda.into());
                extra.insert("z_score".into(), est.z_score(lambda).into());
                if let Some(values) = &est.per_trial_values {
                    csv = Some(values_csv("value", values));
                }
                (est.mean, est.std_error, est.trials)
            }
            Experiment::Clt => {
                let source = WeightSource::Ensemble(ens);
                let r = dynamics::estimate_clt(&source, &slopes, a.depth, a.trials, lambda, seed)?;
                extra.insert("lambda".into(), lambda.into());
                extra.insert("gamma_hat".into(), r.gamma_hat.into());
                extra.insert("skewness".into(), r.skewness.into());
                extra.insert("excess_kurtosis".into(), r.excess_kurtosis.into());
                csv = Some(values_csv("normalized", &r.normalized_samples));
                (r.mean, (r.gamma_hat / r.trials as f64).sqrt(), r.trials)
            }
            Experiment::Stationarity => {
                let r = dynamics::stationarity_check(&ens, &slopes, a.depth, a.trials, seed)?;
                extra.insert("first_moment".into(), json!(r.mean));
                extra.insert("second_moment".into(), json!(r.second_moment));
                extra.insert("mean_max_abs".into(), r.mean_max_abs.into());
                extra.insert(
                    "second_moment_max_dev".into(),
                    r.second_moment_max_dev.into(),
                );
                (r.mean_max_abs, f64::NAN, r.trials)
            }
            Experiment::ReluZero | Experiment::PositiveCone => unreachable!(),
        }
    };

    let record = ExperimentRecord {
        experiment: experiment_name(a.experiment).into(),
        params,
        mean,
        std_error,
        trials,
        seed,
        extra,
    };
    if let (Some(path), Some(text)) = (a.csv.as_deref(), csv) {
        emit(Some(path), &text)?;
    }
    emit(a.out.as_deref(), &to_json_string(&record)?)
}

fn estimate_json(e: &MCEstimate) -> Value {
    json!({"mean": e.mean, "std_error": e.std_error, "trials": e.trials})
}

fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Lln => "lln",
        Experiment::Clt => "clt",
        Experiment::SingleStep => "single-step",
        Experiment::Stationarity => "stationarity",
        Experiment::ReluZero => "relu-zero",
        Experiment::PositiveCone => "positive-cone",
    }
}

fn parse_input_dist(spec: &str, d: usize) -> Result<InputDistribution> {
    let bad = || {
        usage(format!(
            "--input-dist: expected sphere, box:LO:HI or file:PATH, got `{spec}`"
        ))
    };
    if spec == "sphere" {
        return Ok(InputDistribution::UniformSphere { d });
    }
    if let Some(rest) = spec.strip_prefix("box:") {
        let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
        let lo = lo.parse().map_err(|_| bad())?;
        let hi = hi.parse().map_err(|_| bad())?;
        return Ok(InputDistribution::UniformBox { d, lo, hi });
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })?;
        let vectors: Vec<Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| usage(format!("{path}: expected a JSON list of vectors: {e}")))?;
        return Ok(InputDistribution::FixedSet { vectors });
    }
    Err(bad())
}

fn init(a: InitArgs, s: &QuadSettings) -> Result<()> {
    let seed = seed_or_entropy(a.seed);
    let kind = a.kind.into();
    let stack = if a.sampled {
        let dist = parse_input_dist(&a.input_dist, a.d)?;
        let options = SampledInitOptions {
            candidate_count: a.candidates,
            probe_inputs: a.probe_inputs,
            metric: match a.metric {
                Metric::Log => SelectionMetric::Log,
                Metric::Linear => SelectionMetric::Linear,
            },
        };
        initgen::sampled_lyapunov_init(a.d, a.depth, a.alpha, kind, &dist, &options, seed, s)?.0
    } else {
        initgen::lyapunov_init(a.d, a.depth, a.alpha, kind, seed, s)?
    };
    emit(a.out.as_deref(), &stack.to_json()?)
}
