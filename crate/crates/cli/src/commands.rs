use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use parsmooth::estimation::{mle_fit, EstimationConfig, ModelFamily, MleResult, OptimizerOptions};
use parsmooth::gslr::StateSpaceModel;
use parsmooth::iterated::{default_init, iterated_smoother, Diagnostics, IterationConfig};
use parsmooth::kalman::{Execution, Mode};
use parsmooth::models::{
    simulate, CtObservationStdFamily, LgssmNoiseFamily, RickerLogAFamily, Simulation,
};
use parsmooth::Real;

use crate::config::{exec_name, mode_name, ModelConfig, Precision, RunConfig};
use crate::output::{fmt, read_observations, sibling, write_sidecar, Table};
use crate::CliError;

impl ModelConfig {
    fn state_dim(&self) -> usize {
        match self {
            ModelConfig::Ricker(m) => m.state_dim(),
            ModelConfig::Ct(m) => m.state_dim(),
            ModelConfig::Lgssm { model, .. } => model.state_dim(),
        }
    }

    fn obs_dim(&self) -> usize {
        match self {
            ModelConfig::Ricker(m) => m.obs_dim(),
            ModelConfig::Ct(m) => m.obs_dim(),
            ModelConfig::Lgssm { model, .. } => model.obs_dim(),
        }
    }

    fn simulate(&self, n: usize, seed: u64) -> parsmooth::Result<Simulation> {
        match self {
            ModelConfig::Ricker(m) => simulate(m, n, seed),
            ModelConfig::Ct(m) => simulate(m, n, seed),
            ModelConfig::Lgssm { model, .. } => simulate(model, n, seed),
        }
    }

    fn at_precision<T: Real>(&self) -> Box<dyn StateSpaceModel<T>> {
        match self {
            ModelConfig::Ricker(m) => Box::new(m.cast::<T>()),
            ModelConfig::Ct(m) => Box::new(m.cast::<T>()),
            ModelConfig::Lgssm { model, .. } => Box::new(model.cast::<T>()),
        }
    }
}

/// Smoother output converted to `f64`: means and covariance diagonals.
struct Smoothed {
    means: Vec<DVector<f64>>,
    variances: Vec<DVector<f64>>,
    diagnostics: Diagnostics,
}

/// A model and measurements cast to the working precision, ready for
/// repeated smoothing runs.
struct Prepared<T: Real> {
    model: Box<dyn StateSpaceModel<T>>,
    ys: Vec<DVector<T>>,
}

impl<T: Real> Prepared<T> {
    fn new(model: &ModelConfig, ys: &[DVector<f64>]) -> Self {
        Prepared {
            model: model.at_precision::<T>(),
            ys: ys.iter().map(|y| y.map(T::from_f64)).collect(),
        }
    }

    fn run(&self, cfg: &IterationConfig) -> parsmooth::Result<Smoothed> {
        let init = default_init(self.model.as_ref(), self.ys.len(), cfg.mode)?;
        let (out, diagnostics) = iterated_smoother(self.model.as_ref(), &self.ys, &init, cfg)?;
        Ok(Smoothed {
            means: out.means.iter().map(|m| m.map(|v| v.to_f64())).collect(),
            variances: (0..out.len())
                .map(|k| out.covariance(k).diagonal().map(|v| v.to_f64()))
                .collect(),
            diagnostics,
        })
    }

    fn time(&self, cfg: &IterationConfig, warmup: usize, reps: usize) -> Result<Vec<f64>, CliError> {
        for _ in 0..warmup {
            self.run(cfg)?;
        }
        (0..reps)
            .map(|_| {
                let start = Instant::now();
                self.run(cfg)?;
                Ok(start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    }
}

fn iteration_config(cfg: &RunConfig, mode: Mode, execution: Execution) -> IterationConfig {
    IterationConfig {
        max_iterations: cfg.iters,
        tolerance: cfg.tol,
        mode,
        method: cfg.method,
        execution,
        anderson_memory: cfg.anderson,
    }
}

fn method_label(cfg: &RunConfig, mode: Mode, exec: Execution) -> String {
    format!("{}-{}-{}", cfg.method, mode_name(mode), exec_name(exec))
}

fn observations(cfg: &RunConfig) -> Result<Vec<DVector<f64>>, CliError> {
    match &cfg.data {
        Some(path) => read_observations(path, cfg.model.obs_dim()),
        None => Ok(cfg.model.simulate(cfg.n[0], cfg.seed)?.observations),
    }
}

fn finish(cfg: &RunConfig, mut outputs: Vec<PathBuf>) -> Result<(), CliError> {
    if cfg.json {
        outputs.retain(|p| p.exists());
        write_sidecar(cfg, &outputs)?;
    }
    Ok(())
}

pub fn simulate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (nx, ny) = (cfg.model.state_dim(), cfg.model.obs_dim());
    let sim = cfg.model.simulate(cfg.n[0], cfg.seed)?;
    let header = std::iter::once("k".to_string())
        .chain((0..nx).map(|i| format!("x{i}")))
        .chain((0..ny).map(|i| format!("y{i}")));
    let mut table = Table::new(header);
    for (k, y) in sim.observations.iter().enumerate() {
        let x = &sim.states[k + 1];
        let row = std::iter::once((k + 1).to_string())
            .chain(x.iter().map(|&v| fmt(v)))
            .chain(y.iter().map(|&v| fmt(v)))
            .collect();
        table.push(row);
    }
    table.write(cfg, "simulation", cfg.out.as_deref())?;
    finish(cfg, cfg.out.iter().cloned().collect())
}

fn divergence_record(cfg: &RunConfig, err: &parsmooth::Error) -> Result<(), CliError> {
    let mut table = Table::new(["status", "iteration", "error"]);
    let iteration = match err {
        parsmooth::Error::Divergence { iteration } | parsmooth::Error::AtIteration { iteration, .. } => {
            iteration.to_string()
        }
        _ => String::new(),
    };
    table.push(vec!["diverged".into(), iteration, err.to_string()]);
    table.write(cfg, "divergence", cfg.out.as_deref())
}

pub fn smooth_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let ys = observations(cfg)?;
    let it = iteration_config(cfg, cfg.mode(), cfg.exec());
    let result = match cfg.precision {
        Precision::Single => Prepared::<f32>::new(&cfg.model, &ys).run(&it),
        Precision::Double => Prepared::<f64>::new(&cfg.model, &ys).run(&it),
    };
    let out = match result {
        Ok(out) => out,
        Err(e) => {
            let e = CliError::from(e);
            if let CliError::Numerical(inner) = &e {
                divergence_record(cfg, inner)?;
            }
            return Err(e);
        }
    };

    let nx = cfg.model.state_dim();
    let header = std::iter::once("k".to_string())
        .chain((0..nx).map(|i| format!("m{i}")))
        .chain((0..nx).map(|i| format!("var{i}")));
    let mut table = Table::new(header);
    for (k, (m, v)) in out.means.iter().zip(&out.variances).enumerate() {
        let row = std::iter::once(k.to_string())
            .chain(m.iter().map(|&x| fmt(x)))
            .chain(v.iter().map(|&x| fmt(x)))
            .collect();
        table.push(row);
    }
    table.write(cfg, "smoothed marginals", cfg.out.as_deref())?;

    let d = &out.diagnostics;
    let mut diag = Table::new(["iteration", "log_likelihood", "mean_change", "clipped_steps"]);
    for i in 0..d.iterations() {
        diag.push(vec![
            (i + 1).to_string(),
            fmt(d.log_likelihoods[i]),
            fmt(d.mean_changes[i]),
            d.clipped[i].to_string(),
        ]);
    }
    let diag_path = cfg
        .side_output
        .clone()
        .or_else(|| cfg.out.as_deref().map(|p| sibling(p, "diagnostics")));
    if let Some(p) = &diag_path {
        diag.write(cfg, "smoother diagnostics", Some(p))?;
    }
    eprintln!(
        "{} after {} iterations (final mean change {:e})",
        if d.converged { "converged" } else { "stopped" },
        d.iterations(),
        d.mean_changes.last().copied().unwrap_or(f64::NAN)
    );
    finish(cfg, cfg.out.iter().cloned().chain(diag_path).collect())
}

fn mean_std_median(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    (mean, std, median)
}

pub fn bench_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut table = Table::new(["method", "n", "reps", "mean_ms", "std_ms", "median_ms"]);
    for &n in &cfg.n {
        let ys = cfg.model.simulate(n, cfg.seed)?.observations;
        for &mode in &cfg.modes {
            for &exec in &cfg.execs {
                let it = iteration_config(cfg, mode, exec);
                let times = match cfg.precision {
                    Precision::Single => Prepared::<f32>::new(&cfg.model, &ys).time(&it, cfg.warmup, cfg.reps),
                    Precision::Double => Prepared::<f64>::new(&cfg.model, &ys).time(&it, cfg.warmup, cfg.reps),
                }?;
                let (mean, std, median) = mean_std_median(&times);
                table.push(vec![
                    method_label(cfg, mode, exec),
                    n.to_string(),
                    cfg.reps.to_string(),
                    fmt(mean),
                    fmt(std),
                    fmt(median),
                ]);
            }
        }
    }
    table.write(cfg, "runtimes", cfg.out.as_deref())?;
    finish(cfg, cfg.out.iter().cloned().collect())
}

/// A run diverges when it errors or its final log-likelihood is not finite.
fn diverged(result: &parsmooth::Result<Smoothed>) -> bool {
    match result {
        Ok(s) => !s.diagnostics.log_likelihoods.last().is_some_and(|l| l.is_finite()),
        Err(_) => true,
    }
}

pub fn robustness_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let mut table = Table::new(["method", "n", "runs", "diverged", "rate"]);
    for &n in &cfg.n {
        let data = (0..cfg.reps as u64)
            .map(|r| Ok(cfg.model.simulate(n, cfg.seed + r)?.observations))
            .collect::<Result<Vec<_>, CliError>>()?;
        for &mode in &cfg.modes {
            for &exec in &cfg.execs {
                let it = iteration_config(cfg, mode, exec);
                let count = data
                    .iter()
                    .filter(|ys| {
                        let result = match cfg.precision {
                            Precision::Single => Prepared::<f32>::new(&cfg.model, ys).run(&it),
                            Precision::Double => Prepared::<f64>::new(&cfg.model, ys).run(&it),
                        };
                        diverged(&result)
                    })
                    .count();
                table.push(vec![
                    method_label(cfg, mode, exec),
                    n.to_string(),
                    cfg.reps.to_string(),
                    count.to_string(),
                    fmt(count as f64 / cfg.reps as f64),
                ]);
            }
        }
    }
    table.write(cfg, "divergence rates", cfg.out.as_deref())?;
    finish(cfg, cfg.out.iter().cloned().collect())
}

fn fit<F: ModelFamily>(
    family: &F,
    names: &[&str],
    cfg: &RunConfig,
    ys: &[DVector<f64>],
) -> Result<(), CliError> {
    let theta0 = cfg.theta0.clone().unwrap_or_else(|| family.initial());
    if theta0.len() != family.dim() {
        return Err(CliError::Config(format!(
            "theta0 has {} entries, the model has {} parameters",
            theta0.len(),
            family.dim()
        )));
    }
    let est = EstimationConfig {
        smoother: iteration_config(cfg, cfg.mode(), cfg.exec()),
        tangent_anderson_memory: cfg.anderson,
        ..EstimationConfig::default()
    };
    let MleResult {
        theta,
        log_likelihood,
        gradient,
        trace,
        termination,
        evaluations,
    } = mle_fit(family, ys, &theta0, &est, cfg.gradient, &OptimizerOptions::default())?;

    let termination = format!("{termination:?}");
    let mut record = Table::new([
        "parameter",
        "estimate",
        "gradient",
        "log_likelihood",
        "termination",
        "evaluations",
    ]);
    for (i, name) in names.iter().enumerate() {
        record.push(vec![
            name.to_string(),
            fmt(theta[i]),
            fmt(gradient[i]),
            fmt(log_likelihood),
            termination.clone(),
            evaluations.to_string(),
        ]);
    }
    record.write(cfg, "estimate", cfg.out.as_deref())?;

    let header = ["iteration", "log_likelihood", "gradient_norm"]
        .into_iter()
        .map(String::from)
        .chain(names.iter().map(|n| n.to_string()));
    let mut table = Table::new(header);
    for entry in &trace {
        let row = [entry.iteration.to_string(), fmt(entry.value), fmt(entry.gradient_norm)]
            .into_iter()
            .chain(entry.theta.iter().map(|&t| fmt(t)))
            .collect();
        table.push(row);
    }
    let trace_path = cfg
        .side_output
        .clone()
        .or_else(|| cfg.out.as_deref().map(|p| sibling(p, "trace")));
    if let Some(p) = &trace_path {
        table.write(cfg, "optimizer trace", Some(p))?;
    }
    eprintln!("{termination} after {} iterations, {evaluations} evaluations", trace.len().saturating_sub(1));
    finish(cfg, cfg.out.iter().cloned().chain(trace_path).collect())
}

pub fn estimate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let ys = observations(cfg)?;
    match &cfg.model {
        ModelConfig::Ricker(m) => fit(&RickerLogAFamily { base: *m }, &["log_a"], cfg, &ys),
        ModelConfig::Ct(m) => fit(&CtObservationStdFamily { base: m.clone() }, &["r1_std"], cfg, &ys),
        ModelConfig::Lgssm {
            model,
            estimate_process,
            ..
        } => {
            let family = LgssmNoiseFamily {
                base: model.clone(),
                process: *estimate_process,
            };
            let names: &[&str] = if *estimate_process {
                &["process_scale", "observation_scale"]
            } else {
                &["observation_scale"]
            };
            fit(&family, names, cfg, &ys)
        }
    }
}
