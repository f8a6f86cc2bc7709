//! Run configuration: a flat `key=value` map assembled from an optional
//! configuration file, `--set` overrides and command-line flags (in rising
//! priority), then validated into a [`RunConfig`].
//!
//! Recognized keys:
//!
//! | key | meaning |
//! |---|---|
//! | `model` | `ricker`, `ct` or `lgssm` |
//! | `n` | number of steps; a comma-separated sweep for `bench`/`robustness` |
//! | `seed` | simulation seed (robustness uses `seed..seed+reps`) |
//! | `mode` | `std` or `sqrt`; a list for `bench`/`robustness` |
//! | `exec` | `seq` or `par`; a list for `bench`/`robustness` |
//! | `linearizer` | `taylor`, `cubature`, `unscented`, `gh:<order>` |
//! | `iters`, `tol` | iteration cap and mean-change tolerance |
//! | `anderson` | Anderson mixing depth for the smoother and tangent iterations (0 = plain) |
//! | `precision` | `32` or `64` |
//! | `threads` | worker pool size |
//! | `threshold` | scan block size below which work is sequential |
//! | `reps`, `warmup` | timed and untimed repetitions (`bench`), seeds (`robustness`) |
//! | `data` | measurement CSV for `smooth`/`estimate` (simulated when absent) |
//! | `gradient`, `fd_step`, `theta0` | `estimate`: `fixed-point` or `fd`, FD step, start |
//! | `ricker.{a,b,c,q,prior_var}` | Ricker parameters |
//! | `ct.{q1,q2,dt,r1_std,r2_std,sensors,m0,p0_std}` | coordinated-turn parameters; `sensors` as `x,y;x,y` |
//! | `lgssm.{nx,ny,seed,spectral_norm,process_scale,observation_scale,estimate_process}` | random linear-Gaussian model |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use parsmooth::estimation::GradientMethod;
use parsmooth::gslr::Method;
use parsmooth::kalman::{Execution, Mode};
use parsmooth::models::{random_lgssm, CoordinatedTurn, LinearGaussian, RandomLgssmSpec, Ricker};
use parsmooth::scan::ScanOptions;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Smooth,
    Bench,
    Robustness,
    Estimate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Smooth => "smooth",
            CommandKind::Bench => "bench",
            CommandKind::Robustness => "robustness",
            CommandKind::Estimate => "estimate",
        }
    }

    fn is_sweep(self) -> bool {
        matches!(self, CommandKind::Bench | CommandKind::Robustness)
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            CommandKind::Simulate => &[("model", "ricker"), ("n", "100")],
            CommandKind::Smooth => &[("model", "ricker"), ("n", "100"), ("iters", "20"), ("tol", "1e-6")],
            CommandKind::Bench => &[
                ("model", "ricker"),
                ("n", "10,100,1000,10000"),
                ("mode", "std,sqrt"),
                ("exec", "seq,par"),
                ("iters", "20"),
                ("tol", "0"),
                ("reps", "20"),
                ("warmup", "1"),
            ],
            CommandKind::Robustness => &[
                ("model", "ct"),
                ("n", "100,1000,4000"),
                ("mode", "std,sqrt"),
                ("exec", "par"),
                ("iters", "20"),
                ("tol", "0"),
                ("reps", "15"),
                ("precision", "32"),
            ],
            CommandKind::Estimate => &[
                ("model", "ct"),
                ("n", "1000"),
                ("iters", "200"),
                ("tol", "1e-10"),
                ("anderson", "5"),
            ],
        }
    }
}

const GENERAL_KEYS: &[&str] = &[
    "model",
    "n",
    "seed",
    "mode",
    "exec",
    "linearizer",
    "iters",
    "tol",
    "anderson",
    "precision",
    "threads",
    "threshold",
    "reps",
    "warmup",
    "data",
    "gradient",
    "fd_step",
    "theta0",
];

const RICKER_KEYS: &[&str] = &["a", "b", "c", "q", "prior_var"];
const CT_KEYS: &[&str] = &["q1", "q2", "dt", "r1_std", "r2_std", "sensors", "m0", "p0_std"];
const LGSSM_KEYS: &[&str] = &[
    "nx",
    "ny",
    "seed",
    "spectral_norm",
    "process_scale",
    "observation_scale",
    "estimate_process",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => write!(f, "32"),
            Precision::Double => write!(f, "64"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Ricker(Ricker<f64>),
    Ct(CoordinatedTurn<f64>),
    Lgssm {
        spec: RandomLgssmSpec,
        model: LinearGaussian<f64>,
        estimate_process: bool,
    },
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Ricker(_) => "ricker",
            ModelConfig::Ct(_) => "ct",
            ModelConfig::Lgssm { .. } => "lgssm",
        }
    }

    /// Fully resolved parameters, as `key=value` pairs.
    fn echo(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        match self {
            ModelConfig::Ricker(m) => {
                push("ricker.a", m.a.to_string());
                push("ricker.b", m.b.to_string());
                push("ricker.c", m.c.to_string());
                push("ricker.q", m.q.to_string());
                push("ricker.prior_var", m.prior_var.to_string());
            }
            ModelConfig::Ct(m) => {
                push("ct.q1", m.q1.to_string());
                push("ct.q2", m.q2.to_string());
                push("ct.dt", m.dt.to_string());
                push("ct.r1_std", m.r[(0, 0)].sqrt().to_string());
                push("ct.r2_std", m.r[(1, 1)].sqrt().to_string());
                let sensors: Vec<String> = m.sensors.iter().map(|(x, y)| format!("{x},{y}")).collect();
                push("ct.sensors", sensors.join(";"));
                push("ct.m0", join(m.prior_mean.iter()));
                push("ct.p0_std", join(m.prior_chol.diagonal().iter()));
            }
            ModelConfig::Lgssm {
                spec,
                estimate_process,
                ..
            } => {
                push("lgssm.nx", spec.nx.to_string());
                push("lgssm.ny", spec.ny.to_string());
                push("lgssm.seed", spec.seed.to_string());
                push("lgssm.spectral_norm", spec.spectral_norm.to_string());
                push("lgssm.process_scale", spec.process_scale.to_string());
                push("lgssm.observation_scale", spec.observation_scale.to_string());
                push("lgssm.estimate_process", estimate_process.to_string());
            }
        }
        out
    }
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: ModelConfig,
    pub n: Vec<usize>,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub execs: Vec<Execution>,
    pub method: Method,
    pub iters: usize,
    pub tol: f64,
    pub anderson: usize,
    pub precision: Precision,
    pub threads: usize,
    pub threshold: usize,
    pub reps: usize,
    pub warmup: usize,
    pub data: Option<PathBuf>,
    pub gradient: GradientMethod,
    pub theta0: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub json: bool,
    pub side_output: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a flat `key=value` file; blank lines and `#` comments are ignored.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_pairs(text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.to_string()))
    }))
}

/// Parses `key=value` entries tagged with a position for error messages.
pub fn parse_pairs(
    entries: impl IntoIterator<Item = (usize, String)>,
) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (pos, entry) in entries {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| config_err(format!("entry {pos}: expected key=value, got '{entry}'")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Values<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Values<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| config_err(format!("{key}={v}: {e}"))))
            .transpose()
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<T>().map_err(|e| config_err(format!("{key}={v}: {e}"))))
                    .collect()
            })
            .transpose()
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    match s.trim() {
        "std" => Ok(Mode::Standard),
        "sqrt" => Ok(Mode::SquareRoot),
        other => Err(config_err(format!("mode must be std or sqrt, got '{other}'"))),
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Standard => "std",
        Mode::SquareRoot => "sqrt",
    }
}

pub fn exec_name(exec: Execution) -> &'static str {
    if exec.is_parallel() {
        "par"
    } else {
        "seq"
    }
}

fn positive(key: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("{key} must be positive and finite, got {v}")))
    }
}

fn build_model(values: &Values) -> Result<ModelConfig, CliError> {
    let name = values.raw("model").unwrap_or("ricker");
    let (prefix, allowed) = match name {
        "ricker" => ("ricker.", RICKER_KEYS),
        "ct" => ("ct.", CT_KEYS),
        "lgssm" => ("lgssm.", LGSSM_KEYS),
        other => return Err(config_err(format!("unknown model '{other}' (ricker, ct, lgssm)"))),
    };
    for key in values.map.keys() {
        if let Some((group, field)) = key.split_once('.') {
            if !key.starts_with(prefix) {
                return Err(config_err(format!("key '{key}' does not apply to model '{name}'")));
            }
            if !allowed.contains(&field) {
                return Err(config_err(format!("unknown {group} parameter '{field}'")));
            }
        }
    }
    let p = |field: &str, default: f64| -> Result<f64, CliError> {
        let key = format!("{prefix}{field}");
        positive(&key, values.get(&key, default)?)
    };
    match name {
        "ricker" => {
            let d = Ricker::<f64>::default();
            let m = Ricker {
                a: p("a", d.a)?,
                b: p("b", d.b)?,
                c: p("c", d.c)?,
                q: p("q", d.q)?,
                prior_var: p("prior_var", d.prior_var)?,
            };
            Ok(ModelConfig::Ricker(m))
        }
        "ct" => {
            let d = CoordinatedTurn::<f64>::default();
            let mut m = CoordinatedTurn {
                q1: p("q1", d.q1)?,
                q2: p("q2", d.q2)?,
                dt: p("dt", d.dt)?,
                ..d.clone()
            };
            let r1 = p("r1_std", d.r[(0, 0)].sqrt())?;
            let r2 = p("r2_std", d.r[(1, 1)].sqrt())?;
            if let Some(raw) = values.raw("ct.sensors") {
                m.sensors = parse_sensors(raw)?;
            }
            let ny = m.sensors.len();
            if ny == 0 {
                return Err(config_err("ct.sensors must list at least one sensor"));
            }
            // R is diagonal: first sensor r1_std, the others r2_std.
            m.r = DMatrix::from_diagonal(&DVector::from_fn(ny, |i, _| if i == 0 { r1 * r1 } else { r2 * r2 }));
            if let Some(m0) = values.list::<f64>("ct.m0")? {
                if m0.len() != 5 {
                    return Err(config_err("ct.m0 needs five entries"));
                }
                m.prior_mean = DVector::from_vec(m0);
            }
            if let Some(p0) = values.list::<f64>("ct.p0_std")? {
                let p0 = match p0.len() {
                    1 => vec![p0[0]; 5],
                    5 => p0,
                    _ => return Err(config_err("ct.p0_std needs one or five entries")),
                };
                for &v in &p0 {
                    positive("ct.p0_std", v)?;
                }
                m.prior_chol = DMatrix::from_diagonal(&DVector::from_vec(p0));
            }
            m.validate().map_err(|e| config_err(e.to_string()))?;
            Ok(ModelConfig::Ct(m))
        }
        _ => {
            let d = RandomLgssmSpec::default();
            let spec = RandomLgssmSpec {
                nx: values.get("lgssm.nx", d.nx)?,
                ny: values.get("lgssm.ny", d.ny)?,
                seed: values.get("lgssm.seed", d.seed)?,
                spectral_norm: values.get("lgssm.spectral_norm", d.spectral_norm)?,
                process_scale: p("process_scale", d.process_scale)?,
                observation_scale: p("observation_scale", d.observation_scale)?,
            };
            let model = random_lgssm(&spec).map_err(|e| config_err(e.to_string()))?;
            Ok(ModelConfig::Lgssm {
                spec,
                model,
                estimate_process: values.get("lgssm.estimate_process", false)?,
            })
        }
    }
}

fn parse_sensors(raw: &str) -> Result<Vec<(f64, f64)>, CliError> {
    raw.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (x, y) = pair
                .split_once(',')
                .ok_or_else(|| config_err(format!("sensor '{pair}' is not x,y")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| config_err(format!("sensor '{pair}': {e}")))
            };
            Ok((parse(x)?, parse(y)?))
        })
        .collect()
}

/// Output options that are not part of the reproducible configuration.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub out: Option<PathBuf>,
    pub json: bool,
    pub side_output: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(
        command: CommandKind,
        map: &BTreeMap<String, String>,
        output: OutputOptions,
    ) -> Result<RunConfig, CliError> {
        for key in map.keys() {
            if !key.contains('.') && !GENERAL_KEYS.contains(&key.as_str()) {
                return Err(config_err(format!("unknown configuration key '{key}'")));
            }
        }
        let mut merged: BTreeMap<String, String> = command
            .defaults()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        merged.extend(map.iter().map(|(k, v)| (k.clone(), v.clone())));
        let values = Values { map: &merged };

        let model = build_model(&values)?;
        let n: Vec<usize> = values.list("n")?.unwrap_or_default();
        let modes = values
            .raw("mode")
            .unwrap_or("std")
            .split(',')
            .map(parse_mode)
            .collect::<Result<Vec<_>, _>>()?;
        let threshold: usize = values.get("threshold", ScanOptions::default().sequential_threshold)?;
        if threshold == 0 {
            return Err(config_err("threshold must be positive"));
        }
        let execs = values
            .raw("exec")
            .unwrap_or("par")
            .split(',')
            .map(|s| match s.trim() {
                "seq" => Ok(Execution::Sequential),
                "par" => Ok(Execution::Parallel(ScanOptions {
                    sequential_threshold: threshold,
                })),
                other => Err(config_err(format!("exec must be seq or par, got '{other}'"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !command.is_sweep() && (n.len() != 1 || modes.len() != 1 || execs.len() != 1) {
            return Err(config_err(format!(
                "{} takes a single value for n, mode and exec",
                command.name()
            )));
        }
        if n.is_empty() || modes.is_empty() || execs.is_empty() {
            return Err(config_err("n, mode and exec must not be empty"));
        }
        let method = values
            .raw("linearizer")
            .unwrap_or("taylor")
            .parse::<Method>()
            .map_err(|e| config_err(e.to_string()))?;
        let precision = match values.raw("precision").unwrap_or("64") {
            "32" => Precision::Single,
            "64" => Precision::Double,
            other => return Err(config_err(format!("precision must be 32 or 64, got '{other}'"))),
        };
        if command == CommandKind::Estimate && precision == Precision::Single {
            return Err(config_err("estimate runs in 64-bit precision only"));
        }
        let iters: usize = values.get("iters", 20)?;
        if iters == 0 {
            return Err(config_err("iters must be positive"));
        }
        let tol: f64 = values.get("tol", 0.0)?;
        if !(tol >= 0.0) {
            return Err(config_err("tol must be nonnegative"));
        }
        let threads = match values.parse::<usize>("threads")? {
            Some(0) => return Err(config_err("threads must be positive")),
            Some(t) => t,
            None => std::thread::available_parallelism().map_or(1, |p| p.get()),
        };
        let reps: usize = values.get("reps", 1)?;
        if reps == 0 {
            return Err(config_err("reps must be positive"));
        }
        let gradient = match values.raw("gradient").unwrap_or("fixed-point") {
            "fixed-point" => GradientMethod::FixedPoint,
            "fd" => GradientMethod::FiniteDifference {
                h: positive("fd_step", values.get("fd_step", 1e-6)?)?,
            },
            other => return Err(config_err(format!("gradient must be fixed-point or fd, got '{other}'"))),
        };
        if output.json && output.out.is_none() {
            return Err(config_err("--json needs --out"));
        }
        Ok(RunConfig {
            command,
            model,
            n,
            seed: values.get("seed", 0)?,
            modes,
            execs,
            method,
            iters,
            tol,
            anderson: values.get("anderson", 0)?,
            precision,
            threads,
            threshold,
            reps,
            warmup: values.get("warmup", 0)?,
            data: values.raw("data").map(PathBuf::from),
            gradient,
            theta0: values.list("theta0")?,
            out: output.out,
            json: output.json,
            side_output: output.side_output,
        })
    }

    /// Every setting that influences results, fully resolved.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |items: Vec<String>| items.join(",");
        let mut out = vec![("model".to_string(), self.model.name().to_string())];
        if self.data.is_none() {
            out.push(("n".to_string(), list(self.n.iter().map(usize::to_string).collect())));
            out.push(("seed".to_string(), self.seed.to_string()));
        }
        if self.command == CommandKind::Simulate {
            out.extend(self.model.echo());
            return out;
        }
        out.extend([
            ("mode".to_string(), list(self.modes.iter().map(|&m| mode_name(m).to_string()).collect())),
            ("exec".to_string(), list(self.execs.iter().map(|&e| exec_name(e).to_string()).collect())),
            ("linearizer".to_string(), self.method.to_string()),
            ("iters".to_string(), self.iters.to_string()),
            ("tol".to_string(), self.tol.to_string()),
            ("anderson".to_string(), self.anderson.to_string()),
            ("precision".to_string(), self.precision.to_string()),
            ("threads".to_string(), self.threads.to_string()),
            ("threshold".to_string(), self.threshold.to_string()),
        ]);
        match self.command {
            CommandKind::Bench => {
                out.push(("reps".into(), self.reps.to_string()));
                out.push(("warmup".into(), self.warmup.to_string()));
            }
            CommandKind::Robustness => out.push(("reps".into(), self.reps.to_string())),
            CommandKind::Estimate => {
                let g = match self.gradient {
                    GradientMethod::FixedPoint => "fixed-point".to_string(),
                    GradientMethod::FiniteDifference { h } => format!("fd (fd_step={h})"),
                };
                out.push(("gradient".into(), g));
                if let Some(t) = &self.theta0 {
                    out.push(("theta0".into(), list(t.iter().map(f64::to_string).collect())));
                }
            }
            _ => {}
        }
        if matches!(self.command, CommandKind::Smooth | CommandKind::Estimate) {
            let data = self
                .data
                .as_ref()
                .map_or_else(|| "simulated".to_string(), |p| p.display().to_string());
            out.push(("data".into(), data));
        }
        out.extend(self.model.echo());
        out
    }

    /// Execution of the first (or only) entry.
    pub fn exec(&self) -> Execution {
        self.execs[0]
    }

    pub fn mode(&self) -> Mode {
        self.modes[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn resolve(command: CommandKind, pairs: &[(&str, &str)]) -> Result<RunConfig, CliError> {
        RunConfig::resolve(command, &map(pairs), OutputOptions::default())
    }

    #[test]
    fn defaults_per_command() {
        let c = resolve(CommandKind::Robustness, &[]).unwrap();
        assert_eq!(c.precision, Precision::Single);
        assert_eq!(c.n, vec![100, 1000, 4000]);
        assert_eq!(c.modes, vec![Mode::Standard, Mode::SquareRoot]);
        assert_eq!(c.model.name(), "ct");
        let s = resolve(CommandKind::Smooth, &[]).unwrap();
        assert_eq!(s.n, vec![100]);
        assert_eq!(s.model.name(), "ricker");
    }

    #[test]
    fn rejects_bad_values() {
        for pairs in [
            &[("mode", "cholesky")][..],
            &[("exec", "gpu")],
            &[("precision", "16")],
            &[("linearizer", "gh:0")],
            &[("model", "lorenz")],
            &[("ricker.a", "-1")],
            &[("ct.q1", "1")],
            &[("colour", "red")],
            &[("n", "10,20")],
            &[("iters", "0")],
        ] {
            let err = resolve(CommandKind::Smooth, pairs).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{pairs:?}");
        }
        assert!(resolve(CommandKind::Estimate, &[("precision", "32")]).is_err());
    }

    #[test]
    fn model_parameters() {
        let c = resolve(
            CommandKind::Simulate,
            &[("model", "ct"), ("ct.r1_std", "0.07"), ("ct.sensors", "0,0;1,2;3,4")],
        )
        .unwrap();
        let ModelConfig::Ct(m) = &c.model else { panic!() };
        assert_eq!(m.sensors.len(), 3);
        assert!((m.r[(0, 0)] - 0.0049).abs() < 1e-15);
        assert!((m.r[(2, 2)] - 0.01).abs() < 1e-15);
        let echo = c.echo();
        assert!(echo.contains(&("ct.sensors".to_string(), "0,0;1,2;3,4".to_string())));
    }

    #[test]
    fn pairs_need_equals_sign() {
        assert!(parse_pairs([(3, "seed 4".to_string())]).is_err());
        let m = parse_pairs([(1, " seed = 4 ".to_string())]).unwrap();
        assert_eq!(m["seed"], "4");
    }
}
