//! `evolvebm` command line.
//!
//! Every run resolves one [`ExperimentConfig`], executes a single module
//! operation inside a worker pool of the requested size, writes its artifacts
//! under `--out-dir` and prints a one-line JSON summary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::action::{action_manifold, control_action, minimize_action_with, ActionValue, MinimizerOptions};
use crate::config::{self, ConfigError, Event, ExperimentConfig};
use crate::error::Error;
use crate::framebundle::{antidevelop, develop, horizontal_lift_with, Frame, LiftOptions, Path};
use crate::geometry::{registered_families, MetricFamily};
use crate::io::{self, Table};
use crate::ldp::{containment_profile, exit_statistics, ladder_report, MCEstimate};
use crate::sampler::{generator_check, simulate_batch, BatchConfig, BuiltinTestFunction};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

const DEFAULT_EPS_LIST: [f64; 4] = [0.5, 0.25, 0.1, 0.05];

#[derive(Debug, Parser)]
#[command(name = "evolvebm", version, about = "Brownian motion under time-evolving Riemannian metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Batch of frame-bundle trajectories; per-slice moments.
    Simulate,
    /// Horizontal lift of a path CSV from the canonical frame.
    Lift,
    /// Development of a control CSV.
    Develop,
    /// Anti-development of a path CSV.
    Antidevelop,
    /// Discrete action of a path CSV.
    Action,
    /// Action minimizer between two endpoints.
    Minimize,
    /// Tube ladder along a path, or exit probabilities from a ball.
    VerifyLdp,
    /// Containment function profile on a chart lattice.
    Containment,
    /// Short-time generator check against the Laplace–Beltrami operator.
    GeneratorCheck,
    /// Built-in metric families and their parameters.
    ListFamilies,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lift => "lift",
            Command::Develop => "develop",
            Command::Antidevelop => "antidevelop",
            Command::Action => "action",
            Command::Minimize => "minimize",
            Command::VerifyLdp => "verify-ldp",
            Command::Containment => "containment",
            Command::GeneratorCheck => "generator-check",
            Command::ListFamilies => "list-families",
        }
    }
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    family: Option<String>,
    /// Family parameters, e.g. `a=1,b=0.5`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    params: Option<String>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// Strictly decreasing ε ladder, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    eps_list: Option<Vec<f64>>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    /// Defaults to $EVOLVEBM_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    x1: Option<Vec<f64>>,
    /// Tube radius.
    #[arg(long, global = true, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Exit ball radius.
    #[arg(long, global = true, allow_hyphen_values = true)]
    radius: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    t0: Option<f64>,
    /// Generator-check horizon.
    #[arg(long, global = true, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    substeps: Option<usize>,
    #[arg(long, global = true)]
    slices: Option<usize>,
    /// `frame-bundle` or `scalar-reference`.
    #[arg(long, global = true)]
    simulator: Option<String>,
    /// `tube` or `exit`.
    #[arg(long, global = true)]
    event: Option<String>,
    /// `coordinate:I`, `constant:C` or `squared-norm`.
    #[arg(long, global = true)]
    test_function: Option<String>,
    /// Input path CSV (`t,x1..xd`).
    #[arg(long, global = true)]
    path: Option<PathBuf>,
    /// Input control CSV (`t,w1..wd`).
    #[arg(long, global = true)]
    control: Option<PathBuf>,
    /// Directory receiving the artifacts; nothing is written without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gradient_tolerance: Option<f64>,
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[arg(long, global = true)]
    reorthonormalize_every: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    half_width: Option<f64>,
    #[arg(long, global = true)]
    points: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    smoothing: Option<f64>,
    #[arg(long, global = true)]
    times: Option<usize>,
}

fn parse_params(s: &str, bad: &mut Vec<String>) -> Map<String, Value> {
    let mut m = Map::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.split_once('=').map(|(k, v)| (k.trim(), v.trim().parse::<f64>())) {
            Some((k, Ok(v))) if !k.is_empty() => {
                m.insert(k.to_string(), json!(v));
            }
            _ => bad.push(format!("--params: `{tok}` is not of the form name=number")),
        }
    }
    m
}

fn parse_test_function(s: &str, bad: &mut Vec<String>) -> Option<Value> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    let v = match (kind, arg) {
        ("squared-norm", None) => json!({"kind": "squared-norm"}),
        ("coordinate", Some(a)) => match a.parse::<u64>() {
            Ok(i) => json!({"kind": "coordinate", "index": i}),
            Err(_) => Value::Null,
        },
        ("constant", Some(a)) => match a.parse::<f64>() {
            Ok(c) => json!({"kind": "constant", "value": c}),
            Err(_) => Value::Null,
        },
        _ => Value::Null,
    };
    if v.is_null() {
        bad.push(format!("--test-function: `{s}` is not coordinate:I, constant:C or squared-norm"));
        return None;
    }
    Some(v)
}

impl Flags {
    /// The flags that were given, keyed like the config file.
    fn to_map(&self, bad: &mut Vec<String>) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("threads", self.threads.map(Value::from));
        put("family", self.family.clone().map(Value::from));
        put("params", self.params.as_deref().map(|p| Value::Object(parse_params(p, bad))));
        put("dim", self.dim.map(Value::from));
        put("n_steps", self.n_steps.map(Value::from));
        put("epsilon", self.epsilon.map(|v| json!(v)));
        put("eps_list", self.eps_list.clone().map(|v| json!(v)));
        put("n_samples", self.n_samples.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("x0", self.x0.clone().map(|v| json!(v)));
        put("x1", self.x1.clone().map(|v| json!(v)));
        put("delta", self.delta.map(|v| json!(v)));
        put("radius", self.radius.map(|v| json!(v)));
        put("t0", self.t0.map(|v| json!(v)));
        put("h", self.h.map(|v| json!(v)));
        put("substeps", self.substeps.map(Value::from));
        put("slices", self.slices.map(Value::from));
        put("simulator", self.simulator.clone().map(Value::from));
        put("event", self.event.clone().map(Value::from));
        put("test_function", self.test_function.as_deref().and_then(|s| parse_test_function(s, bad)));
        put("path", self.path.as_ref().map(|p| p.display().to_string().into()));
        put("control", self.control.as_ref().map(|p| p.display().to_string().into()));
        put("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string().into()));
        put("gradient_tolerance", self.gradient_tolerance.map(|v| json!(v)));
        put("max_iterations", self.max_iterations.map(Value::from));
        put("reorthonormalize_every", self.reorthonormalize_every.map(Value::from));
        let mut c = Map::new();
        if let Some(v) = self.half_width {
            c.insert("half_width".into(), json!(v));
        }
        if let Some(v) = self.points {
            c.insert("points".into(), v.into());
        }
        if let Some(v) = self.smoothing {
            c.insert("smoothing".into(), json!(v));
        }
        if let Some(v) = self.times {
            c.insert("times".into(), v.into());
        }
        if !c.is_empty() {
            m.insert("containment".into(), Value::Object(c));
        }
        m
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit
/// code. The summary goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let mut bad = Vec::new();
    let mut flags = cli.flags.to_map(&mut bad);
    flags.insert("subcommand".into(), cli.command.name().into());
    let env_seed = std::env::var(config::SEED_VAR).ok();
    let cfg = match config::resolve(cli.flags.config.as_deref(), flags, env_seed.as_deref()) {
        Ok(c) if bad.is_empty() => c,
        Ok(_) => return report_config(err, ConfigError::Invalid(bad)),
        Err(ConfigError::Invalid(mut v)) => {
            bad.append(&mut v);
            return report_config(err, ConfigError::Invalid(bad));
        }
        Err(e) => return report_config(err, e),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| execute(cli.command, &cfg)) {
        Ok((summary, failure)) => {
            let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes"));
            match failure {
                None => EXIT_OK,
                Some(e) => {
                    let _ = writeln!(err, "error: {e}");
                    exit_code(&e)
                }
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point of the binary.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn report_config(err: &mut dyn Write, e: ConfigError) -> i32 {
    let _ = write!(err, "error: {e}");
    match e {
        ConfigError::Invalid(_) => EXIT_CONFIG,
        ConfigError::Io(_) => EXIT_IO,
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidInput(format!("`{what}` is required for this subcommand"))
}

fn family(cfg: &ExperimentConfig) -> Result<MetricFamily, Error> {
    MetricFamily::from_spec(&cfg.family_spec().ok_or_else(|| missing("family"))?)
}

fn x0(cfg: &ExperimentConfig, fam: &MetricFamily) -> Vec<f64> {
    cfg.x0.clone().unwrap_or_else(|| vec![0.0; fam.dim()])
}

fn read_path(p: &FsPath) -> Result<Path, Error> {
    io::path_from_table(&Table::read(p)?, p)
}

/// Where artifacts go; `None` writes nothing.
struct Artifacts {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: Option<&FsPath>) -> Result<Self, Error> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::Io { path: d.display().to_string(), message: e.to_string() })?;
        }
        Ok(Self { dir: dir.map(FsPath::to_path_buf), written: Vec::new() })
    }

    fn target(&mut self, name: &str) -> Option<PathBuf> {
        let p = self.dir.as_ref()?.join(name);
        self.written.push(p.display().to_string());
        Some(p)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Error> {
        match self.target(name) {
            Some(p) => io::write_json(&p, value),
            None => Ok(()),
        }
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<(), Error> {
        match self.target(name) {
            Some(p) => table.write(&p),
            None => Ok(()),
        }
    }
}

/// `epsilon,p_hat,se,eps_log_p`, with `-inf` on rungs without hits.
pub fn estimate_table(estimates: &[MCEstimate]) -> Table {
    let mut t = Table::new(["epsilon", "p_hat", "se", "eps_log_p"].map(String::from).to_vec());
    t.rows = estimates
        .iter()
        .map(|e| vec![e.epsilon, e.p_hat, e.standard_error, e.log_scaled.unwrap_or(f64::NEG_INFINITY)])
        .collect();
    t
}

#[derive(Serialize)]
struct MinimizerJson<'a> {
    family: &'a str,
    x0: &'a [f64],
    x1: &'a [f64],
    grid: usize,
    action: &'a ActionValue,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

type Outcome = (Value, Option<Error>);

fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let mut art = Artifacts::new(cfg.out_dir.as_deref())?;
    let (mut summary, failure) = match cmd {
        Command::ListFamilies => {
            let fams = registered_families();
            art.json("families.json", &fams)?;
            return Ok((serde_json::to_value(&fams).expect("families serialize"), None));
        }
        Command::Simulate => simulate(cfg, &mut art)?,
        Command::Lift => lift(cfg, &mut art)?,
        Command::Develop => develop_cmd(cfg, &mut art)?,
        Command::Antidevelop => antidevelop_cmd(cfg, &mut art)?,
        Command::Action => action_cmd(cfg, &mut art)?,
        Command::Minimize => minimize(cfg, &mut art)?,
        Command::VerifyLdp => verify_ldp(cfg, &mut art)?,
        Command::Containment => containment(cfg, &mut art)?,
        Command::GeneratorCheck => generator(cfg, &mut art)?,
    };
    if let Value::Object(m) = &mut summary {
        m.insert("command".into(), cmd.name().into());
        if !art.written.is_empty() {
            m.insert("artifacts".into(), json!(art.written));
        }
    }
    Ok((summary, failure))
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let u0 = Frame::canonical(&fam, 0.0, &x0(cfg, &fam))?;
    let batch = BatchConfig {
        epsilon: cfg.epsilon.unwrap_or(1.0),
        n_steps: cfg.n_steps.unwrap_or(1000),
        n_samples: cfg.n_samples.unwrap_or(10_000),
        seed: cfg.seed(),
        simulator: cfg.simulator.unwrap_or_default(),
        slices: cfg.slices.unwrap_or(10),
    };
    let s = simulate_batch(&fam, &u0, &batch)?;
    art.json("simulate.json", &s)?;
    let last = s.slices.last().expect("at least one slice");
    let summary = json!({
        "family": s.family, "n": s.n, "aborted": s.aborted, "epsilon": s.epsilon,
        "n_steps": s.n_steps, "seed": s.seed, "t": last.t, "mean": last.mean,
        "variance": last.variance, "mean_frame_defect": s.mean_frame_defect,
    });
    Ok((summary, None))
}

fn lift(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let path = read_path(cfg.path.as_deref().ok_or_else(|| missing("path"))?)?;
    let u0 = Frame::canonical(&fam, 0.0, path.start())?;
    let opts = LiftOptions { reorthonormalize_every: cfg.reorthonormalize_every };
    let fp = horizontal_lift_with(&fam, &path, &u0, &opts)?;
    art.table("lift_frames.csv", &io::frames_table(&fp.frames))?;
    let defect = fp.max_orthonormality_defect(&fam)?;
    Ok((json!({"family": fam.id(), "grid": fp.n(), "max_defect": defect}), None))
}

fn develop_cmd(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let src = cfg.control.as_deref().ok_or_else(|| missing("control"))?;
    let w = io::control_from_table(&Table::read(src)?, src)?;
    let u0 = Frame::canonical(&fam, 0.0, &x0(cfg, &fam))?;
    let (fp, path) = develop(&fam, &w, &u0)?;
    art.table("develop_path.csv", &io::path_table(&path))?;
    art.table("develop_frames.csv", &io::frames_table(&fp.frames))?;
    Ok((json!({"family": fam.id(), "grid": path.n(), "end": path.end().0}), None))
}

fn antidevelop_cmd(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let path = read_path(cfg.path.as_deref().ok_or_else(|| missing("path"))?)?;
    let u0 = Frame::canonical(&fam, 0.0, path.start())?;
    let w = antidevelop(&fam, &path, &u0)?;
    art.table("antidevelop_control.csv", &io::control_table(&w))?;
    let a = control_action(&w);
    Ok((json!({"family": fam.id(), "grid": w.n(), "end": w.values().last(), "control_action": a.value}), None))
}

fn action_cmd(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let path = read_path(cfg.path.as_deref().ok_or_else(|| missing("path"))?)?;
    let a = action_manifold(&fam, &path)?;
    art.json("action.json", &a)?;
    Ok((serde_json::to_value(&a).expect("action serializes"), None))
}

fn minimizer_options(cfg: &ExperimentConfig) -> MinimizerOptions {
    let d = MinimizerOptions::default();
    MinimizerOptions {
        gradient_tolerance: cfg.gradient_tolerance.unwrap_or(d.gradient_tolerance),
        max_iterations: cfg.max_iterations.unwrap_or(d.max_iterations),
    }
}

fn minimize(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let a = x0(cfg, &fam);
    let b = cfg.x1.clone().ok_or_else(|| missing("x1"))?;
    let init = cfg.path.as_deref().map(read_path).transpose()?;
    let n = init.as_ref().map_or(cfg.n_steps.unwrap_or(200), Path::n);
    let r = minimize_action_with(&fam, &a, &b, n, init.as_ref(), &minimizer_options(cfg))?;
    let report = MinimizerJson {
        family: fam.id(),
        x0: &a,
        x1: &b,
        grid: n,
        action: &r.action,
        iterations: r.iterations,
        gradient_norm: r.gradient_norm,
        converged: r.converged,
    };
    art.json("minimize.json", &report)?;
    art.table("minimize_path.csv", &io::path_table(&r.path))?;
    let summary = serde_json::to_value(&report).expect("report serializes");
    let failure = (!r.converged).then_some(Error::NotConverged { iterations: r.iterations, gradient: r.gradient_norm });
    Ok((summary, failure))
}

fn verify_ldp(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let eps = cfg.eps_list.clone().unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
    let n_samples = cfg.n_samples.unwrap_or(10_000);
    let start = x0(cfg, &fam);
    match cfg.event.unwrap_or_default() {
        Event::Exit => {
            let radius = cfg.radius.unwrap_or(1.0);
            let rep = exit_statistics(&fam, &start, radius, &eps, cfg.n_steps.unwrap_or(1000), n_samples, cfg.seed())?;
            art.json("exit.json", &rep)?;
            art.table("exit.csv", &estimate_table(&rep.estimates))?;
            let ls: Vec<Option<f64>> = rep.estimates.iter().map(|e| e.log_scaled).collect();
            Ok((json!({"family": rep.family, "event": "exit", "radius": radius, "eps_log_p": ls, "decreasing": rep.decreasing}), None))
        }
        Event::Tube => {
            let (path, failure) = match cfg.path.as_deref() {
                Some(p) => (read_path(p)?, None),
                None => {
                    let b = cfg.x1.clone().ok_or_else(|| missing("path or x1"))?;
                    let r = minimize_action_with(&fam, &start, &b, cfg.n_steps.unwrap_or(200), None, &minimizer_options(cfg))?;
                    art.table("tube_path.csv", &io::path_table(&r.path))?;
                    let f = (!r.converged).then_some(Error::NotConverged { iterations: r.iterations, gradient: r.gradient_norm });
                    (r.path, f)
                }
            };
            let delta = cfg.delta.unwrap_or(0.3);
            let rep = ladder_report(&fam, &path, delta, &eps, n_samples, cfg.seed(), cfg.simulator.unwrap_or_default())?;
            art.json("ladder.json", &rep)?;
            art.table("ladder.csv", &estimate_table(&rep.estimates))?;
            let summary = json!({
                "family": rep.family, "event": "tube", "delta": delta, "action": rep.action,
                "intercept": rep.fit.map(|f| f.intercept), "intercept_gap": rep.intercept_gap,
                "monotone": rep.monotone, "below_resolution": rep.below_resolution,
            });
            Ok((summary, failure))
        }
    }
}

fn containment(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let prof = containment_profile(&fam, &x0(cfg, &fam), &cfg.containment.options())?;
    art.json("containment.json", &prof)?;
    let d = fam.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend(["radius", "upsilon", "hamiltonian"].map(String::from));
    let mut t = Table::new(header);
    t.rows = prof
        .lattice
        .iter()
        .map(|v| v.x.iter().copied().chain([v.radius, v.upsilon, v.hamiltonian]).collect())
        .collect();
    art.table("containment.csv", &t)?;
    let summary = json!({
        "family": prof.family, "upsilon_at_x0": prof.upsilon_at_x0,
        "sup_hamiltonian": prof.sup_hamiltonian, "within_bound": prof.within_bound,
        "sublevels_bounded": prof.sublevels.iter().all(|s| s.bounded),
        "sublevels_monotone": prof.sublevels_monotone,
    });
    Ok((summary, None))
}

fn generator(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Outcome, Error> {
    let fam = family(cfg)?;
    let f = cfg.test_function.unwrap_or(BuiltinTestFunction::Coordinate { index: 0 });
    if let BuiltinTestFunction::Coordinate { index } = f {
        if index >= fam.dim() {
            return Err(Error::InvalidInput(format!("coordinate index {index} out of range for dimension {}", fam.dim())));
        }
    }
    let g = generator_check(
        &fam,
        &f,
        &x0(cfg, &fam),
        cfg.t0.unwrap_or(0.0),
        cfg.epsilon.unwrap_or(1.0),
        cfg.h.unwrap_or(1e-3),
        cfg.n_samples.unwrap_or(10_000),
        cfg.seed(),
        cfg.substeps.unwrap_or(10),
    )?;
    art.json("generator_check.json", &g)?;
    let mut summary = serde_json::to_value(g).expect("check serializes");
    summary["family"] = fam.id().into();
    Ok((summary, None))
}
