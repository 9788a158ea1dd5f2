use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use fracmor::experiment::{self, ExperimentConfig, Method, Prepared, Reduction};
use fracmor::gramians::{empirical_gramians, empirical_observability, exact_gramians};
use fracmor::io::{self, SystemDocument};
use fracmor::reduce::{square_root_truncation, Recipe};
use fracmor::{ControlSignal, FbmSampler, Horizon, MorError, Propagator, Scheme, UniformGrid};

#[derive(Parser)]
#[command(
    name = "fracmor",
    version,
    about = "Balanced truncation and POD for linear systems driven by fractional Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sample path and write the trajectory as CSV.
    Simulate(Common),
    /// Compute reachability (and observability) Gramians as JSON.
    Gramian(Common),
    /// Reduce a system to order r and write the reduced model as JSON.
    Reduce(ReduceArgs),
    /// Table of R_E per method and order.
    Benchmark(Common),
    /// Leading Gramian eigenvalues / Hankel / POD values per method.
    Eigendecay(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; any flag given on the command line overrides it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// heat or wave.
    #[arg(long)]
    benchmark: Option<String>,
    /// System file in the JSON container format.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long)]
    hurst: Option<f64>,
    /// Comma-separated list of methods.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Comma-separated reduced orders.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<usize>>,
    /// Gramian horizon: a positive time or "inf".
    #[arg(long)]
    horizon: Option<String>,
    /// Simulation end time T.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Control preset: sine, zero, step or chirp.
    #[arg(long)]
    control: Option<String>,
    /// Order of the benchmark discretization.
    #[arg(long)]
    order: Option<usize>,
    /// Paper-scale orders (heat 1024, wave 1000).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Midpoint)]
    scheme: SchemeArg,
    /// Also estimate the empirical observability Gramian (costly for large n).
    #[arg(long)]
    observability: bool,
    /// Fill the wall_time_s column of the benchmark table (makes the output
    /// run-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Clone)]
struct ReduceArgs {
    #[command(flatten)]
    common: Common,
    /// Precomputed Gramians (JSON) instead of recomputing them.
    #[arg(long)]
    gramians: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Midpoint,
    Euler,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Midpoint => Scheme::Midpoint,
            SchemeArg::Euler => Scheme::Euler,
        }
    }
}

fn parse_horizon(s: &str) -> anyhow::Result<Horizon> {
    if matches!(s, "inf" | "infinite" | "infinity") {
        return Ok(Horizon::Infinite);
    }
    let t: f64 = s
        .parse()
        .with_context(|| format!("horizon '{s}' is neither a number nor 'inf'"))?;
    Ok(Horizon::Finite(t))
}

/// Config file, then command-line overrides. Returns the config and the
/// output path.
fn resolve(args: &Common) -> anyhow::Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut out = None;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
            if let Some(obj) = value.as_object_mut() {
                if let Some(o) = obj.remove("out") {
                    out = o.as_str().map(PathBuf::from);
                }
                for key in ["paper_scale", "order"] {
                    if obj.contains_key(key) {
                        anyhow::bail!("config key '{key}' is a command-line flag only; set heat.n / wave.n instead");
                    }
                }
            }
            serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(b) = &args.benchmark {
        cfg.benchmark = b.clone();
    }
    if let Some(s) = &args.system {
        cfg.system = Some(s.clone());
    }
    if let Some(h) = args.hurst {
        cfg.hurst = h;
    }
    if let Some(ms) = &args.method {
        cfg.methods = ms.iter().map(|m| Method::parse(m.trim())).collect::<Result<_, _>>()?;
    }
    if let Some(r) = &args.r {
        cfg.r_list = r.clone();
    }
    if let Some(h) = &args.horizon {
        cfg.horizon = Some(parse_horizon(h)?);
    }
    if let Some(t) = args.t_end {
        cfg.t_end = t;
    }
    if let Some(n) = args.steps {
        cfg.steps = n;
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(c) = &args.control {
        cfg.control = c.clone();
    }
    if let Some(n) = args.order {
        cfg.heat.n = n;
        cfg.wave.n = n;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if args.out.is_some() {
        out = args.out.clone();
    }
    Ok((cfg, out))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn comment(cfg: &ExperimentConfig) -> String {
    cfg.header_comment().lines().map(|l| format!("# {l}\n")).collect()
}

fn cmd_simulate(args: &Common) -> anyhow::Result<()> {
    let (cfg, out) = resolve(args)?;
    cfg.validate()?;
    let sys = experiment::load_system(&cfg)?;
    let grid = UniformGrid::new(cfg.t_end, cfg.steps)?;
    let u = ControlSignal::preset(&cfg.control, sys.inputs())?;
    let noise = FbmSampler::new(grid, sys.hurst())?.sample_indexed(sys.drivers(), cfg.seed, 0);
    let traj = Propagator::new(&sys, grid, args.scheme.into())?.trajectory(&sys, &sys.initial_state(), &u, &noise)?;
    let mut buf = comment(&cfg).into_bytes();
    io::write_trajectory_csv(&mut buf, &traj, true)?;
    emit(out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cmd_gramian(args: &Common) -> anyhow::Result<()> {
    let (cfg, out) = resolve(args)?;
    cfg.validate()?;
    let sys = experiment::load_system(&cfg)?;
    let empirical = !sys.hurst().is_brownian() || cfg.methods.contains(&Method::PEmpirical);
    let set = if empirical && sys.drivers() > 0 {
        let spec = cfg.empirical_spec();
        let mut set = empirical_gramians(&sys, &spec)?;
        if args.observability {
            set.q = Some(empirical_observability(&sys, &spec)?);
        }
        set
    } else {
        exact_gramians(&sys, cfg.horizon())?
    };
    set.check()?;
    emit(out.as_deref(), &io::gramians_to_json(&set)?)
}

fn cmd_reduce(args: &ReduceArgs) -> anyhow::Result<()> {
    let (cfg, out) = resolve(&args.common)?;
    cfg.validate()?;
    let sys = experiment::load_system(&cfg)?;
    let method = *cfg.methods.first().expect("validated");
    let r = *cfg.r_list.first().expect("validated");
    if cfg.methods.len() > 1 || cfg.r_list.len() > 1 {
        info!("reduce uses the first method ({}) and order ({r})", method.name());
    }
    let reduction = match &args.gramians {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let g = io::gramians_from_json(&text)?;
            let q =
                g.q.as_ref()
                    .ok_or_else(|| anyhow::anyhow!("{} has no observability Gramian Q", path.display()))?;
            let recipe = match method {
                Method::ProjectionRom => Recipe::Projection,
                _ => fracmor::reduce::default_recipe(&sys),
            };
            Reduction::Single(square_root_truncation(&sys, &g.p, q, r, recipe)?)
        }
        None => Prepared::new(method, &sys, &cfg)?.reduce(&sys, r)?,
    };
    let text = match &reduction {
        Reduction::Single(rom) => io::rom_to_json(rom)?,
        Reduction::Split(split) => {
            let doc = serde_json::json!({
                "control": split.control.as_ref().map(SystemDocument::from_rom),
                "initial": split.initial.as_ref().map(SystemDocument::from_rom),
            });
            serde_json::to_string_pretty(&doc)?
        }
    };
    emit(out.as_deref(), &text)
}

fn cmd_benchmark(args: &Common) -> anyhow::Result<()> {
    let (cfg, out) = resolve(args)?;
    let rows = experiment::run_benchmark(&cfg)?;
    emit(out.as_deref(), &experiment::benchmark_csv(&cfg, &rows, args.timing))
}

fn cmd_eigendecay(args: &Common) -> anyhow::Result<()> {
    let (cfg, out) = resolve(args)?;
    let cols = experiment::run_eigendecay(&cfg)?;
    emit(out.as_deref(), &experiment::eigendecay_csv(&cfg, &cols))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<MorError>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Reduce(a) => &a.common,
        Command::Simulate(c) | Command::Gramian(c) | Command::Benchmark(c) | Command::Eigendecay(c) => c,
    };
    let level = match common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gramian(a) => cmd_gramian(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Eigendecay(a) => cmd_eigendecay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
