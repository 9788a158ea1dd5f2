//! The reduction experiment pipeline: build a system, compute the data a
//! method needs, reduce at several orders and measure `R_E`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmarks::{build_heat_system, build_wave_system, HeatConfig, WaveConfig};
use crate::bounds::{bound_corrected, bound_projection, reduction_errors, Approximant, ErrorSpec};
use crate::error::{MorError, Result};
use crate::fbm::{FbmSampler, HurstParam, UniformGrid};
use crate::gramians::{empirical_gramians, exact_gramian_p, exact_gramians, EmpiricalSpec, GramianSet, Horizon};
use crate::integrate::{ControlSignal, Propagator};
use crate::io;
use crate::linalg;
use crate::model::StochasticLinearSystem;
use crate::montecarlo::blocked_sum;
use crate::reduce::{
    build_splitting_rom, default_recipe, p_balance_as, pod_from_correlation, pq_balance, square_root_truncation,
    truncate_corrected, truncate_projection, BalancedRealization, BalancingMethod, PodBasis, Recipe, ReducedOrderModel,
    SplittingData, SplittingRom,
};

/// Offset between the training seed (Gramians, snapshots) and the seed of
/// the evaluation paths used for `R_E`.
pub const EVALUATION_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Number of values reported by the eigenvalue-decay table.
pub const DECAY_VALUES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact `P_T`, eigen-balancing, corrected truncation (H = 1/2).
    PBalance,
    /// Exact `P_T`, `Q_T`, square-root balancing, corrected truncation.
    PqBalance,
    /// Empirical `P̄_T`, eigen-balancing.
    PEmpirical,
    /// Separate reductions of the control and initial-state subsystems.
    GramianSplitting,
    /// POD of control and initial-state snapshots.
    PodSplitting,
    /// Exact `P_T`, `Q_T` with plain projection.
    ProjectionRom,
    /// Exact `P_T`, `Q_T` with the Itô-corrected drift.
    CorrectedRom,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::PBalance,
        Method::PqBalance,
        Method::PEmpirical,
        Method::GramianSplitting,
        Method::PodSplitting,
        Method::ProjectionRom,
        Method::CorrectedRom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PBalance => "p_balance",
            Method::PqBalance => "pq_balance",
            Method::PEmpirical => "p_empirical",
            Method::GramianSplitting => "gramian_splitting",
            Method::PodSplitting => "pod_splitting",
            Method::ProjectionRom => "projection_rom",
            Method::CorrectedRom => "corrected_rom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == name).ok_or_else(|| {
            let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            MorError::InvalidArgument(format!("unknown method '{name}' (known: {})", known.join(", ")))
        })
    }

    /// Needs exact Gramians, which exist only for H = 1/2.
    pub fn requires_exact(self) -> bool {
        matches!(
            self,
            Method::PBalance | Method::PqBalance | Method::ProjectionRom | Method::CorrectedRom
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `heat` or `wave`; ignored when `system` is set.
    pub benchmark: String,
    /// JSON system file replacing the benchmark.
    pub system: Option<PathBuf>,
    pub hurst: f64,
    pub methods: Vec<Method>,
    pub r_list: Vec<usize>,
    pub t_end: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub control: String,
    /// Gramian horizon for exact methods; `None` means `[0, t_end]`.
    pub horizon: Option<Horizon>,
    pub threads: Option<usize>,
    pub heat: HeatConfig,
    pub wave: WaveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: "heat".into(),
            system: None,
            hurst: 0.5,
            methods: vec![Method::PodSplitting, Method::PqBalance, Method::GramianSplitting],
            r_list: vec![2, 4, 8, 16],
            t_end: 1.0,
            steps: 100,
            samples: 1000,
            seed: 1,
            control: "sine".into(),
            horizon: None,
            threads: None,
            heat: HeatConfig::default(),
            wave: WaveConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn hurst_param(&self) -> Result<HurstParam> {
        HurstParam::new(self.hurst)
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon.unwrap_or(Horizon::Finite(self.t_end))
    }

    /// Paper-scale orders: heat `n = 1024`, wave `n = 1000`.
    pub fn paper_scale(mut self) -> Self {
        self.heat.n = 1024;
        self.wave.n = 1000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let hurst = self.hurst_param()?;
        if self.steps == 0 || self.samples == 0 {
            return Err(MorError::InvalidArgument("steps and samples must be positive".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(MorError::InvalidArgument(format!(
                "horizon T = {} must be positive",
                self.t_end
            )));
        }
        if self.r_list.is_empty() || self.r_list.contains(&0) {
            return Err(MorError::InvalidArgument("r list must contain positive orders".into()));
        }
        if self.r_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MorError::InvalidArgument(
                "r list must be sorted ascending without repeats".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(MorError::InvalidArgument("no reduction method selected".into()));
        }
        if let Some(Horizon::Finite(t)) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(MorError::InvalidArgument(format!(
                    "Gramian horizon {t} must be positive"
                )));
            }
        }
        if !hurst.is_brownian() {
            if let Some(m) = self.methods.iter().find(|m| m.requires_exact()) {
                return Err(MorError::InvalidArgument(format!(
                    "method {} needs exact Gramians, which are only available for H = 1/2 \
                     (for H > 1/2 a link to Lyapunov equations is not known); \
                     use p_empirical, gramian_splitting or pod_splitting",
                    m.name()
                )));
            }
        }
        if self.system.is_none() && !matches!(self.benchmark.as_str(), "heat" | "wave") {
            return Err(MorError::InvalidArgument(format!(
                "unknown benchmark '{}' (expected heat or wave, or pass a system file)",
                self.benchmark
            )));
        }
        ControlSignal::preset(&self.control, 1)?;
        Ok(())
    }

    pub fn evaluation_seed(&self) -> u64 {
        self.seed.wrapping_add(EVALUATION_SEED_OFFSET)
    }

    pub fn empirical_spec(&self) -> EmpiricalSpec {
        EmpiricalSpec::new(self.t_end, self.steps, self.samples, self.seed)
    }

    pub fn error_spec(&self) -> ErrorSpec {
        ErrorSpec::new(self.t_end, self.steps, self.samples, self.evaluation_seed())
    }

    /// The configuration as `# ` comment lines for CSV headers.
    pub fn header_comment(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("fracmor config: {json}")
    }
}

/// The system an experiment runs on.
pub fn load_system(cfg: &ExperimentConfig) -> Result<StochasticLinearSystem> {
    let hurst = cfg.hurst_param()?;
    if let Some(path) = &cfg.system {
        let sys = io::read_system(path)?;
        if sys.hurst() != hurst {
            info!(
                "system file sets H = {}, overriding with {}",
                sys.hurst().value(),
                hurst.value()
            );
        }
        return StochasticLinearSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            sys.noise().to_vec(),
            sys.x0().clone(),
            sys.z().clone(),
            hurst,
            if sys.hurst() == hurst {
                sys.interpretation()
            } else {
                crate::model::Interpretation::for_hurst(hurst)
            },
        );
    }
    match cfg.benchmark.as_str() {
        "heat" => build_heat_system(&cfg.heat, hurst),
        "wave" => build_wave_system(&cfg.wave, hurst),
        other => Err(MorError::InvalidArgument(format!("unknown benchmark '{other}'"))),
    }
}

/// POD of the state snapshots `x(t_k, ω_j)`, `k = 0..=N`, from the
/// correlation matrix `Σ x xᵀ`.
pub fn snapshot_pod(
    sys: &StochasticLinearSystem,
    control: Option<&ControlSignal>,
    spec: &EmpiricalSpec,
) -> Result<PodBasis> {
    let n = sys.order();
    let grid = UniformGrid::new(spec.t_end, spec.steps)?;
    let prop = Propagator::new(sys, grid, spec.scheme)?;
    let sampler = FbmSampler::new(grid, sys.hurst())?;
    let init = DMatrix::from_column_slice(n, 1, sys.initial_state().as_slice());
    let q = sys.drivers();
    let corr = blocked_sum(
        spec.samples,
        || DMatrix::<f64>::zeros(n, n),
        |j, acc| {
            let noise = sampler.sample_indexed(q, spec.seed, j as u64);
            let mut snaps = DMatrix::zeros(n, spec.steps + 1);
            prop.run(&init, control, &noise, |k, x| snaps.set_column(k, &x.column(0)))?;
            acc.gemm(1.0, &snaps, &snaps.transpose(), 1.0);
            Ok(())
        },
        |a, b| *a += b,
    )?;
    pod_from_correlation(&linalg::symmetrize(&corr))
}

/// A reduced model of either kind.
#[derive(Clone, Debug)]
pub enum Reduction {
    Single(ReducedOrderModel),
    Split(SplittingRom),
}

impl Reduction {
    pub fn approximant(&self) -> Approximant<'_> {
        match self {
            Reduction::Single(rom) => Approximant::Rom(rom),
            Reduction::Split(s) => Approximant::Splitting(s),
        }
    }

    /// Order of the single model, or the sum over subsystems.
    pub fn order(&self) -> usize {
        match self {
            Reduction::Single(rom) => rom.r,
            Reduction::Split(s) => s.control.iter().chain(s.initial.iter()).map(|r| r.r).sum(),
        }
    }
}

/// Method-specific data computed once and reused for every `r`.
pub enum Prepared {
    Balanced {
        bal: BalancedRealization,
        recipe: Recipe,
    },
    SquareRoot {
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        recipe: Recipe,
        sigma: DVector<f64>,
        /// Balanced realization when both Gramians are definite (for bounds).
        bal: Option<BalancedRealization>,
    },
    SplitGramians(GramianSet),
    SplitPod {
        control: PodBasis,
        initial: PodBasis,
    },
}

fn hankel_values(sys: &StochasticLinearSystem, p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let rom = square_root_truncation(sys, p, q, 1, Recipe::Projection)?;
    Ok(rom.sigma.expect("square-root truncation reports sigma"))
}

fn subsystem_rank(values: &DVector<f64>) -> usize {
    let top = values.iter().cloned().fold(0.0, f64::max);
    values.iter().filter(|&&v| v > crate::reduce::RANK_TOL * top).count()
}

impl Prepared {
    pub fn new(method: Method, sys: &StochasticLinearSystem, cfg: &ExperimentConfig) -> Result<Self> {
        let horizon = cfg.horizon();
        let recipe_for = |m: Method| match m {
            Method::ProjectionRom => Recipe::Projection,
            Method::CorrectedRom => Recipe::ItoCorrected,
            _ => default_recipe(sys),
        };
        match method {
            Method::PBalance => {
                let g = exact_gramian_p(sys, horizon)?;
                Ok(Prepared::Balanced {
                    bal: p_balance_as(sys, &g.p, BalancingMethod::PBalance)?,
                    recipe: default_recipe(sys),
                })
            }
            Method::PEmpirical => {
                let g = empirical_gramians(sys, &cfg.empirical_spec())?;
                Ok(Prepared::Balanced {
                    bal: p_balance_as(sys, &g.p, BalancingMethod::PEmpirical)?,
                    recipe: default_recipe(sys),
                })
            }
            Method::PqBalance | Method::ProjectionRom | Method::CorrectedRom => {
                let g = exact_gramians(sys, horizon)?;
                let q = g.q.expect("exact observability Gramian");
                let sigma = hankel_values(sys, &g.p, &q)?;
                let bal = pq_balance(sys, &g.p, &q).ok();
                Ok(Prepared::SquareRoot {
                    p: g.p,
                    q,
                    recipe: recipe_for(method),
                    sigma,
                    bal,
                })
            }
            Method::GramianSplitting => {
                let g = if cfg.hurst_param()?.is_brownian() {
                    exact_gramians(sys, horizon)?
                } else {
                    empirical_gramians(sys, &cfg.empirical_spec())?
                };
                Ok(Prepared::SplitGramians(g))
            }
            Method::PodSplitting => {
                let spec = cfg.empirical_spec();
                let u = ControlSignal::preset(&cfg.control, sys.inputs())?;
                Ok(Prepared::SplitPod {
                    control: snapshot_pod(&sys.input_subsystem(), Some(&u), &spec)?,
                    initial: snapshot_pod(&sys.initial_subsystem(), None, &spec)?,
                })
            }
        }
    }

    /// Reduced model of order `r` (per subsystem for splitting methods),
    /// clamped to the numerical rank with a warning.
    pub fn reduce(&self, sys: &StochasticLinearSystem, r: usize) -> Result<Reduction> {
        let clamp = |r: usize, rank: usize, what: &str| {
            if r > rank {
                warn!("order {r} exceeds the numerical rank {rank} of the {what}; using {rank}");
            }
            r.min(rank)
        };
        match self {
            Prepared::Balanced { bal, recipe } => {
                let r = clamp(r, bal.rank, "Gramian");
                let rom = if *recipe == Recipe::ItoCorrected {
                    truncate_corrected(bal, r)?
                } else {
                    truncate_projection(bal, r)?
                };
                Ok(Reduction::Single(rom))
            }
            Prepared::SquareRoot {
                p, q, recipe, sigma, ..
            } => {
                let r = clamp(r, subsystem_rank(sigma), "Gramian product");
                Ok(Reduction::Single(square_root_truncation(sys, p, q, r, *recipe)?))
            }
            Prepared::SplitGramians(g) => {
                let (ru, rx) = match &g.q {
                    Some(q) => (
                        rank_or_zero(&sys.input_subsystem(), &g.p_u, Some(q))?,
                        rank_or_zero(&sys.initial_subsystem(), &g.p_x0, Some(q))?,
                    ),
                    None => (
                        subsystem_rank(&linalg::sym_eigen_desc(&g.p_u).0),
                        subsystem_rank(&linalg::sym_eigen_desc(&g.p_x0).0),
                    ),
                };
                let split = build_splitting_rom(
                    sys,
                    SplittingData::Gramians(g),
                    clamp(r, ru.max(1), "control Gramian"),
                    clamp(r, rx.max(1), "initial-state Gramian"),
                )?;
                Ok(Reduction::Split(split))
            }
            Prepared::SplitPod { control, initial } => {
                let split = build_splitting_rom(
                    sys,
                    SplittingData::Pod { control, initial },
                    clamp(r, control.rank().max(1), "control snapshots"),
                    clamp(r, initial.rank().max(1), "initial-state snapshots"),
                )?;
                Ok(Reduction::Split(split))
            }
        }
    }

    /// The values whose decay governs the truncation error, nonincreasing.
    pub fn spectrum(&self, sys: &StochasticLinearSystem) -> Result<Vec<f64>> {
        let mut values: Vec<f64> = match self {
            Prepared::Balanced { bal, .. } => bal.sigma.iter().cloned().collect(),
            Prepared::SquareRoot { sigma, .. } => sigma.iter().cloned().collect(),
            Prepared::SplitGramians(g) => {
                let (a, b) = match &g.q {
                    Some(q) => (
                        subsystem_values(&sys.input_subsystem(), &g.p_u, Some(q))?,
                        subsystem_values(&sys.initial_subsystem(), &g.p_x0, Some(q))?,
                    ),
                    None => (
                        linalg::sym_eigen_desc(&g.p_u).0.iter().cloned().collect(),
                        linalg::sym_eigen_desc(&g.p_x0).0.iter().cloned().collect(),
                    ),
                };
                sum_padded(&a, &b)
            }
            Prepared::SplitPod { control, initial } => {
                sum_padded(control.singular_values.as_slice(), initial.singular_values.as_slice())
            }
        };
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(values)
    }

    /// Balanced realization usable for the error bounds, if any.
    pub fn balanced(&self) -> Option<&BalancedRealization> {
        match self {
            Prepared::SquareRoot { bal, .. } => bal.as_ref(),
            _ => None,
        }
    }
}

fn subsystem_values(sub: &StochasticLinearSystem, p: &DMatrix<f64>, q: Option<&DMatrix<f64>>) -> Result<Vec<f64>> {
    if p.amax() == 0.0 {
        return Ok(vec![0.0; p.nrows()]);
    }
    Ok(match q {
        Some(q) => hankel_values(sub, p, q)?.iter().cloned().collect(),
        None => linalg::sym_eigen_desc(p).0.iter().cloned().collect(),
    })
}

fn rank_or_zero(sub: &StochasticLinearSystem, p: &DMatrix<f64>, q: Option<&DMatrix<f64>>) -> Result<usize> {
    let values = subsystem_values(sub, p, q)?;
    Ok(subsystem_rank(&DVector::from_vec(values)))
}

fn sum_padded(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));
    (0..a.len().max(b.len()))
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

/// One line of the benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub r: usize,
    /// Order actually used (summed over subsystems for splitting methods).
    pub r_used: usize,
    pub r_e: f64,
    pub r_e_std_error: f64,
    /// Error bound coefficient, when the method admits one.
    pub bound: Option<f64>,
    /// Seconds spent on the method's data plus this reduction.
    pub wall_time: f64,
}

pub const BENCHMARK_HEADER: &str = "method,r,r_used,R_E,R_E_stderr,bound,wall_time_s";

impl BenchmarkRow {
    /// With `timing == false` the wall-time field is left empty so that
    /// equal seeds give byte-identical tables.
    pub fn csv_row(&self, timing: bool) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method.name(),
            self.r,
            self.r_used,
            io::fmt_float(self.r_e),
            io::fmt_float(self.r_e_std_error),
            self.bound.map(io::fmt_float).unwrap_or_default(),
            if timing {
                format!("{:.3}", self.wall_time)
            } else {
                String::new()
            }
        )
    }
}

fn bound_for(prep: &Prepared, method: Method, sys: &StochasticLinearSystem, horizon: Horizon, r: usize) -> Option<f64> {
    // the bounds hold for balanced infinite-horizon Gramians and x0 = 0
    if horizon != Horizon::Infinite || sys.x0().amax() > 0.0 {
        return None;
    }
    let bal = prep.balanced()?;
    if r > bal.rank {
        return None;
    }
    let report = match method {
        Method::ProjectionRom => bound_projection(&bal.sys_bal, &bal.sigma, r),
        Method::PqBalance | Method::CorrectedRom => bound_corrected(&bal.sys_bal, &bal.sigma, r),
        _ => return None,
    };
    report
        .map(|b| b.bound_value)
        .map_err(|e| warn!("bound unavailable at r = {r}: {e}"))
        .ok()
}

/// Runs every configured method at every order.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let sys = load_system(cfg)?;
    let u = ControlSignal::preset(&cfg.control, sys.inputs())?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        let prep = Prepared::new(method, &sys, cfg)?;
        let setup = start.elapsed().as_secs_f64();
        let mut reductions = Vec::new();
        let mut times = Vec::new();
        for &r in &cfg.r_list {
            let t0 = Instant::now();
            reductions.push(prep.reduce(&sys, r)?);
            times.push(t0.elapsed().as_secs_f64());
        }
        let approxs: Vec<Approximant<'_>> = reductions.iter().map(|r| r.approximant()).collect();
        let t0 = Instant::now();
        let errors = reduction_errors(&sys, &approxs, &u, &cfg.error_spec())?;
        let eval = t0.elapsed().as_secs_f64() / cfg.r_list.len() as f64;
        for (i, &r) in cfg.r_list.iter().enumerate() {
            let wall_time = setup + times[i] + eval;
            info!(
                "{} r = {r}: R_E = {:.4e} ({wall_time:.3} s)",
                method.name(),
                errors[i].r_e
            );
            rows.push(BenchmarkRow {
                method,
                r,
                r_used: reductions[i].order(),
                r_e: errors[i].r_e,
                r_e_std_error: errors[i].sup_error_std_error / errors[i].sup_output.max(f64::MIN_POSITIVE),
                bound: bound_for(&prep, method, &sys, cfg.horizon(), r),
                wall_time,
            });
        }
    }
    Ok(rows)
}

pub fn benchmark_csv(cfg: &ExperimentConfig, rows: &[BenchmarkRow], timing: bool) -> String {
    let mut out = String::new();
    for line in cfg.header_comment().lines() {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "{BENCHMARK_HEADER}").unwrap();
    for row in rows {
        writeln!(out, "{}", row.csv_row(timing)).unwrap();
    }
    out
}

/// First [`DECAY_VALUES`] values per method, one column each.
pub fn run_eigendecay(cfg: &ExperimentConfig) -> Result<Vec<(Method, Vec<f64>)>> {
    cfg.validate()?;
    let sys = load_system(cfg)?;
    cfg.methods
        .iter()
        .map(|&m| {
            let prep = Prepared::new(m, &sys, cfg)?;
            let mut values = prep.spectrum(&sys)?;
            values.resize(DECAY_VALUES.min(sys.order()), 0.0);
            values.truncate(DECAY_VALUES);
            Ok((m, values))
        })
        .collect()
}

pub fn eigendecay_csv(cfg: &ExperimentConfig, columns: &[(Method, Vec<f64>)]) -> String {
    let mut out = String::new();
    for line in cfg.header_comment().lines() {
        writeln!(out, "# {line}").unwrap();
    }
    let names: Vec<&str> = columns.iter().map(|(m, _)| m.name()).collect();
    writeln!(out, "index,{}", names.join(",")).unwrap();
    let len = columns.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for i in 0..len {
        let vals: Vec<String> = columns
            .iter()
            .map(|(_, v)| v.get(i).map(|&x| io::fmt_float(x)).unwrap_or_default())
            .collect();
        writeln!(out, "{},{}", i + 1, vals.join(",")).unwrap();
    }
    out
}
