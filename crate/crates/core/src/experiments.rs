//! Multi-start campaigns over a time-step sweep, clustering of the converged
//! solutions, iLQR/SQP cross-checks and per-iteration scaling measurements.

use std::time::Duration;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::ShootingOptions;
use crate::cost::{CostWeights, QuadraticCost};
use crate::dynamics::{rollout, CartpoleModel, ControlAffineSystem, PendulumModel, Trajectory};
use crate::error::{Error, Result};
use crate::ilqr::{self, ILQRSettings};
use crate::solver::{SolverResult, Termination};
use crate::sqp::{self, SQPSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Pendulum,
    Cartpole,
    ScalarCustom,
}

impl SystemKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pendulum" => Some(Self::Pendulum),
            "cartpole" => Some(Self::Cartpole),
            "scalar-custom" => Some(Self::ScalarCustom),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pendulum => "pendulum",
            Self::Cartpole => "cartpole",
            Self::ScalarCustom => "scalar-custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ilqr,
    Sqp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ilqr => "ilqr",
            Self::Sqp => "sqp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Ilqr,
    Sqp,
    Both,
}

impl SolverChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ilqr" => Some(Self::Ilqr),
            "sqp" => Some(Self::Sqp),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ilqr => "ilqr",
            Self::Sqp => "sqp",
            Self::Both => "both",
        }
    }

    pub fn solvers(self) -> Vec<SolverKind> {
        match self {
            Self::Ilqr => vec![SolverKind::Ilqr],
            Self::Sqp => vec![SolverKind::Sqp],
            Self::Both => vec![SolverKind::Ilqr, SolverKind::Sqp],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterTolerances {
    pub cost_rel_tol: f64,
    pub traj_tol: f64,
}

impl Default for ClusterTolerances {
    fn default() -> Self {
        Self {
            cost_rel_tol: 1e-3,
            traj_tol: 1e-2,
        }
    }
}

/// Settings for the scalar characteristics study (`ẋ = sin x + u`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicsConfig {
    pub state_weight: f64,
    pub control_weight: f64,
    pub terminal_weight: f64,
    pub x0: f64,
    pub t_f: f64,
    pub dt_int: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub shooting: ShootingOptions,
}

impl Default for CharacteristicsConfig {
    fn default() -> Self {
        Self {
            state_weight: 1.0,
            control_weight: 5.0,
            terminal_weight: 0.0,
            x0: 2.0,
            t_f: 2.0,
            dt_int: 1e-3,
            grid_lo: -2.0 * std::f64::consts::PI,
            grid_hi: 2.0 * std::f64::consts::PI,
            grid_points: 101,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub solver: SolverChoice,
    pub dt_list: Vec<f64>,
    pub t_f: f64,
    /// Initial state; `None` selects the hanging configuration of `system`.
    pub x0: Option<Vec<f64>>,
    pub n_starts: usize,
    pub seed: u64,
    pub init_std: f64,
    pub workers: usize,
    /// Diagonal weights; `None` selects `Q = 100·I`, `R = 10`, `S_f = 1000·I`.
    pub weights: Option<CostWeights>,
    pub pendulum: PendulumModel,
    pub cartpole: CartpoleModel,
    pub ilqr: ILQRSettings,
    pub sqp: SQPSettings,
    pub cluster: ClusterTolerances,
    pub characteristics: CharacteristicsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemKind::Cartpole,
            solver: SolverChoice::Both,
            dt_list: vec![0.2, 0.1, 0.05, 0.01],
            t_f: 3.0,
            x0: None,
            n_starts: 32,
            seed: 0,
            init_std: 1.0,
            workers: 1,
            weights: None,
            pendulum: PendulumModel::default(),
            cartpole: CartpoleModel::default(),
            ilqr: ILQRSettings::default(),
            sqp: SQPSettings::default(),
            cluster: ClusterTolerances::default(),
            characteristics: CharacteristicsConfig::default(),
        }
    }
}

/// One transcribed problem instance.
pub struct Problem {
    pub system: Box<dyn ControlAffineSystem>,
    pub cost: QuadraticCost,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub horizon: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidInput("n_starts must be at least 1".into()));
        }
        if self.dt_list.is_empty() {
            return Err(Error::InvalidInput("dt list is empty".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::InvalidInput("init_std must be non-negative".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput("workers must be at least 1".into()));
        }
        for &dt in &self.dt_list {
            self.horizon(dt)?;
        }
        self.ilqr.validate()?;
        self.sqp.validate()?;
        Ok(())
    }

    /// `N = t_f / Δt`, which must be a positive integer.
    pub fn horizon(&self, dt: f64) -> Result<usize> {
        if !(dt > 0.0 && self.t_f > 0.0) {
            return Err(Error::InvalidInput("dt and t_f must be positive".into()));
        }
        let ratio = self.t_f / dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "t_f = {} is not an integer multiple of dt = {dt}",
                self.t_f
            )));
        }
        Ok(n as usize)
    }

    pub fn system_model(&self) -> Result<Box<dyn ControlAffineSystem>> {
        match self.system {
            SystemKind::Pendulum => Ok(Box::new(self.pendulum)),
            SystemKind::Cartpole => Ok(Box::new(self.cartpole)),
            SystemKind::ScalarCustom => Err(Error::InvalidInput(
                "scalar-custom is only available to the characteristics study".into(),
            )),
        }
    }

    pub fn problem(&self, dt: f64) -> Result<Problem> {
        let system = self.system_model()?;
        let (n, m) = (system.state_dim(), system.control_dim());
        let x0 = match &self.x0 {
            Some(v) => {
                crate::error::check_dim("x0", n, v.len())?;
                DVector::from_column_slice(v)
            }
            None => hanging_state(self.system),
        };
        let cost = match &self.weights {
            Some(w) => w.build()?,
            None => QuadraticCost::swing_up_default(n, m),
        };
        Ok(Problem {
            system,
            cost,
            x0,
            dt,
            horizon: self.horizon(dt)?,
        })
    }
}

fn hanging_state(system: SystemKind) -> DVector<f64> {
    use std::f64::consts::PI;
    match system {
        SystemKind::Pendulum => DVector::from_vec(vec![PI, 0.0]),
        _ => DVector::from_vec(vec![0.0, 0.0, PI, 0.0]),
    }
}

/// Seed of start `index` within a campaign seeded by `seed` (SplitMix64 mix).
pub fn start_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random initial guess: controls first, then states (`x_init[0] = x0`).
pub fn random_guess(
    problem: &Problem,
    std: f64,
    seed: u64,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let (n, m) = (problem.system.state_dim(), problem.system.control_dim());
    let controls: Vec<_> = (0..problem.horizon)
        .map(|_| DVector::from_fn(m, |_, _| normal.sample(&mut rng)))
        .collect();
    let mut states: Vec<_> = (0..=problem.horizon)
        .map(|_| DVector::from_fn(n, |_, _| normal.sample(&mut rng)))
        .collect();
    states[0] = problem.x0.clone();
    (states, controls)
}

/// Runs one solver on `problem` from the random guess for `seed`.
pub fn solve_from_seed(
    config: &ExperimentConfig,
    problem: &Problem,
    solver: SolverKind,
    seed: u64,
) -> Result<SolverResult> {
    let (states, controls) = random_guess(problem, config.init_std, seed);
    match solver {
        SolverKind::Ilqr => ilqr::solve(
            problem.system.as_ref(),
            &problem.cost,
            &problem.x0,
            &controls,
            problem.dt,
            &config.ilqr,
        ),
        SolverKind::Sqp => sqp::solve(
            problem.system.as_ref(),
            &problem.cost,
            &problem.x0,
            &states,
            &controls,
            problem.dt,
            &config.sqp,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub start: usize,
    pub seed: u64,
    pub result: SolverResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Cost of the representative (lowest-cost member).
    pub cost: f64,
    pub mean_cost: f64,
    pub members: usize,
    pub member_starts: Vec<usize>,
    pub member_seeds: Vec<u64>,
    pub member_residuals: Vec<f64>,
    pub representative_start: usize,
    pub representative_residual: f64,
    pub representative: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub start: usize,
    pub seed: u64,
    pub termination: Termination,
    pub cost: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionClusterSet {
    pub system: SystemKind,
    pub solver: SolverKind,
    pub dt: f64,
    pub horizon: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub clusters: Vec<Cluster>,
    pub failures: Vec<FailedRun>,
}

impl SolutionClusterSet {
    pub fn best_cost(&self) -> Option<f64> {
        self.clusters.first().map(|c| c.cost)
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn same_solution(a: &SolverResult, b: &SolverResult, tol: &ClusterTolerances) -> bool {
    let cost_gap = (a.cost - b.cost).abs();
    if cost_gap > tol.cost_rel_tol * (1.0 + a.cost.min(b.cost)) {
        return false;
    }
    let ua = &a.trajectory.controls;
    let ub = &b.trajectory.controls;
    if ua.len() != ub.len() {
        return false;
    }
    let dist = rms(ua.iter().zip(ub).flat_map(|(x, y)| (x - y).iter().copied().collect::<Vec<_>>()));
    let mag = rms(ua.iter().flat_map(|x| x.iter().copied())).max(rms(ub.iter().flat_map(|x| x.iter().copied())));
    dist <= tol.traj_tol * (1.0 + mag)
}

/// Greedy clustering in order of increasing cost: a run joins the first
/// cluster whose representative matches it in cost and in RMS control
/// distance, otherwise it opens a new cluster.
pub fn cluster_solutions(results: &[RunRecord], tol: &ClusterTolerances) -> Vec<Cluster> {
    let mut order: Vec<&RunRecord> = results.iter().collect();
    order.sort_by(|a, b| a.result.cost.total_cmp(&b.result.cost).then(a.start.cmp(&b.start)));

    let mut groups: Vec<Vec<&RunRecord>> = Vec::new();
    for run in order {
        match groups.iter_mut().find(|g| same_solution(&g[0].result, &run.result, tol)) {
            Some(g) => g.push(run),
            None => groups.push(vec![run]),
        }
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(id, g)| {
            let rep = g[0];
            Cluster {
                id,
                cost: rep.result.cost,
                mean_cost: g.iter().map(|r| r.result.cost).sum::<f64>() / g.len() as f64,
                members: g.len(),
                member_starts: g.iter().map(|r| r.start).collect(),
                member_seeds: g.iter().map(|r| r.seed).collect(),
                member_residuals: g.iter().map(|r| r.result.stationarity_residual).collect(),
                representative_start: rep.start,
                representative_residual: rep.result.stationarity_residual,
                representative: rep.result.trajectory.clone(),
            }
        })
        .collect()
}

/// Worker pool honoring `config.workers`.
fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))
}

/// All runs of one campaign, ordered by start index.
pub fn run_starts(
    config: &ExperimentConfig,
    dt: f64,
    solver: SolverKind,
    progress: &(dyn Fn(&RunRecord) + Sync),
) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let problem = config.problem(dt)?;
    let run = |start: usize| -> Result<RunRecord> {
        let seed = start_seed(config.seed, start);
        let result = solve_from_seed(config, &problem, solver, seed)?;
        let record = RunRecord { start, seed, result };
        progress(&record);
        Ok(record)
    };
    pool(config.workers)?.install(|| (0..config.n_starts).into_par_iter().map(run).collect())
}

/// Clusters the converged runs; the others are listed as failures.
pub fn summarize_runs(
    config: &ExperimentConfig,
    dt: f64,
    solver: SolverKind,
    runs: &[RunRecord],
) -> Result<SolutionClusterSet> {
    let (converged, failed): (Vec<RunRecord>, Vec<RunRecord>) =
        runs.iter().cloned().partition(|r| r.result.converged());
    Ok(SolutionClusterSet {
        system: config.system,
        solver,
        dt,
        horizon: config.horizon(dt)?,
        n_starts: config.n_starts,
        seed: config.seed,
        clusters: cluster_solutions(&converged, &config.cluster),
        failures: failed
            .into_iter()
            .map(|r| FailedRun {
                start: r.start,
                seed: r.seed,
                termination: r.result.termination,
                cost: r.result.cost,
                residual: r.result.stationarity_residual,
                iterations: r.result.iterations,
            })
            .collect(),
    })
}

/// `n_starts` solves from Gaussian guesses, clustered.
pub fn run_multistart(config: &ExperimentConfig, dt: f64, solver: SolverKind) -> Result<SolutionClusterSet> {
    let runs = run_starts(config, dt, solver, &|_| {})?;
    summarize_runs(config, dt, solver, &runs)
}

/// iLQR started from the controls of an SQP cluster representative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapCheck {
    pub sqp_cluster: usize,
    pub sqp_cost: f64,
    pub ilqr_cost: f64,
    pub relative_change: f64,
    pub residual: f64,
    pub termination: Termination,
    pub iterations: usize,
    /// Cost moved by at most `1e-4` relative and the residual is at most `1e-4`.
    pub stationary: bool,
}

pub const TRAP_COST_TOL: f64 = 1e-4;
pub const TRAP_RESIDUAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckRow {
    pub dt: f64,
    pub ilqr_costs: Vec<f64>,
    pub sqp_costs: Vec<f64>,
    pub ilqr_cost: Option<f64>,
    pub best_sqp_cost: Option<f64>,
    /// `|J_iLQR − min J_SQP| / min J_SQP`.
    pub relative_gap: Option<f64>,
    pub traps: Vec<TrapCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub system: SystemKind,
    pub rows: Vec<CrossCheckRow>,
}

/// Starts iLQR at every SQP cluster representative and checks that it stays put.
pub fn trap_checks(config: &ExperimentConfig, dt: f64, sqp_set: &SolutionClusterSet) -> Result<Vec<TrapCheck>> {
    let problem = config.problem(dt)?;
    sqp_set
        .clusters
        .iter()
        .map(|c| {
            let res = ilqr::solve(
                problem.system.as_ref(),
                &problem.cost,
                &problem.x0,
                &c.representative.controls,
                dt,
                &config.ilqr,
            )?;
            let relative_change = (res.cost - c.cost).abs() / c.cost.abs().max(f64::MIN_POSITIVE);
            Ok(TrapCheck {
                sqp_cluster: c.id,
                sqp_cost: c.cost,
                ilqr_cost: res.cost,
                relative_change,
                residual: res.stationarity_residual,
                termination: res.termination,
                iterations: res.iterations,
                stationary: relative_change <= TRAP_COST_TOL && res.stationarity_residual <= TRAP_RESIDUAL_TOL,
            })
        })
        .collect()
}

/// Compares the iLQR and SQP cluster sets of one time step.
pub fn compare(
    config: &ExperimentConfig,
    dt: f64,
    ilqr_set: &SolutionClusterSet,
    sqp_set: &SolutionClusterSet,
) -> Result<CrossCheckRow> {
    let ilqr_cost = ilqr_set.best_cost();
    let best_sqp_cost = sqp_set.best_cost();
    let relative_gap = match (ilqr_cost, best_sqp_cost) {
        (Some(a), Some(b)) => Some((a - b).abs() / b.abs().max(f64::MIN_POSITIVE)),
        _ => None,
    };
    Ok(CrossCheckRow {
        dt,
        ilqr_costs: ilqr_set.clusters.iter().map(|c| c.cost).collect(),
        sqp_costs: sqp_set.clusters.iter().map(|c| c.cost).collect(),
        ilqr_cost,
        best_sqp_cost,
        relative_gap,
        traps: trap_checks(config, dt, sqp_set)?,
    })
}

/// Runs both solvers on every time step of the sweep and compares them.
pub fn cross_check(config: &ExperimentConfig) -> Result<CrossCheckReport> {
    let rows = config
        .dt_list
        .iter()
        .map(|&dt| {
            let ilqr_set = run_multistart(config, dt, SolverKind::Ilqr)?;
            let sqp_set = run_multistart(config, dt, SolverKind::Sqp)?;
            compare(config, dt, &ilqr_set, &sqp_set)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossCheckReport {
        system: config.system,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub horizons: Vec<usize>,
    /// Median wall time per iteration, seconds.
    pub median_seconds: Vec<f64>,
    pub slope: f64,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon,median_seconds\n");
        for (n, t) in self.horizons.iter().zip(&self.median_seconds) {
            out.push_str(&format!("{n},{t:.16e}\n"));
        }
        out
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput("need at least two paired samples".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("log-log fit needs positive samples".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("horizons must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

/// Times `iteration(N)` `repetitions` times per horizon (after one warm-up)
/// and fits the log-log slope of the medians.
pub fn measure_scaling_with(
    horizons: &[usize],
    repetitions: usize,
    mut iteration: impl FnMut(usize) -> Result<Duration>,
) -> Result<ScalingReport> {
    if horizons.len() < 2 {
        return Err(Error::InvalidInput("need at least two horizons".into()));
    }
    let reps = repetitions.max(1);
    let mut medians = Vec::with_capacity(horizons.len());
    for &n in horizons {
        iteration(n)?;
        let mut samples: Vec<f64> = (0..reps)
            .map(|_| iteration(n).map(|d| d.as_secs_f64()))
            .collect::<Result<_>>()?;
        samples.sort_by(f64::total_cmp);
        let mid = samples.len() / 2;
        let median = if samples.len() % 2 == 1 {
            samples[mid]
        } else {
            0.5 * (samples[mid - 1] + samples[mid])
        };
        medians.push(median.max(1e-9));
    }
    let xs: Vec<f64> = horizons.iter().map(|&n| n as f64).collect();
    let slope = fit_loglog_slope(&xs, &medians)?;
    Ok(ScalingReport {
        horizons: horizons.to_vec(),
        median_seconds: medians,
        slope,
    })
}

/// Per-iteration wall time of `solver` versus horizon `N` at fixed `dt`.
///
/// Timing covers one backward+forward pass for iLQR and one QP assembly plus
/// dense KKT solve for SQP, evaluated at a random trajectory.
pub fn measure_scaling(
    config: &ExperimentConfig,
    solver: SolverKind,
    horizons: &[usize],
    dt: f64,
    repetitions: usize,
) -> Result<ScalingReport> {
    let mut sub = config.clone();
    measure_scaling_with(horizons, repetitions, |n| {
        sub.t_f = n as f64 * dt;
        let problem = sub.problem(dt)?;
        let (states, controls) = random_guess(&problem, config.init_std, config.seed);
        let traj = match solver {
            SolverKind::Ilqr => rollout(problem.system.as_ref(), &problem.x0, &controls, dt)?,
            SolverKind::Sqp => Trajectory::new(dt, states, controls)?,
        };
        match solver {
            SolverKind::Ilqr => ilqr::time_iteration(problem.system.as_ref(), &problem.cost, &traj),
            SolverKind::Sqp => sqp::time_iteration(problem.system.as_ref(), &problem.cost, &traj),
        }
    })
}
