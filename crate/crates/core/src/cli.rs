//! `octrl` command-line front end.
//!
//! Exit status: 0 on success, 1 when every start of some campaign failed to
//! converge, 2 on configuration or usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::characteristics::{solve_tpbvp_shooting, verify_uniqueness, ScalarSystem};
use crate::config::{render, RawConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    compare, run_starts, solve_from_seed, start_seed, summarize_runs, ExperimentConfig, RunRecord,
    SolutionClusterSet, SolverKind,
};
use crate::solver::{IterationRecord, SolverResult};

#[derive(Debug, Parser)]
#[command(name = "octrl", version, about = "Multi-start iLQR/SQP trajectory optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one problem instance from the first random start.
    Solve(CommonArgs),
    /// Multi-start campaign over the time-step sweep, with clustering.
    Campaign(CommonArgs),
    /// Scalar characteristics study: shooting plus monotonicity scan.
    Characteristics(CommonArgs),
    /// Per-iteration runtime versus horizon for both solvers.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    solver: Option<String>,
    /// Time step; repeat for a sweep.
    #[arg(long)]
    dt: Vec<f64>,
    #[arg(long)]
    tf: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the Gaussian initial guesses.
    #[arg(long)]
    sigma: Option<f64>,
    /// Output directory; `solve` prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "OCTRL_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Horizons for the iLQR timing.
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1600")]
    ilqr_horizons: Vec<usize>,
    /// Horizons for the SQP timing.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
    sqp_horizons: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Campaign(args) => cmd_campaign(&args),
        Command::Characteristics(args) => cmd_characteristics(&args),
        Command::Scaling(args) => cmd_scaling(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e @ (Error::Config { .. } | Error::InvalidInput(_) | Error::DimensionMismatch { .. })) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut raw = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config {
                line: 0,
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    if let Some(v) = &args.system {
        raw.set("system", v.as_str());
    }
    if let Some(v) = &args.solver {
        raw.set("solver", v.as_str());
    }
    if !args.dt.is_empty() {
        raw.set("dt", args.dt.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", "));
    }
    if let Some(v) = args.tf {
        raw.set("tf", format!("{v:?}"));
    }
    if let Some(v) = args.starts {
        raw.set("starts", v.to_string());
    }
    if let Some(v) = args.seed {
        raw.set("seed", v.to_string());
    }
    if let Some(v) = args.sigma {
        raw.set("sigma", format!("{v:?}"));
    }
    if let Some(v) = args.workers {
        raw.set("workers", v.to_string());
    }
    raw.build()
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn e17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut out = format!("{}\n", IterationRecord::CSV_HEADER);
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            e17(r.cost),
            e17(r.merit),
            e17(r.step),
            e17(r.regularization),
            e17(r.penalty),
            e17(r.residual)
        ));
    }
    out
}

pub fn summary_csv(sets: &[SolutionClusterSet]) -> String {
    let mut out = String::from("dt,solver,cluster_id,cost,members,residual\n");
    for set in sets {
        for c in &set.clusters {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e17(set.dt),
                set.solver.as_str(),
                c.id,
                e17(c.cost),
                c.members,
                e17(c.representative_residual)
            ));
        }
    }
    out
}

fn dt_label(dt: f64) -> String {
    format!("{dt}").replace('.', "p")
}

fn cmd_solve(args: &CommonArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let mut results: Vec<(SolverKind, f64, SolverResult)> = Vec::new();
    for &dt in &cfg.dt_list {
        let problem = cfg.problem(dt)?;
        for solver in cfg.solver.solvers() {
            let res = solve_from_seed(&cfg, &problem, solver, start_seed(cfg.seed, 0))?;
            eprintln!(
                "{} dt={dt}: {} after {} iterations, J = {:.6e}, residual = {:.2e}",
                solver.as_str(),
                res.termination.as_str(),
                res.iterations,
                res.cost,
                res.stationarity_residual
            );
            results.push((solver, dt, res));
        }
    }

    match &args.out {
        None => {
            if let [(_, _, res)] = results.as_slice() {
                std::io::stdout().write_all(&to_json(res)?)?;
            } else {
                let all: Vec<&SolverResult> = results.iter().map(|r| &r.2).collect();
                std::io::stdout().write_all(&to_json(&all)?)?;
            }
        }
        Some(out) => {
            write_atomic(&out.join("config.txt"), render(&cfg).as_bytes())?;
            let single = results.len() == 1;
            for (solver, dt, res) in &results {
                let id = format!("{}_dt{}", solver.as_str(), dt_label(*dt));
                let name = if single { "result.json".to_string() } else { format!("result_{id}.json") };
                write_atomic(&out.join(name), &to_json(res)?)?;
                write_atomic(&out.join("trace").join(format!("{id}.csv")), trace_csv(&res.trace).as_bytes())?;
            }
        }
    }
    Ok(if results.iter().all(|r| r.2.converged()) { 0 } else { 1 })
}

fn cmd_campaign(args: &CommonArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    write_atomic(&out.join("config.txt"), render(&cfg).as_bytes())?;

    let mut sets = Vec::new();
    let mut comparisons = Vec::new();
    let mut any_empty = false;
    for &dt in &cfg.dt_list {
        let mut per_solver = Vec::new();
        for solver in cfg.solver.solvers() {
            let log = |r: &RunRecord| {
                eprintln!(
                    "{} dt={dt} start {:>3}: {} after {} iterations, J = {:.6e}",
                    solver.as_str(),
                    r.start,
                    r.result.termination.as_str(),
                    r.result.iterations,
                    r.result.cost
                );
            };
            let runs = run_starts(&cfg, dt, solver, &log)?;
            for r in &runs {
                let id = format!("{}_dt{}_start{}", solver.as_str(), dt_label(dt), r.start);
                write_atomic(&out.join("trace").join(format!("{id}.csv")), trace_csv(&r.result.trace).as_bytes())?;
            }
            let set = summarize_runs(&cfg, dt, solver, &runs)?;
            any_empty |= set.clusters.is_empty();
            per_solver.push(set);
        }
        if let [ilqr_set, sqp_set] = per_solver.as_slice() {
            comparisons.push(compare(&cfg, dt, ilqr_set, sqp_set)?);
        }
        sets.extend(per_solver);
    }

    write_atomic(&out.join("clusters.json"), &to_json(&sets)?)?;
    write_atomic(&out.join("summary.csv"), summary_csv(&sets).as_bytes())?;
    if !comparisons.is_empty() {
        write_atomic(&out.join("crosscheck.json"), &to_json(&comparisons)?)?;
    }
    for set in &sets {
        eprintln!(
            "{} dt={}: {} cluster(s), {} failure(s), costs [{}]",
            set.solver.as_str(),
            set.dt,
            set.clusters.len(),
            set.failures.len(),
            set.clusters.iter().map(|c| format!("{:.6e}", c.cost)).collect::<Vec<_>>().join(", ")
        );
    }
    Ok(if any_empty { 1 } else { 0 })
}

fn cmd_characteristics(args: &CommonArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let ch = cfg.characteristics;
    let sys = ScalarSystem::sine(ch.state_weight, ch.control_weight, ch.terminal_weight);
    let n = ch.grid_points.max(1);
    let grid: Vec<f64> = if n == 1 {
        vec![ch.grid_lo]
    } else {
        (0..n).map(|i| ch.grid_lo + (ch.grid_hi - ch.grid_lo) * i as f64 / (n - 1) as f64).collect()
    };
    let report = verify_uniqueness(&sys, ch.x0, ch.t_f, ch.dt_int, &grid)?;
    let shooting = match solve_tpbvp_shooting(&sys, ch.x0, ch.t_f, ch.dt_int, &ch.shooting) {
        Ok(sol) => Some(sol),
        Err(e @ Error::NotFound { .. }) => {
            eprintln!("shooting: {e}");
            None
        }
        Err(e) => return Err(e),
    };

    let mut csv = report.to_csv();
    csv.push_str(&format!("# {}\n", report.summary_line()));
    println!("{}", report.summary_line());
    if let Some(sol) = &shooting {
        println!(
            "shooting: x_tf = {:.12}, roots = {}, max |R_u + λg| = {:.2e}",
            sol.terminal_state,
            sol.roots.len(),
            sol.path.max_stationarity(&sys)
        );
    }
    if let Some(out) = &args.out {
        write_atomic(&out.join("config.txt"), render(&cfg).as_bytes())?;
        write_atomic(&out.join("characteristics.csv"), csv.as_bytes())?;
        if let Some(sol) = &shooting {
            write_atomic(&out.join("shooting.json"), &to_json(sol)?)?;
        }
    }
    Ok(0)
}

fn cmd_scaling(args: &ScalingArgs) -> Result<i32> {
    let cfg = load_config(&args.common)?;
    let dt = cfg.dt_list[0];
    let mut csv = String::from("solver,horizon,median_seconds\n");
    let mut slopes = Vec::new();
    for (solver, horizons) in [
        (SolverKind::Ilqr, &args.ilqr_horizons),
        (SolverKind::Sqp, &args.sqp_horizons),
    ] {
        let rep = crate::experiments::measure_scaling(&cfg, solver, horizons, dt, args.repetitions)?;
        for (n, t) in rep.horizons.iter().zip(&rep.median_seconds) {
            csv.push_str(&format!("{},{n},{}\n", solver.as_str(), e17(*t)));
        }
        println!("{} slope = {:.3}", solver.as_str(), rep.slope);
        slopes.push(serde_json::json!({ "solver": solver.as_str(), "slope": rep.slope }));
    }
    if let Some(out) = &args.common.out {
        write_atomic(&out.join("config.txt"), render(&cfg).as_bytes())?;
        write_atomic(&out.join("timing.csv"), csv.as_bytes())?;
        write_atomic(&out.join("slopes.json"), &to_json(&slopes)?)?;
    }
    Ok(0)
}
