//! Flat `key = value` configuration files with dotted sections.
//!
//! ```text
//! # cartpole campaign
//! system = cartpole
//! solver = sqp
//! dt = 0.2, 0.1
//! tf = 3.0
//! cost.Q = 100            # scalar means scalar·I
//! cost.Sf = 1000, 1000, 1000, 1000
//! solver.ilqr.max_iterations = 500
//! ```
//!
//! Values are collected into an ordered map first so command-line overrides
//! can replace individual keys before the typed config is built.

use std::collections::BTreeMap;

use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, SolverChoice, SystemKind};

/// Where a value came from: a 1-based file line, or 0 for the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::Config {
                    line,
                    message: format!("missing value for `{key}`"),
                });
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }
        Ok(Self { entries })
    }

    /// Sets `key` as if given on the command line.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                line: 0,
                value: value.into(),
            },
        );
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    /// Builds the typed configuration on top of [`ExperimentConfig::default`].
    pub fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut weights: [Option<(usize, Vec<f64>)>; 3] = [None, None, None];

        for (key, entry) in &self.entries {
            let e = entry;
            match key.as_str() {
                "system" => {
                    cfg.system = SystemKind::parse(&e.value)
                        .ok_or_else(|| err(e, format!("unknown system `{}`", e.value)))?
                }
                "solver" => {
                    cfg.solver = SolverChoice::parse(&e.value)
                        .ok_or_else(|| err(e, format!("unknown solver `{}`", e.value)))?
                }
                "dt" => cfg.dt_list = floats(e)?,
                "tf" => cfg.t_f = float(e)?,
                "x0" => cfg.x0 = Some(floats(e)?),
                "starts" => cfg.n_starts = int(e)?,
                "seed" => cfg.seed = int(e)? as u64,
                "sigma" => cfg.init_std = float(e)?,
                "workers" => cfg.workers = int(e)?,

                "cost.Q" => weights[0] = Some((e.line, floats(e)?)),
                "cost.R" => weights[1] = Some((e.line, floats(e)?)),
                "cost.Sf" => weights[2] = Some((e.line, floats(e)?)),

                "model.pendulum.length" => cfg.pendulum.rod_length = positive(e)?,
                "model.pendulum.mass" => cfg.pendulum.mass = positive(e)?,
                "model.pendulum.gravity" => cfg.pendulum.gravity = float(e)?,
                "model.cartpole.cart_mass" => cfg.cartpole.cart_mass = positive(e)?,
                "model.cartpole.pole_mass" => cfg.cartpole.pole_mass = positive(e)?,
                "model.cartpole.pole_length" => cfg.cartpole.pole_length = positive(e)?,
                "model.cartpole.gravity" => cfg.cartpole.gravity = float(e)?,

                "solver.ilqr.max_iterations" => cfg.ilqr.max_iterations = int(e)?,
                "solver.ilqr.convergence_tol" => cfg.ilqr.convergence_tol = float(e)?,
                "solver.ilqr.stationarity_tol" => cfg.ilqr.stationarity_tol = float(e)?,
                "solver.ilqr.regularization_init" => cfg.ilqr.regularization_init = float(e)?,
                "solver.ilqr.regularization_max" => cfg.ilqr.regularization_max = float(e)?,
                "solver.ilqr.line_search_backtrack" => cfg.ilqr.line_search_backtrack = float(e)?,
                "solver.ilqr.line_search_min_step" => cfg.ilqr.line_search_min_step = float(e)?,

                "solver.sqp.max_iterations" => cfg.sqp.max_iterations = int(e)?,
                "solver.sqp.kkt_tol" => cfg.sqp.kkt_tol = float(e)?,
                "solver.sqp.merit_penalty_init" => cfg.sqp.merit_penalty_init = float(e)?,
                "solver.sqp.line_search_backtrack" => cfg.sqp.line_search_backtrack = float(e)?,
                "solver.sqp.line_search_min_step" => cfg.sqp.line_search_min_step = float(e)?,
                "solver.sqp.armijo" => cfg.sqp.armijo = float(e)?,

                "cluster.cost_rel_tol" => cfg.cluster.cost_rel_tol = positive(e)?,
                "cluster.traj_tol" => cfg.cluster.traj_tol = positive(e)?,

                "characteristics.q" => cfg.characteristics.state_weight = float(e)?,
                "characteristics.r" => cfg.characteristics.control_weight = positive(e)?,
                "characteristics.sf" => cfg.characteristics.terminal_weight = float(e)?,
                "characteristics.x0" => cfg.characteristics.x0 = float(e)?,
                "characteristics.tf" => cfg.characteristics.t_f = positive(e)?,
                "characteristics.dt_int" => cfg.characteristics.dt_int = positive(e)?,
                "characteristics.grid_lo" => cfg.characteristics.grid_lo = float(e)?,
                "characteristics.grid_hi" => cfg.characteristics.grid_hi = float(e)?,
                "characteristics.grid_points" => cfg.characteristics.grid_points = int(e)?,
                "characteristics.shooting_half_width" => {
                    cfg.characteristics.shooting.half_width = positive(e)?
                }
                "characteristics.shooting_scan_points" => {
                    cfg.characteristics.shooting.scan_points = int(e)?
                }
                _ => return Err(err(e, format!("unknown key `{key}`"))),
            }
        }

        if weights.iter().any(Option::is_some) {
            let (n, m) = match cfg.system {
                SystemKind::Pendulum => (2, 1),
                _ => (4, 1),
            };
            let defaults = CostWeights::swing_up_default(n, m);
            let expand = |w: &Option<(usize, Vec<f64>)>, dim: usize, default: &Vec<f64>| -> Result<Vec<f64>> {
                match w {
                    None => Ok(default.clone()),
                    Some((_, v)) if v.len() == 1 => Ok(vec![v[0]; dim]),
                    Some((_, v)) if v.len() == dim => Ok(v.clone()),
                    Some((line, v)) => Err(Error::Config {
                        line: *line,
                        message: format!("expected 1 or {dim} weights, got {}", v.len()),
                    }),
                }
            };
            let built = CostWeights {
                q: expand(&weights[0], n, &defaults.q)?,
                r: expand(&weights[1], m, &defaults.r)?,
                s_f: expand(&weights[2], n, &defaults.s_f)?,
            };
            built.build().map_err(|e| Error::Config {
                line: weights.iter().flatten().map(|w| w.0).next().unwrap_or(0),
                message: e.to_string(),
            })?;
            cfg.weights = Some(built);
        }

        cfg.validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }
}

fn err(e: &Entry, message: String) -> Error {
    Error::Config {
        line: e.line,
        message,
    }
}

fn float(e: &Entry) -> Result<f64> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(e, format!("expected a number, found `{}`", e.value)))
}

fn positive(e: &Entry) -> Result<f64> {
    let v = float(e)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(err(e, format!("expected a positive number, found `{}`", e.value)))
    }
}

fn int(e: &Entry) -> Result<usize> {
    e.value
        .parse::<usize>()
        .map_err(|_| err(e, format!("expected a non-negative integer, found `{}`", e.value)))
}

fn floats(e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(e, format!("expected a comma-separated list of numbers, found `{}`", e.value)))
        })
        .collect()
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

/// Renders `cfg` in the file format; [`RawConfig::parse`] + [`RawConfig::build`]
/// recover it exactly.
pub fn render(cfg: &ExperimentConfig) -> String {
    let mut lines = vec![
        format!("system = {}", cfg.system.as_str()),
        format!("solver = {}", cfg.solver.as_str()),
        format!("dt = {}", list(&cfg.dt_list)),
        format!("tf = {:?}", cfg.t_f),
    ];
    if let Some(x0) = &cfg.x0 {
        lines.push(format!("x0 = {}", list(x0)));
    }
    lines.push(format!("starts = {}", cfg.n_starts));
    lines.push(format!("seed = {}", cfg.seed));
    lines.push(format!("sigma = {:?}", cfg.init_std));
    lines.push(format!("workers = {}", cfg.workers));
    if let Some(w) = &cfg.weights {
        lines.push(format!("cost.Q = {}", list(&w.q)));
        lines.push(format!("cost.R = {}", list(&w.r)));
        lines.push(format!("cost.Sf = {}", list(&w.s_f)));
    }
    let p = &cfg.pendulum;
    let c = &cfg.cartpole;
    let i = &cfg.ilqr;
    let s = &cfg.sqp;
    let ch = &cfg.characteristics;
    lines.extend([
        format!("model.pendulum.length = {:?}", p.rod_length),
        format!("model.pendulum.mass = {:?}", p.mass),
        format!("model.pendulum.gravity = {:?}", p.gravity),
        format!("model.cartpole.cart_mass = {:?}", c.cart_mass),
        format!("model.cartpole.pole_mass = {:?}", c.pole_mass),
        format!("model.cartpole.pole_length = {:?}", c.pole_length),
        format!("model.cartpole.gravity = {:?}", c.gravity),
        format!("solver.ilqr.max_iterations = {}", i.max_iterations),
        format!("solver.ilqr.convergence_tol = {:?}", i.convergence_tol),
        format!("solver.ilqr.stationarity_tol = {:?}", i.stationarity_tol),
        format!("solver.ilqr.regularization_init = {:?}", i.regularization_init),
        format!("solver.ilqr.regularization_max = {:?}", i.regularization_max),
        format!("solver.ilqr.line_search_backtrack = {:?}", i.line_search_backtrack),
        format!("solver.ilqr.line_search_min_step = {:?}", i.line_search_min_step),
        format!("solver.sqp.max_iterations = {}", s.max_iterations),
        format!("solver.sqp.kkt_tol = {:?}", s.kkt_tol),
        format!("solver.sqp.merit_penalty_init = {:?}", s.merit_penalty_init),
        format!("solver.sqp.line_search_backtrack = {:?}", s.line_search_backtrack),
        format!("solver.sqp.line_search_min_step = {:?}", s.line_search_min_step),
        format!("solver.sqp.armijo = {:?}", s.armijo),
        format!("cluster.cost_rel_tol = {:?}", cfg.cluster.cost_rel_tol),
        format!("cluster.traj_tol = {:?}", cfg.cluster.traj_tol),
        format!("characteristics.q = {:?}", ch.state_weight),
        format!("characteristics.r = {:?}", ch.control_weight),
        format!("characteristics.sf = {:?}", ch.terminal_weight),
        format!("characteristics.x0 = {:?}", ch.x0),
        format!("characteristics.tf = {:?}", ch.t_f),
        format!("characteristics.dt_int = {:?}", ch.dt_int),
        format!("characteristics.grid_lo = {:?}", ch.grid_lo),
        format!("characteristics.grid_hi = {:?}", ch.grid_hi),
        format!("characteristics.grid_points = {}", ch.grid_points),
        format!("characteristics.shooting_half_width = {:?}", ch.shooting.half_width),
        format!("characteristics.shooting_scan_points = {}", ch.shooting.scan_points),
    ]);
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
