//! Full-space SQP over the stacked decision vector `z = (x_1..x_N, u_0..u_{N-1})`
//! with the Euler defects `c_k = x_k − q(x_{k−1}, u_{k−1})` as equality
//! constraints.
//!
//! Every iteration solves the equality-constrained QP built from the cost
//! Hessian and the linearized defects with a dense LU factorization of the
//! whole KKT matrix. The banded structure is deliberately ignored, so the
//! per-iteration cost grows cubically with the horizon.

use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{quadratize, total_cost_unchecked, TrajectoryCost};
use crate::dynamics::{linearize_discrete, rollout, ControlAffineSystem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::solver::{stationarity_residual, IterationRecord, SolverResult, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SQPSettings {
    pub max_iterations: usize,
    /// Threshold on the largest KKT residual (stationarity and defects).
    pub kkt_tol: f64,
    pub merit_penalty_init: f64,
    pub line_search_backtrack: f64,
    pub line_search_min_step: f64,
    /// Armijo sufficient-decrease fraction for the merit function.
    pub armijo: f64,
}

impl Default for SQPSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kkt_tol: 1e-6,
            merit_penalty_init: 10.0,
            line_search_backtrack: 0.5,
            line_search_min_step: 1e-6,
            armijo: 1e-4,
        }
    }
}

impl SQPSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("kkt_tol", self.kkt_tol),
            ("merit_penalty_init", self.merit_penalty_init),
            ("line_search_min_step", self.line_search_min_step),
        ] {
            if !(value > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(self.line_search_backtrack > 0.0 && self.line_search_backtrack < 1.0) {
            return Err(Error::InvalidInput("line_search_backtrack must lie in (0, 1)".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(Error::InvalidInput("armijo must lie in (0, 0.5)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Equality-constrained QP `min ½dᵀHd + gᵀd  s.t.  Cd + r = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QPSubproblem {
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: usize,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraint_jacobian: DMatrix<f64>,
    /// Defects `x_k − q(x_{k−1}, u_{k−1})`, `k = 1..N`.
    pub constraint_residual: DVector<f64>,
}

impl QPSubproblem {
    pub fn num_variables(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_residual.len()
    }

    fn state_offset(&self, k: usize) -> usize {
        (k - 1) * self.state_dim
    }

    fn control_offset(&self, k: usize) -> usize {
        self.horizon * self.state_dim + k * self.control_dim
    }
}

/// Assembles the QP at `traj`; `traj` may violate the dynamics.
pub fn build_qp(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
) -> Result<QPSubproblem> {
    let (n, m, big_n) = (sys.state_dim(), sys.control_dim(), traj.horizon());
    check_dim("cost state dimension", n, cost.state_dim())?;
    check_dim("cost control dimension", m, cost.control_dim())?;
    let quad = quadratize(cost, traj)?;
    let dim = (n + m) * big_n;
    let mut qp = QPSubproblem {
        state_dim: n,
        control_dim: m,
        horizon: big_n,
        hessian: DMatrix::zeros(dim, dim),
        gradient: DVector::zeros(dim),
        constraint_jacobian: DMatrix::zeros(n * big_n, dim),
        constraint_residual: DVector::zeros(n * big_n),
    };

    for k in 1..=big_n {
        let off = qp.state_offset(k);
        let (g, h) = if k == big_n {
            (&quad.phi_x, &quad.phi_xx)
        } else {
            (&quad.l_x[k], &quad.l_xx[k])
        };
        qp.gradient.rows_mut(off, n).copy_from(g);
        qp.hessian.view_mut((off, off), (n, n)).copy_from(h);
    }
    for k in 0..big_n {
        let off = qp.control_offset(k);
        qp.gradient.rows_mut(off, m).copy_from(&quad.r_u[k]);
        qp.hessian.view_mut((off, off), (m, m)).copy_from(&quad.r_uu[k]);
    }

    for k in 1..=big_n {
        let row = (k - 1) * n;
        let (x_prev, u_prev) = (&traj.states[k - 1], &traj.controls[k - 1]);
        let (a, b) = linearize_discrete(sys, x_prev, u_prev, traj.dt)?;
        let predicted = crate::dynamics::euler_step(sys, x_prev, u_prev, traj.dt)?;
        qp.constraint_residual.rows_mut(row, n).copy_from(&(&traj.states[k] - predicted));

        let xo = qp.state_offset(k);
        qp.constraint_jacobian
            .view_mut((row, xo), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        if k >= 2 {
            let po = qp.state_offset(k - 1);
            qp.constraint_jacobian.view_mut((row, po), (n, n)).copy_from(&(-a));
        }
        let uo = qp.control_offset(k - 1);
        qp.constraint_jacobian.view_mut((row, uo), (n, m)).copy_from(&(-b));
    }
    Ok(qp)
}

/// Solves `[H Cᵀ; C 0][d; μ] = [−g; −r]` with a dense partial-pivoting LU over
/// all primal and dual unknowns.
pub fn solve_eq_qp(qp: &QPSubproblem) -> Result<(DVector<f64>, DVector<f64>)> {
    let (dim, ncon) = (qp.num_variables(), qp.num_constraints());
    let total = dim + ncon;
    let h = &qp.hessian;
    let c = &qp.constraint_jacobian;
    let kkt = Mat::<f64>::from_fn(total, total, |i, j| match (i < dim, j < dim) {
        (true, true) => h[(i, j)],
        (true, false) => c[(j - dim, i)],
        (false, true) => c[(i - dim, j)],
        (false, false) => 0.0,
    });
    let rhs = Mat::<f64>::from_fn(total, 1, |i, _| {
        if i < dim {
            -qp.gradient[i]
        } else {
            -qp.constraint_residual[i - dim]
        }
    });
    let sol = kkt.partial_piv_lu().solve(&rhs);
    let step = DVector::from_fn(dim, |i, _| sol[(i, 0)]);
    let mult = DVector::from_fn(ncon, |i, _| sol[(dim + i, 0)]);
    if !step.iter().chain(mult.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("singular KKT matrix".into()));
    }

    let stat = h * &step + c.tr_mul(&mult) + &qp.gradient;
    let feas = c * &step + &qp.constraint_residual;
    let residual = stat.amax().max(feas.amax());
    let scale = 1.0 + qp.gradient.amax().max(qp.constraint_residual.amax());
    if residual > 1e-9 * scale {
        return Err(Error::NumericalFailure(format!(
            "KKT solve residual {residual:e} exceeds tolerance"
        )));
    }
    Ok((step, mult))
}

/// [`solve_eq_qp`], retrying once with `1e-8·I` added to the state blocks of `H`.
fn solve_eq_qp_with_retry(qp: &mut QPSubproblem) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    match solve_eq_qp(qp) {
        Ok((d, mu)) => Ok((d, mu, 0.0)),
        Err(Error::NumericalFailure(_)) => {
            let shift = 1e-8;
            for i in 0..qp.horizon * qp.state_dim {
                qp.hessian[(i, i)] += shift;
            }
            let (d, mu) = solve_eq_qp(qp)?;
            Ok((d, mu, shift))
        }
        Err(e) => Err(e),
    }
}

fn apply_step(traj: &Trajectory, qp: &QPSubproblem, step: &DVector<f64>, alpha: f64) -> Trajectory {
    let mut out = traj.clone();
    let (n, m) = (qp.state_dim, qp.control_dim);
    for k in 1..=qp.horizon {
        out.states[k] += step.rows(qp.state_offset(k), n) * alpha;
    }
    for k in 0..qp.horizon {
        out.controls[k] += step.rows(qp.control_offset(k), m) * alpha;
    }
    out
}

fn defect_l1(sys: &dyn ControlAffineSystem, traj: &Trajectory) -> Result<f64> {
    Ok(traj.defects(sys)?.iter().map(|d| d.lp_norm(1)).sum())
}

/// Full step plus a correction that removes the defects it creates, keeping
/// the ℓ1 merit from rejecting good steps near a solution.
fn second_order_correction(
    sys: &dyn ControlAffineSystem,
    traj: &Trajectory,
    qp: &QPSubproblem,
    step: &DVector<f64>,
) -> Result<Option<Trajectory>> {
    let trial = apply_step(traj, qp, step, 1.0);
    if !trial.is_finite() {
        return Ok(None);
    }
    let mut corrected = qp.clone();
    for (k, d) in trial.defects(sys)?.iter().enumerate() {
        let mut rows = corrected.constraint_residual.rows_mut(k * qp.state_dim, qp.state_dim);
        rows += d;
    }
    let Ok((soc_step, _)) = solve_eq_qp(&corrected) else {
        return Ok(None);
    };
    let candidate = apply_step(traj, qp, &soc_step, 1.0);
    Ok(candidate.is_finite().then_some(candidate))
}

/// `max_k ‖∂𝓗_k/∂u_k‖∞` on `traj` with the QP multipliers as co-state.
///
/// The adjoint sweep would recompute the co-state backward, amplifying the
/// KKT residual by the growth of the linearized dynamics; the multipliers
/// are the co-state this solver actually certified.
fn multiplier_stationarity(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
    multipliers: &DVector<f64>,
) -> Result<f64> {
    let qp = build_qp(sys, cost, traj)?;
    let grad = &qp.gradient + qp.constraint_jacobian.tr_mul(multipliers);
    let off = qp.control_offset(0);
    Ok(grad.rows(off, qp.horizon * qp.control_dim).amax())
}

/// Solves the transcribed problem from an arbitrary (possibly infeasible)
/// guess with an ℓ1-merit backtracking line search.
///
/// The reported trajectory is the control sequence of the final iterate
/// re-rolled through the dynamics from `x0`.
pub fn solve(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    x0: &DVector<f64>,
    x_init: &[DVector<f64>],
    u_init: &[DVector<f64>],
    dt: f64,
    settings: &SQPSettings,
) -> Result<SolverResult> {
    settings.validate()?;
    check_dim("cost state dimension", sys.state_dim(), cost.state_dim())?;
    check_dim("cost control dimension", sys.control_dim(), cost.control_dim())?;
    check_dim("initial state", sys.state_dim(), x0.len())?;
    if u_init.is_empty() {
        return Err(Error::InvalidInput("initial control sequence is empty".into()));
    }
    let mut states = x_init.to_vec();
    check_dim("initial state sequence", u_init.len() + 1, states.len())?;
    states[0] = x0.clone();
    let mut traj = Trajectory::new(dt, states, u_init.to_vec())?;
    for x in &traj.states {
        check_dim("state", sys.state_dim(), x.len())?;
    }

    let mut penalty = settings.merit_penalty_init;
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut multipliers = None;

    while iterations < settings.max_iterations {
        let mut qp = build_qp(sys, cost, &traj)?;
        let (step, mult, shift) = match solve_eq_qp_with_retry(&mut qp) {
            Ok(s) => s,
            Err(Error::NumericalFailure(_)) => {
                termination = Termination::NumericalFailure;
                break;
            }
            Err(e) => return Err(e),
        };

        let stationarity = (&qp.gradient + qp.constraint_jacobian.tr_mul(&mult)).amax();
        let kkt_residual = stationarity.max(qp.constraint_residual.amax());
        multipliers = Some(mult);
        if kkt_residual <= settings.kkt_tol {
            termination = Termination::Converged;
            break;
        }
        iterations += 1;

        penalty = penalty.max(2.0 * multipliers.as_ref().map_or(0.0, |m| m.amax()));
        let cost_now = total_cost_unchecked(cost, &traj);
        let infeas = qp.constraint_residual.lp_norm(1);
        let merit_now = cost_now + penalty * infeas;
        let slope = qp.gradient.dot(&step) - penalty * infeas;

        // Merit changes below this are round-off and do not rank steps; the
        // defect term carries the rounding of every state it differences.
        let state_mass: f64 = traj.states.iter().map(|x| x.lp_norm(1)).sum();
        let noise = 1e1 * f64::EPSILON * (1.0 + cost_now.abs() + penalty * state_mass);
        let merit_at = |candidate: &Trajectory| -> Result<f64> {
            Ok(total_cost_unchecked(cost, candidate) + penalty * defect_l1(sys, candidate)?)
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= settings.line_search_min_step {
            let candidate = apply_step(&traj, &qp, &step, alpha);
            if candidate.is_finite() {
                let merit = merit_at(&candidate)?;
                if merit.is_finite() && merit <= merit_now + settings.armijo * alpha * slope + noise {
                    accepted = Some((candidate, merit));
                    break;
                }
            }
            if alpha == 1.0 {
                accepted = second_order_correction(sys, &traj, &qp, &step)?
                    .map(|c| merit_at(&c).map(|m| (c, m)))
                    .transpose()?
                    .filter(|(_, m)| m.is_finite() && *m <= merit_now + settings.armijo * slope + noise);
                if accepted.is_some() {
                    break;
                }
            }
            alpha *= settings.line_search_backtrack;
        }

        match accepted {
            Some((candidate, merit)) => {
                traj = candidate;
                trace.push(IterationRecord {
                    iteration: iterations,
                    cost: total_cost_unchecked(cost, &traj),
                    merit,
                    step: alpha,
                    regularization: shift,
                    penalty,
                    residual: kkt_residual,
                });
            }
            None => {
                trace.push(IterationRecord {
                    iteration: iterations,
                    cost: cost_now,
                    merit: merit_now,
                    step: 0.0,
                    regularization: shift,
                    penalty,
                    residual: kkt_residual,
                });
                termination = Termination::LineSearchFailure;
                break;
            }
        }
    }

    let constraint_violation = traj.max_defect(sys)?;
    let rerolled = rollout(sys, x0, &traj.controls, dt)?;
    if !rerolled.is_finite() {
        return Ok(SolverResult {
            cost: f64::INFINITY,
            stationarity_residual: f64::INFINITY,
            trajectory: rerolled,
            iterations,
            termination: Termination::NumericalFailure,
            constraint_violation,
            trace,
        });
    }
    Ok(SolverResult {
        cost: total_cost_unchecked(cost, &rerolled),
        stationarity_residual: match &multipliers {
            Some(mu) => multiplier_stationarity(sys, cost, &rerolled, mu)?,
            None => stationarity_residual(sys, cost, &rerolled)?,
        },
        trajectory: rerolled,
        iterations,
        termination,
        constraint_violation,
        trace,
    })
}

/// Wall time of one QP assembly plus dense KKT solve at `traj`.
pub fn time_iteration(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
) -> Result<Duration> {
    let start = Instant::now();
    let qp = build_qp(sys, cost, traj)?;
    let out = solve_eq_qp(&qp)?;
    let elapsed = start.elapsed();
    std::hint::black_box(out);
    Ok(elapsed)
}
