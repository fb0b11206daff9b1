//! Iterative LQR: a backward sweep of the quadratic value model `(v_k, V_k)`
//! producing feedforward/feedback gains `(k_k, K_k)`, followed by a nonlinear
//! forward rollout with `δu_k = −α k_k − K_k δx_k`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{quadratize, total_cost_unchecked, CostQuadratization, TrajectoryCost};
use crate::dynamics::{euler_step, rollout, ControlAffineSystem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::solver::{
    linearize_trajectory, stationarity_residual, IterationRecord, SolverResult, Termination,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ILQRSettings {
    pub max_iterations: usize,
    /// Threshold on the relative cost decrease of an accepted iteration.
    pub convergence_tol: f64,
    /// Threshold on [`stationarity_residual`] required for convergence.
    pub stationarity_tol: f64,
    pub regularization_init: f64,
    pub regularization_max: f64,
    pub line_search_backtrack: f64,
    pub line_search_min_step: f64,
}

impl Default for ILQRSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            convergence_tol: 1e-8,
            stationarity_tol: 1e-4,
            regularization_init: 0.0,
            regularization_max: 1e8,
            line_search_backtrack: 0.5,
            line_search_min_step: 1e-6,
        }
    }
}

impl ILQRSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("convergence_tol", self.convergence_tol),
            ("stationarity_tol", self.stationarity_tol),
            ("regularization_max", self.regularization_max),
            ("line_search_min_step", self.line_search_min_step),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(self.regularization_init >= 0.0) {
            return Err(Error::InvalidInput("regularization_init must be non-negative".into()));
        }
        if !(self.line_search_backtrack > 0.0 && self.line_search_backtrack < 1.0) {
            return Err(Error::InvalidInput("line_search_backtrack must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPassResult {
    /// Feedforward terms `k_0..k_{N-1}`.
    pub feedforward: Vec<DVector<f64>>,
    /// Feedback matrices `K_0..K_{N-1}`.
    pub feedback: Vec<DMatrix<f64>>,
    /// Value gradients `v_0..v_N`.
    pub value_gradient: Vec<DVector<f64>>,
    /// Value Hessians `V_0..V_N`.
    pub value_hessian: Vec<DMatrix<f64>>,
}

impl BackwardPassResult {
    /// Co-state estimate `λ_k = v_k + V_k δx_k` for a state deviation `δx_k`.
    pub fn costate(&self, k: usize, dx: &DVector<f64>) -> DVector<f64> {
        &self.value_gradient[k] + &self.value_hessian[k] * dx
    }
}

/// Backward Riccati sweep.
///
/// With `Q_u = 𝓡_u + Bᵀv'`, `Q_uu = 𝓡_uu + BᵀV'B + ρI`, `Q_ux = BᵀV'A` the
/// gains are `k = Q_uu⁻¹ Q_u` and `K = Q_uu⁻¹ Q_ux`; the value model is
/// propagated as
///
/// ```text
/// v = 𝓛_x + Aᵀv' − KᵀQ_u − Q_uxᵀk + KᵀQ̄_uu k
/// V = 𝓛_xx + AᵀV'A − KᵀQ_ux − Q_uxᵀK + KᵀQ̄_uu K
/// ```
///
/// where `Q̄_uu` omits `ρ`. For `ρ = 0` this is the Riccati difference
/// equation `V = 𝓛_xx + AᵀV'A − AᵀV'B (𝓡_uu + BᵀV'B)⁻¹ BᵀV'A`.
pub fn backward_pass(
    traj: &Trajectory,
    lin: &[(DMatrix<f64>, DMatrix<f64>)],
    quad: &CostQuadratization,
    regularization: f64,
) -> Result<BackwardPassResult> {
    let n_steps = traj.horizon();
    check_dim("linearization", n_steps, lin.len())?;
    check_dim("quadratization", n_steps, quad.r_u.len())?;
    if !(regularization >= 0.0) {
        return Err(Error::InvalidInput("regularization must be non-negative".into()));
    }
    let m = traj.control_dim();

    let mut v = vec![DVector::zeros(0); n_steps + 1];
    let mut vv = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut feedforward = vec![DVector::zeros(0); n_steps];
    let mut feedback = vec![DMatrix::zeros(0, 0); n_steps];
    v[n_steps] = quad.phi_x.clone();
    vv[n_steps] = quad.phi_xx.clone();

    for k in (0..n_steps).rev() {
        let (a, b) = &lin[k];
        let v_next = &v[k + 1];
        let vv_next = &vv[k + 1];
        let vb = vv_next * b;

        let q_u = &quad.r_u[k] + b.tr_mul(v_next);
        let q_x = &quad.l_x[k] + a.tr_mul(v_next);
        let q_uu = &quad.r_uu[k] + b.tr_mul(&vb);
        let q_ux = vb.tr_mul(a);
        let q_xx = &quad.l_xx[k] + a.tr_mul(&(vv_next * a));

        let mut q_uu_reg = (&q_uu + q_uu.transpose()) * 0.5;
        for i in 0..m {
            q_uu_reg[(i, i)] += regularization;
        }
        let chol = q_uu_reg.cholesky().ok_or_else(|| {
            Error::NumericalFailure(format!(
                "control Hessian not positive definite at step {k} (regularization {regularization:e})"
            ))
        })?;
        let kff = chol.solve(&q_u);
        let kfb = chol.solve(&q_ux);

        let q_uu_k = &q_uu * &kff;
        let q_uu_kk = &q_uu * &kfb;
        let vk = q_x - kfb.tr_mul(&q_u) - q_ux.tr_mul(&kff) + kfb.tr_mul(&q_uu_k);
        let vvk = q_xx - kfb.tr_mul(&q_ux) - q_ux.tr_mul(&kfb) + kfb.tr_mul(&q_uu_kk);

        if !vk.iter().chain(vvk.iter()).all(|e| e.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite value model at step {k}")));
        }
        v[k] = vk;
        vv[k] = (&vvk + vvk.transpose()) * 0.5;
        feedforward[k] = kff;
        feedback[k] = kfb;
    }

    Ok(BackwardPassResult {
        feedforward,
        feedback,
        value_gradient: v,
        value_hessian: vv,
    })
}

/// Closed-loop rollout `û_k = u_k − α k_k − K_k (x̂_k − x_k)`, `x̂_0 = x_0`.
pub fn forward_pass(
    sys: &dyn ControlAffineSystem,
    traj: &Trajectory,
    gains: &BackwardPassResult,
    step: f64,
) -> Result<Trajectory> {
    let n_steps = traj.horizon();
    check_dim("gains", n_steps, gains.feedforward.len())?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut controls = Vec::with_capacity(n_steps);
    states.push(traj.states[0].clone());
    for k in 0..n_steps {
        let x_hat = &states[k];
        let dx = x_hat - &traj.states[k];
        let u_hat = &traj.controls[k] - &gains.feedforward[k] * step - &gains.feedback[k] * dx;
        let next = euler_step(sys, x_hat, &u_hat, traj.dt)?;
        if !next.iter().chain(u_hat.iter()).all(|e| e.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite rollout at step {k}")));
        }
        controls.push(u_hat);
        states.push(next);
    }
    Trajectory::new(traj.dt, states, controls)
}

/// Minimizes the transcribed cost starting from the rollout of `u_init`.
///
/// Invalid inputs are errors; solver breakdowns are reported through
/// [`SolverResult::termination`] together with the best trajectory found.
pub fn solve(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    x0: &DVector<f64>,
    u_init: &[DVector<f64>],
    dt: f64,
    settings: &ILQRSettings,
) -> Result<SolverResult> {
    settings.validate()?;
    check_dim("cost state dimension", sys.state_dim(), cost.state_dim())?;
    check_dim("cost control dimension", sys.control_dim(), cost.control_dim())?;
    if u_init.is_empty() {
        return Err(Error::InvalidInput("initial control sequence is empty".into()));
    }

    let mut traj = rollout(sys, x0, u_init, dt)?;
    let mut trace = Vec::new();
    if !traj.is_finite() {
        return Ok(SolverResult {
            cost: f64::INFINITY,
            stationarity_residual: f64::INFINITY,
            trajectory: traj,
            iterations: 0,
            termination: Termination::NumericalFailure,
            constraint_violation: 0.0,
            trace,
        });
    }
    let mut cost_now = total_cost_unchecked(cost, &traj);
    let mut reg = settings.regularization_init;
    let mut residual = stationarity_residual(sys, cost, &traj)?;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < settings.max_iterations {
        iterations += 1;
        let lin = linearize_trajectory(sys, &traj)?;
        let quad = quadratize(cost, &traj)?;

        let gains = loop {
            match backward_pass(&traj, &lin, &quad, reg) {
                Ok(g) => break g,
                Err(Error::NumericalFailure(_)) => {
                    reg = (reg * 10.0).max(1e-6);
                    if reg > settings.regularization_max {
                        termination = Termination::NumericalFailure;
                        break 'outer;
                    }
                }
                Err(e) => return Err(e),
            }
        };

        // Increases this small are rounding in the rollout cost. Such a step is
        // still taken if it makes the trajectory more stationary, otherwise
        // the solver stalls at its own precision floor.
        let noise = 1e2 * f64::EPSILON * (1.0 + cost_now.abs());
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= settings.line_search_min_step {
            if let Ok(candidate) = forward_pass(sys, &traj, &gains, alpha) {
                let c = total_cost_unchecked(cost, &candidate);
                if c < cost_now {
                    accepted = Some((candidate, c));
                    break;
                }
                if c <= cost_now + noise
                    && residual > settings.stationarity_tol
                    && stationarity_residual(sys, cost, &candidate)? < residual
                {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            alpha *= settings.line_search_backtrack;
        }

        match accepted {
            Some((candidate, new_cost)) => {
                let rel_decrease = (cost_now - new_cost) / cost_now.abs().max(f64::MIN_POSITIVE);
                traj = candidate;
                cost_now = new_cost;
                residual = stationarity_residual(sys, cost, &traj)?;
                reg *= 0.5;
                if reg < 1e-12 {
                    reg = 0.0;
                }
                trace.push(IterationRecord {
                    iteration: iterations,
                    cost: cost_now,
                    merit: cost_now,
                    step: alpha,
                    regularization: reg,
                    penalty: 0.0,
                    residual,
                });
                if rel_decrease < settings.convergence_tol && residual <= settings.stationarity_tol {
                    termination = Termination::Converged;
                    break;
                }
            }
            None => {
                trace.push(IterationRecord {
                    iteration: iterations,
                    cost: cost_now,
                    merit: cost_now,
                    step: 0.0,
                    regularization: reg,
                    penalty: 0.0,
                    residual,
                });
                if residual <= settings.stationarity_tol {
                    termination = Termination::Converged;
                    break;
                }
                reg = (reg * 10.0).max(1e-6);
                if reg > settings.regularization_max {
                    termination = Termination::LineSearchFailure;
                    break;
                }
            }
        }
    }

    Ok(SolverResult {
        trajectory: traj,
        cost: cost_now,
        iterations,
        termination,
        stationarity_residual: residual,
        constraint_violation: 0.0,
        trace,
    })
}

/// Wall time of one backward + forward pass at `traj`, used for scaling studies.
pub fn time_iteration(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
) -> Result<std::time::Duration> {
    let start = Instant::now();
    let lin = linearize_trajectory(sys, traj)?;
    let quad = quadratize(cost, traj)?;
    let gains = backward_pass(traj, &lin, &quad, 0.0)?;
    let out = forward_pass(sys, traj, &gains, 1.0)?;
    let elapsed = start.elapsed();
    std::hint::black_box(out);
    Ok(elapsed)
}
