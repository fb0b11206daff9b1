//! Types shared by the iLQR and SQP solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::TrajectoryCost;
use crate::dynamics::{linearize_discrete, ControlAffineSystem, Trajectory};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
    NumericalFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
            Termination::NumericalFailure => "numerical_failure",
        }
    }
}

/// One row of the per-iteration trace.
///
/// `merit` equals `cost` for iLQR; `regularization` is the Levenberg term for
/// iLQR and the Hessian shift for SQP; `penalty` is zero for iLQR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub merit: f64,
    pub step: f64,
    pub regularization: f64,
    pub penalty: f64,
    pub residual: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,cost,merit,step,regularization,penalty,residual";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Dynamically feasible trajectory (SQP re-rolls its controls before reporting).
    pub trajectory: Trajectory,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// `max_k ‖∂𝓗_k/∂u_k‖∞` along `trajectory`; see [`stationarity_residual`].
    pub stationarity_residual: f64,
    /// Largest Euler defect of the solver's own iterate before re-rolling.
    pub constraint_violation: f64,
    #[serde(skip)]
    pub trace: Vec<IterationRecord>,
}

impl SolverResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Jacobians `(A_k, B_k)` of the Euler map along `traj`.
pub fn linearize_trajectory(
    sys: &dyn ControlAffineSystem,
    traj: &Trajectory,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    traj.controls
        .iter()
        .zip(&traj.states)
        .map(|(u, x)| linearize_discrete(sys, x, u, traj.dt))
        .collect()
}

/// Discrete co-states from the adjoint sweep `λ_N = Φ_x`,
/// `λ_k = 𝓛_x Δt + A_kᵀ λ_{k+1}`, together with the control gradients
/// `∂𝓗_k/∂u_k = 𝓡_u Δt + B_kᵀ λ_{k+1}`.
///
/// For a feasible trajectory the control gradients are exactly the gradient
/// of the total cost with respect to `u_k` through the rollout.
pub fn adjoint_sweep(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let lin = linearize_trajectory(sys, traj)?;
    let n_steps = traj.horizon();
    let dt = traj.dt;
    let mut costates = vec![DVector::zeros(traj.state_dim()); n_steps + 1];
    let mut grads = vec![DVector::zeros(traj.control_dim()); n_steps];
    costates[n_steps] = cost.terminal_gradient(&traj.states[n_steps]);
    for k in (0..n_steps).rev() {
        let (a, b) = &lin[k];
        let next = &costates[k + 1];
        grads[k] = cost.control_gradient(&traj.controls[k]) * dt + b.tr_mul(next);
        costates[k] = cost.state_gradient(&traj.states[k]) * dt + a.tr_mul(next);
    }
    Ok((costates, grads))
}

/// Discrete analogue of `∂𝓗/∂u = 0`: the largest control-gradient entry from
/// [`adjoint_sweep`].
pub fn stationarity_residual(
    sys: &dyn ControlAffineSystem,
    cost: &dyn TrajectoryCost,
    traj: &Trajectory,
) -> Result<f64> {
    let (_, grads) = adjoint_sweep(sys, cost, traj)?;
    Ok(grads.iter().map(|g| g.amax()).fold(0.0, f64::max))
}
