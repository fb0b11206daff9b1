//! Separable running cost `𝓛(x) + 𝓡(u)` plus terminal cost `Φ(x)`, transcribed
//! as `J = Φ(x_N) + Δt Σ_{k<N} [𝓛(x_k) + 𝓡(u_k)]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{check_dim, Error, Result};

/// A twice-differentiable trajectory cost with separable running term.
///
/// The running term is the integrand; [`total_cost`] and [`quadratize`] apply
/// the `Δt` weighting.
pub trait TrajectoryCost: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn state_cost(&self, x: &DVector<f64>) -> f64;
    fn state_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn state_hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn control_cost(&self, u: &DVector<f64>) -> f64;
    fn control_gradient(&self, u: &DVector<f64>) -> DVector<f64>;
    /// Must be positive definite everywhere.
    fn control_hessian(&self, u: &DVector<f64>) -> DMatrix<f64>;

    fn terminal_cost(&self, x: &DVector<f64>) -> f64;
    fn terminal_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn terminal_hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `𝓛(x) = xᵀQx`, `𝓡(u) = uᵀRu`, `Φ(x) = ½ xᵀ S_f x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    s_f: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

impl QuadraticCost {
    /// Symmetrizes the weights and checks `Q, S_f ⪰ 0`, `R ≻ 0`.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, s_f: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        check_dim("Q columns", n, q.ncols())?;
        check_dim("S_f rows", n, s_f.nrows())?;
        check_dim("S_f columns", n, s_f.ncols())?;
        check_dim("R columns", r.nrows(), r.ncols())?;
        if r.nrows() == 0 {
            return Err(Error::InvalidInput("control weight must be non-empty".into()));
        }
        let (q, r, s_f) = (symmetrize(&q), symmetrize(&r), symmetrize(&s_f));
        if q.iter().chain(r.iter()).chain(s_f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cost weights must be finite".into()));
        }
        for (name, m) in [("Q", &q), ("S_f", &s_f)] {
            let tol = 1e-12 * m.amax().max(1.0);
            if n > 0 && min_eigenvalue(m) < -tol {
                return Err(Error::InvalidInput(format!("{name} must be positive semidefinite")));
            }
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("R must be positive definite".into()));
        }
        Ok(Self { q, r, s_f })
    }

    pub fn diagonal(q: &[f64], r: &[f64], s_f: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
            DMatrix::from_diagonal(&DVector::from_column_slice(s_f)),
        )
    }

    /// `Q = 100·I`, `R = 10·I`, `S_f = 1000·I`.
    pub fn swing_up_default(state_dim: usize, control_dim: usize) -> Self {
        Self::diagonal(
            &vec![100.0; state_dim],
            &vec![10.0; control_dim],
            &vec![1000.0; state_dim],
        )
        .expect("default weights are valid")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn s_f(&self) -> &DMatrix<f64> {
        &self.s_f
    }
}

impl TrajectoryCost for QuadraticCost {
    fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    fn state_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x))
    }

    fn state_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x * 2.0
    }

    fn state_hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        &self.q * 2.0
    }

    fn control_cost(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.r * u))
    }

    fn control_gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.r * u * 2.0
    }

    fn control_hessian(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        &self.r * 2.0
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.s_f * x))
    }

    fn terminal_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.s_f * x
    }

    fn terminal_hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.s_f.clone()
    }
}

/// Second-order expansion of [`total_cost`] around a trajectory, with the
/// `Δt` weights already applied to the running terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CostQuadratization {
    pub l_x: Vec<DVector<f64>>,
    pub l_xx: Vec<DMatrix<f64>>,
    pub r_u: Vec<DVector<f64>>,
    pub r_uu: Vec<DMatrix<f64>>,
    pub phi_x: DVector<f64>,
    pub phi_xx: DMatrix<f64>,
}

fn check_traj(cost: &dyn TrajectoryCost, traj: &Trajectory) -> Result<()> {
    for x in &traj.states {
        check_dim("state", cost.state_dim(), x.len())?;
    }
    for u in &traj.controls {
        check_dim("control", cost.control_dim(), u.len())?;
    }
    Ok(())
}

/// `Φ(x_N) + Δt Σ_{k<N} [𝓛(x_k) + 𝓡(u_k)]`.
pub fn total_cost(cost: &dyn TrajectoryCost, traj: &Trajectory) -> Result<f64> {
    check_traj(cost, traj)?;
    Ok(total_cost_unchecked(cost, traj))
}

pub(crate) fn total_cost_unchecked(cost: &dyn TrajectoryCost, traj: &Trajectory) -> f64 {
    let running: f64 = traj
        .controls
        .iter()
        .zip(&traj.states)
        .map(|(u, x)| cost.state_cost(x) + cost.control_cost(u))
        .sum();
    cost.terminal_cost(traj.states.last().unwrap()) + traj.dt * running
}

pub fn quadratize(cost: &dyn TrajectoryCost, traj: &Trajectory) -> Result<CostQuadratization> {
    check_traj(cost, traj)?;
    let dt = traj.dt;
    let n_steps = traj.horizon();
    let xs = &traj.states[..n_steps];
    let x_n = &traj.states[n_steps];
    Ok(CostQuadratization {
        l_x: xs.iter().map(|x| cost.state_gradient(x) * dt).collect(),
        l_xx: xs.iter().map(|x| cost.state_hessian(x) * dt).collect(),
        r_u: traj.controls.iter().map(|u| cost.control_gradient(u) * dt).collect(),
        r_uu: traj.controls.iter().map(|u| cost.control_hessian(u) * dt).collect(),
        phi_x: cost.terminal_gradient(x_n),
        phi_xx: cost.terminal_hessian(x_n),
    })
}

/// Diagonal weights as they appear in experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub s_f: Vec<f64>,
}

impl CostWeights {
    pub fn swing_up_default(state_dim: usize, control_dim: usize) -> Self {
        Self {
            q: vec![100.0; state_dim],
            r: vec![10.0; control_dim],
            s_f: vec![1000.0; state_dim],
        }
    }

    pub fn build(&self) -> Result<QuadraticCost> {
        QuadraticCost::diagonal(&self.q, &self.r, &self.s_f)
    }
}
