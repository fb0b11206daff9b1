//! Control-affine models `ẋ = f(x) + G(x)u`, their forward-Euler transcription
//! and the discrete-time Jacobians used by both solvers.
//!
//! Angles are measured from the upright position (`θ = 0` upright, `θ = π`
//! hanging). No angle wrapping is applied anywhere: states live on ℝⁿ.
//!
//! Pendulum (point mass `m` on a massless rod of length `l`, torque `u`):
//!
//! ```text
//! θ̈ = (g / l) sin θ + u / (m l²)
//! ```
//!
//! Cartpole (cart mass `m_c`, point mass `m_p` at distance `l`, force `u` on
//! the cart), with `s = sin θ`, `c = cos θ`, `d = m_c + m_p s²`:
//!
//! ```text
//! p̈ = (u + m_p s (g c − l θ̇²)) / d
//! θ̈ = (u c − m_p l θ̇² c s + (m_c + m_p) g s) / (l d)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Continuous control-affine dynamics with analytic Jacobians.
pub trait ControlAffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Drift `f(x)`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Input matrix `G(x)`, `n × m`.
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂f/∂x`.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂(G(x)u)/∂x` for a fixed `u`.
    fn input_matrix_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
}

fn check_xu(sys: &dyn ControlAffineSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    check_dim("state", sys.state_dim(), x.len())?;
    check_dim("control", sys.control_dim(), u.len())
}

/// `f(x) + G(x)u`.
pub fn continuous_derivative(
    sys: &dyn ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_xu(sys, x, u)?;
    Ok(sys.drift(x) + sys.input_matrix(x) * u)
}

/// One forward-Euler step `x + dt·(f(x) + G(x)u)`.
pub fn euler_step(
    sys: &dyn ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    check_dt(dt)?;
    Ok(x + continuous_derivative(sys, x, u)? * dt)
}

/// Jacobians `(A, B)` of [`euler_step`] with respect to `x` and `u`.
pub fn linearize_discrete(
    sys: &dyn ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dt(dt)?;
    check_xu(sys, x, u)?;
    let n = sys.state_dim();
    let jac = sys.drift_jacobian(x) + sys.input_matrix_jacobian(x, u);
    let a = DMatrix::identity(n, n) + jac * dt;
    let b = sys.input_matrix(x) * dt;
    Ok((a, b))
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Simulates `controls` from `x0` with [`euler_step`].
pub fn rollout(
    sys: &dyn ControlAffineSystem,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
    dt: f64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for u in controls {
        let next = euler_step(sys, states.last().unwrap(), u, dt)?;
        states.push(next);
    }
    Trajectory::new(dt, states, controls.to_vec())
}

/// Point-mass pendulum on a massless rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumModel {
    pub rod_length: f64,
    pub mass: f64,
    pub gravity: f64,
}

impl Default for PendulumModel {
    fn default() -> Self {
        Self {
            rod_length: 0.5,
            mass: 0.5,
            gravity: 9.81,
        }
    }
}

impl ControlAffineSystem for PendulumModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1], self.gravity / self.rod_length * x[0].sin()])
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let inertia = self.mass * self.rod_length * self.rod_length;
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / inertia])
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, self.gravity / self.rod_length * x[0].cos(), 0.0],
        )
    }

    fn input_matrix_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
}

/// Cart with a point-mass pole, force applied to the cart.
///
/// State is `[p, ṗ, θ, θ̇]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleModel {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for CartpoleModel {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.01,
            pole_length: 0.6,
            gravity: 9.81,
        }
    }
}

impl ControlAffineSystem for CartpoleModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (s, c) = x[2].sin_cos();
        let w = x[3];
        let d = mc + mp * s * s;
        DVector::from_vec(vec![
            x[1],
            mp * s * (g * c - l * w * w) / d,
            w,
            (-mp * l * w * w * c * s + (mc + mp) * g * s) / (l * d),
        ])
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (mc, mp, l) = (self.cart_mass, self.pole_mass, self.pole_length);
        let (s, c) = x[2].sin_cos();
        let d = mc + mp * s * s;
        DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / d, 0.0, c / (l * d)])
    }

    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (mc, mp, l, g) = (self.cart_mass, self.pole_mass, self.pole_length, self.gravity);
        let (s, c) = x[2].sin_cos();
        let w = x[3];
        let d = mc + mp * s * s;
        let d_th = 2.0 * mp * s * c;

        let a2 = mp * s * (g * c - l * w * w);
        let a2_th = mp * g * (c * c - s * s) - mp * l * w * w * c;
        let a2_w = -2.0 * mp * l * w * s;

        let a4 = -mp * l * w * w * c * s + (mc + mp) * g * s;
        let a4_th = -mp * l * w * w * (c * c - s * s) + (mc + mp) * g * c;
        let a4_w = -2.0 * mp * l * w * c * s;

        let mut jac = DMatrix::zeros(4, 4);
        jac[(0, 1)] = 1.0;
        jac[(1, 2)] = (a2_th * d - a2 * d_th) / (d * d);
        jac[(1, 3)] = a2_w / d;
        jac[(2, 3)] = 1.0;
        jac[(3, 2)] = (a4_th * d - a4 * d_th) / (l * d * d);
        jac[(3, 3)] = a4_w / (l * d);
        jac
    }

    fn input_matrix_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (mc, mp, l) = (self.cart_mass, self.pole_mass, self.pole_length);
        let (s, c) = x[2].sin_cos();
        let d = mc + mp * s * s;
        let d_th = 2.0 * mp * s * c;
        let mut jac = DMatrix::zeros(4, 4);
        jac[(1, 2)] = -u[0] * d_th / (d * d);
        jac[(3, 2)] = u[0] * (-s * d - c * d_th) / (l * d * d);
        jac
    }
}

/// Linear time-invariant system `ẋ = Fx + Gu`, used for LQR checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub state_matrix: DMatrix<f64>,
    pub input_matrix: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(state_matrix: DMatrix<f64>, input_matrix: DMatrix<f64>) -> Result<Self> {
        let n = state_matrix.nrows();
        check_dim("state matrix columns", n, state_matrix.ncols())?;
        check_dim("input matrix rows", n, input_matrix.nrows())?;
        Ok(Self {
            state_matrix,
            input_matrix,
        })
    }

    /// `p̈ = u` as a two-state system.
    pub fn double_integrator() -> Self {
        Self {
            state_matrix: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            input_matrix: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        }
    }
}

impl ControlAffineSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.state_matrix.nrows()
    }

    fn control_dim(&self) -> usize {
        self.input_matrix.ncols()
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.state_matrix * x
    }

    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.input_matrix.clone()
    }

    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.state_matrix.clone()
    }

    fn input_matrix_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        DMatrix::zeros(n, n)
    }
}

/// State sequence `x_0..x_N` paired with controls `u_0..u_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<DVector<f64>>, controls: Vec<DVector<f64>>) -> Result<Self> {
        check_dt(dt)?;
        check_dim("trajectory states", controls.len() + 1, states.len())?;
        Ok(Self {
            dt,
            states,
            controls,
        })
    }

    /// All-zero trajectory with `horizon` steps.
    pub fn zeros(dt: f64, horizon: usize, state_dim: usize, control_dim: usize) -> Self {
        Self {
            dt,
            states: vec![DVector::zeros(state_dim); horizon + 1],
            controls: vec![DVector::zeros(control_dim); horizon],
        }
    }

    /// Number of control intervals `N`.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, |u| u.len())
    }

    /// Per-step Euler defects `x_{k+1} − euler_step(x_k, u_k)`, `k = 0..N-1`.
    pub fn defects(&self, sys: &dyn ControlAffineSystem) -> Result<Vec<DVector<f64>>> {
        self.controls
            .iter()
            .enumerate()
            .map(|(k, u)| Ok(&self.states[k + 1] - euler_step(sys, &self.states[k], u, self.dt)?))
            .collect()
    }

    /// Largest absolute defect component over the whole trajectory.
    pub fn max_defect(&self, sys: &dyn ControlAffineSystem) -> Result<f64> {
        Ok(self
            .defects(sys)?
            .iter()
            .map(|d| d.amax())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().chain(&self.controls).all(|v| v.iter().all(|e| e.is_finite()))
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    dt: f64,
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TrajectoryRepr {
            dt: self.dt,
            states: self.states.iter().map(|v| v.iter().copied().collect()).collect(),
            controls: self.controls.iter().map(|v| v.iter().copied().collect()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TrajectoryRepr::deserialize(deserializer)?;
        Trajectory::new(
            repr.dt,
            repr.states.into_iter().map(DVector::from_vec).collect(),
            repr.controls.into_iter().map(DVector::from_vec).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}
