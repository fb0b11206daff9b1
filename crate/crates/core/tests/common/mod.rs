#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use octrl::characteristics::ScalarSystem;
use octrl::cost::{QuadraticCost, TrajectoryCost};
use octrl::dynamics::{euler_step, linearize_discrete, CartpoleModel, ControlAffineSystem, PendulumModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_POINTS: usize = 100;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let h = FD_STEP * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let col = fd_jacobian(|y| DVector::from_element(1, f(y)), x);
    DVector::from_iterator(x.len(), col.iter().copied())
}

pub fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP * (1.0 + x.abs());
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `‖a − b‖∞ / max(‖b‖∞, 1)`; the floor keeps near-zero blocks from
/// turning rounding noise into a large ratio.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Worst finite-difference mismatch of every analytic derivative in the
/// crate, per named function, over `FD_POINTS` random points each.
pub fn derivative_audit(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let pend = PendulumModel::default();
    let cart = CartpoleModel::default();
    let systems: [(&str, &dyn ControlAffineSystem); 2] = [("pendulum", &pend), ("cartpole", &cart)];

    for (name, sys) in systems {
        let (n, m) = (sys.state_dim(), sys.control_dim());
        let mut worst = [0.0f64; 4];
        for _ in 0..FD_POINTS {
            let x = random_vec(&mut r, n, 4.0);
            let u = random_vec(&mut r, m, 5.0);
            let dt = r.random_range(0.005..0.3);
            worst[0] = worst[0].max(rel_err(&sys.drift_jacobian(&x), &fd_jacobian(|y| sys.drift(y), &x)));
            worst[1] = worst[1].max(rel_err(
                &sys.input_matrix_jacobian(&x, &u),
                &fd_jacobian(|y| sys.input_matrix(y) * &u, &x),
            ));
            let (a, b) = linearize_discrete(sys, &x, &u, dt).unwrap();
            worst[2] = worst[2].max(rel_err(&a, &fd_jacobian(|y| euler_step(sys, y, &u, dt).unwrap(), &x)));
            worst[3] = worst[3].max(rel_err(&b, &fd_jacobian(|v| euler_step(sys, &x, v, dt).unwrap(), &u)));
        }
        let labels: [&'static str; 4] = match name {
            "pendulum" => [
                "pendulum drift Jacobian",
                "pendulum input-term Jacobian",
                "pendulum discrete A",
                "pendulum discrete B",
            ],
            _ => [
                "cartpole drift Jacobian",
                "cartpole input-term Jacobian",
                "cartpole discrete A",
                "cartpole discrete B",
            ],
        };
        out.extend(labels.into_iter().zip(worst));
    }

    let cost = QuadraticCost::new(
        spd(&mut r, 4, 50.0),
        spd(&mut r, 1, 10.0),
        spd(&mut r, 4, 500.0),
    )
    .unwrap();
    let mut worst = [0.0f64; 6];
    for _ in 0..FD_POINTS {
        let x = random_vec(&mut r, 4, 3.0);
        let u = random_vec(&mut r, 1, 3.0);
        worst[0] = worst[0].max(rel_err_vec(&cost.state_gradient(&x), &fd_gradient(|y| cost.state_cost(y), &x)));
        worst[1] = worst[1].max(rel_err(&cost.state_hessian(&x), &fd_jacobian(|y| cost.state_gradient(y), &x)));
        worst[2] = worst[2].max(rel_err_vec(&cost.control_gradient(&u), &fd_gradient(|v| cost.control_cost(v), &u)));
        worst[3] = worst[3].max(rel_err(&cost.control_hessian(&u), &fd_jacobian(|v| cost.control_gradient(v), &u)));
        worst[4] = worst[4].max(rel_err_vec(
            &cost.terminal_gradient(&x),
            &fd_gradient(|y| cost.terminal_cost(y), &x),
        ));
        worst[5] = worst[5].max(rel_err(&cost.terminal_hessian(&x), &fd_jacobian(|y| cost.terminal_gradient(y), &x)));
    }
    out.extend(
        [
            "running state-cost gradient",
            "running state-cost Hessian",
            "control-cost gradient",
            "control-cost Hessian",
            "terminal-cost gradient",
            "terminal-cost Hessian",
        ]
        .into_iter()
        .zip(worst),
    );

    let scalar = ScalarSystem::sine(1.0, 5.0, 2.0);
    let mut worst = [0.0f64; 6];
    for _ in 0..FD_POINTS {
        let x = r.random_range(-6.0..6.0);
        let u = r.random_range(-6.0..6.0);
        worst[0] = worst[0].max(rel_err_scalar(scalar.drift.deriv(x), fd_scalar(|y| scalar.drift.eval(y), x)));
        worst[1] = worst[1].max(rel_err_scalar(
            scalar.input_gain.deriv(x),
            fd_scalar(|y| scalar.input_gain.eval(y), x),
        ));
        worst[2] = worst[2].max(rel_err_scalar(
            scalar.running_cost.deriv(x),
            fd_scalar(|y| scalar.running_cost.eval(y), x),
        ));
        worst[3] = worst[3].max(rel_err_scalar(
            scalar.terminal_cost.deriv(x),
            fd_scalar(|y| scalar.terminal_cost.eval(y), x),
        ));
        worst[4] = worst[4].max(rel_err_scalar(
            (scalar.control_cost.gradient)(u),
            fd_scalar(|v| (scalar.control_cost.value)(v), u),
        ));
        worst[5] = worst[5].max(rel_err_scalar(
            (scalar.control_cost.curvature)(u),
            fd_scalar(|v| (scalar.control_cost.gradient)(v), u),
        ));
    }
    out.extend(
        [
            "scalar drift f_x",
            "scalar input gain g_x",
            "scalar running cost l_x",
            "scalar terminal cost φ_x",
            "scalar control cost R_u",
            "scalar control cost R_uu",
        ]
        .into_iter()
        .zip(worst),
    );
    out
}

/// Random symmetric positive definite matrix with eigenvalues up to ~`scale`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * 0.1 * scale
}

/// Optimal cost of `x_{k+1} = A x_k + B u_k` with stage cost
/// `dt(xᵀQx + uᵀRu)` and terminal `½xᵀS_f x`, by the discrete Riccati
/// recursion on `V_k(x) = xᵀP_k x`.
pub fn riccati_optimal_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_f: &DMatrix<f64>,
    dt: f64,
    horizon: usize,
    x0: &DVector<f64>,
) -> (f64, Vec<DMatrix<f64>>) {
    let mut p = s_f * 0.5;
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    for k in (0..horizon).rev() {
        let s = r * dt + b.transpose() * &p * b;
        let gain = s.clone().lu().solve(&(b.transpose() * &p * a)).unwrap();
        p = q * dt + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        p = (&p + p.transpose()) * 0.5;
        gains[k] = gain;
    }
    ((x0.transpose() * &p * x0)[(0, 0)], gains)
}

/// Cartpole accelerations from the Lagrangian mass-matrix form, with the pole
/// tip at `(p − l sin θ, l cos θ)`:
/// `[[m_c+m_p, −m_p l cos θ], [−cos θ, l]]·[p̈; θ̈] = [F − m_p l sin θ·θ̇²; g sin θ]`.
pub fn cartpole_mass_matrix_accel(model: &CartpoleModel, x: &DVector<f64>, force: f64) -> (f64, f64) {
    let (s, c) = x[2].sin_cos();
    let w = x[3];
    let (mc, mp, l, g) = (model.cart_mass, model.pole_mass, model.pole_length, model.gravity);
    let mass = nalgebra::Matrix2::new(mc + mp, -mp * l * c, -c, l);
    let rhs = nalgebra::Vector2::new(force - mp * l * s * w * w, g * s);
    let acc = mass.lu().solve(&rhs).unwrap();
    (acc[0], acc[1])
}
