mod common;

use octrl::characteristics::{
    integrate_characteristics_backward, psi, solve_tpbvp_shooting, verify_uniqueness, ControlCost, ScalarFn,
    ScalarSystem, ShootingOptions,
};
use rand::Rng;

/// Classic RK4 on a 2-vector ODE, forward in `t` from `t0` to `t1`.
fn rk4(f: impl Fn(f64, [f64; 2]) -> [f64; 2], y0: [f64; 2], t0: f64, t1: f64, steps: usize) -> [f64; 2] {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    let add = |y: [f64; 2], k: [f64; 2], s: f64| [y[0] + s * k[0], y[1] + s * k[1]];
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, add(y, k1, 0.5 * h));
        let k3 = f(t + 0.5 * h, add(y, k2, 0.5 * h));
        let k4 = f(t + h, add(y, k3, h));
        for j in 0..2 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

#[test]
fn lqr_costate_follows_the_riccati_solution() {
    let (a, b, q, r, s_f, t_f) = (0.5, 1.0, 1.0, 2.0, 3.0, 1.0);
    let sys = ScalarSystem::lqr(a, b, q, r, s_f);
    let path = integrate_characteristics_backward(&sys, 0.8, t_f, 1e-3).unwrap();
    // V = ½p x², λ = p x, ṗ = −2q − 2ap + b²p²/r, p(t_f) = s_f.
    let riccati = |_t: f64, y: [f64; 2]| [-2.0 * q - 2.0 * a * y[0] + b * b * y[0] * y[0] / r, 0.0];
    for i in (0..path.times.len()).step_by(100) {
        let t = path.times[i];
        let p = if t == t_f { s_f } else { rk4(riccati, [s_f, 0.0], t_f, t, 20_000)[0] };
        let lam = path.costates[i];
        assert!((lam - p * path.states[i]).abs() <= 1e-8 * lam.abs().max(1.0), "t = {t}: λ = {lam}, p·x = {}", p * path.states[i]);
    }
}

#[test]
fn backward_integration_is_fourth_order() {
    let sys = ScalarSystem::sine(1.0, 5.0, 2.0);
    let reference = integrate_characteristics_backward(&sys, 1.0, 2.0, 1e-4).unwrap();
    let err = |h: f64| {
        let p = integrate_characteristics_backward(&sys, 1.0, 2.0, h).unwrap();
        (p.initial_state() - reference.initial_state()).abs() + (p.initial_costate() - reference.initial_costate()).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((12.0..=20.0).contains(&ratio), "halving the step reduced the error by {ratio}");
}

#[test]
fn psi_inverts_a_non_quadratic_control_cost() {
    let mut sys = ScalarSystem::sine(1.0, 1.0, 0.0);
    sys.control_cost = ControlCost::new(f64::cosh, f64::sinh, f64::cosh);
    let mut r = common::rng(11);
    for _ in 0..200 {
        let z: f64 = r.random_range(-1e4..1e4);
        let u = psi(&sys, z).unwrap();
        assert!((u.sinh() + z).abs() <= 1e-12 * z.abs().max(1.0), "z = {z}");
        assert!((u + z.asinh()).abs() <= 1e-10 * (1.0 + u.abs()));
    }
}

#[test]
fn shooting_round_trip_on_the_sine_system() {
    let (q, r, s_f, x0, t_f) = (1.0, 5.0, 0.0, 2.0, 2.0);
    let sys = ScalarSystem::sine(q, r, s_f);
    let sol = solve_tpbvp_shooting(&sys, x0, t_f, 1e-3, &ShootingOptions::default()).unwrap();
    assert!(sol.unique(), "roots {:?}", sol.roots);
    assert!((sol.path.initial_state() - x0).abs() <= 1e-6);
    assert!(sol.path.max_stationarity(&sys) <= 1e-10);
    assert!(sol.path.min_control_curvature(&sys) > 0.0);

    // Integrate the minimum-principle system forward from (x0, λ(0)) with an
    // independent integrator; it must land on (x_tf, φ_x(x_tf)).
    let dyn_ = |_t: f64, y: [f64; 2]| {
        let u = -y[1] / (2.0 * r);
        [y[0].sin() + u, -2.0 * q * y[0] - y[1] * y[0].cos()]
    };
    let end = rk4(dyn_, [x0, sol.path.initial_costate()], 0.0, t_f, 20_000);
    assert!((end[0] - sol.terminal_state).abs() <= 1e-6, "{} vs {}", end[0], sol.terminal_state);
    assert!((end[1] - s_f * sol.terminal_state).abs() <= 1e-6);
}

#[test]
fn terminal_to_initial_map_is_strictly_monotone() {
    let sys = ScalarSystem::sine(1.0, 5.0, 0.0);
    let grid: Vec<f64> = (0..101).map(|i| -2.0 * std::f64::consts::PI + 4.0 * std::f64::consts::PI * i as f64 / 100.0).collect();
    let report = verify_uniqueness(&sys, 2.0, 2.0, 1e-3, &grid).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.samples.len(), 101);
    assert!(report.monotone);
    let increasing = report.samples.windows(2).all(|w| w[1].initial_state > w[0].initial_state);
    let decreasing = report.samples.windows(2).all(|w| w[1].initial_state < w[0].initial_state);
    assert!(increasing || decreasing);
    assert_eq!(report.brackets, 1);
}

#[test]
fn scalar_functions_report_their_own_derivatives() {
    let f = ScalarFn::new(|x| x.powi(3), |x| 3.0 * x * x);
    assert_eq!(f.eval(2.0), 8.0);
    assert_eq!(f.deriv(2.0), 12.0);
}
