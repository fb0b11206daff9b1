//! Scalar optimal control through the characteristic ODEs of the HJB equation.
//!
//! For `ẋ = f(x) + g(x)u` and `J = φ(x(t_f)) + ∫ l(x) + R(u) dt` with `R`
//! strictly convex, stationarity of the Hamiltonian gives `R_u(u) = −λg(x)`,
//! i.e. `u = Ψ(λg)` with `Ψ(z)` the unique root of `R_u(u) + z = 0`. The
//! closed-loop state/co-state pair
//!
//! ```text
//! ẋ = f + g Ψ(λg)
//! λ̇ = −l_x − λ f_x − λ g_x Ψ(λg)
//! ```
//!
//! is integrated backward from `(x_tf, φ_x(x_tf))`. Shooting on `x_tf` solves
//! the two-point boundary value problem; monotonicity of `x_tf ↦ x(0)` means a
//! single characteristic passes through a given `x0`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar function with its first derivative.
#[derive(Clone)]
pub struct ScalarFn {
    pub value: Func,
    pub derivative: Func,
}

impl ScalarFn {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    /// `a·x`.
    pub fn linear(a: f64) -> Self {
        Self::new(move |x| a * x, move |_| a)
    }

    /// `w·x²`.
    pub fn square(w: f64) -> Self {
        Self::new(move |x| w * x * x, move |x| 2.0 * w * x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }
}

/// Strictly convex control cost `R(u)` with `R_u` and `R_uu > 0`.
#[derive(Clone)]
pub struct ControlCost {
    pub value: Func,
    pub gradient: Func,
    pub curvature: Func,
}

impl ControlCost {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64) -> f64 + Send + Sync + 'static,
        curvature: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            curvature: Arc::new(curvature),
        }
    }

    /// `R(u) = ½ r u²`.
    pub fn quadratic(r: f64) -> Self {
        Self::new(move |u| 0.5 * r * u * u, move |u| r * u, move |_| r)
    }
}

/// One-dimensional control-affine problem.
#[derive(Clone)]
pub struct ScalarSystem {
    pub drift: ScalarFn,
    pub input_gain: ScalarFn,
    pub running_cost: ScalarFn,
    pub terminal_cost: ScalarFn,
    pub control_cost: ControlCost,
}

impl ScalarSystem {
    /// `ẋ = ax + bu`, `l = qx²`, `R = ½ru²`, `φ = ½s_f x²`.
    pub fn lqr(a: f64, b: f64, q: f64, r: f64, s_f: f64) -> Self {
        Self {
            drift: ScalarFn::linear(a),
            input_gain: ScalarFn::constant(b),
            running_cost: ScalarFn::square(q),
            terminal_cost: ScalarFn::square(0.5 * s_f),
            control_cost: ControlCost::quadratic(r),
        }
    }

    /// `ẋ = sin x + u`, `l = qx²`, `R = r u²`, `φ = ½s_f x²`.
    pub fn sine(q: f64, r: f64, s_f: f64) -> Self {
        Self {
            drift: ScalarFn::new(f64::sin, f64::cos),
            input_gain: ScalarFn::constant(1.0),
            running_cost: ScalarFn::square(q),
            terminal_cost: ScalarFn::square(0.5 * s_f),
            control_cost: ControlCost::quadratic(2.0 * r),
        }
    }

    /// `(ẋ, λ̇)` on the characteristic through `(x, λ)`.
    fn rhs(&self, x: f64, lambda: f64) -> Result<(f64, f64)> {
        let g = self.input_gain.eval(x);
        let u = psi(self, lambda * g)?;
        let xdot = self.drift.eval(x) + g * u;
        let ldot = -self.running_cost.deriv(x)
            - lambda * self.drift.deriv(x)
            - lambda * self.input_gain.deriv(x) * u;
        Ok((xdot, ldot))
    }

    /// `R_u(u) + λ g(x)`, zero along every characteristic.
    pub fn stationarity(&self, x: f64, lambda: f64, u: f64) -> f64 {
        (self.control_cost.gradient)(u) + lambda * self.input_gain.eval(x)
    }
}

const PSI_MAX_MAGNITUDE: f64 = 1e150;

/// The unique `u` with `R_u(u) = −z`, by Newton's method safeguarded with a
/// bisection bracket.
pub fn psi(sys: &ScalarSystem, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("non-finite argument {z}")));
    }
    let grad = |u: f64| (sys.control_cost.gradient)(u) + z;
    let curv = &sys.control_cost.curvature;

    let mut lo = -1.0;
    while grad(lo) > 0.0 {
        lo *= 2.0;
        if lo.abs() > PSI_MAX_MAGNITUDE {
            return Err(Error::Domain(format!("{z} is outside the range of −R_u")));
        }
    }
    let mut hi = 1.0;
    while grad(hi) < 0.0 {
        hi *= 2.0;
        if hi > PSI_MAX_MAGNITUDE {
            return Err(Error::Domain(format!("{z} is outside the range of −R_u")));
        }
    }

    let tol = 1e-12 * z.abs().max(1.0);
    let mut u = 0.0_f64.clamp(lo, hi);
    for _ in 0..400 {
        let r = grad(u);
        if r.abs() <= tol {
            return Ok(u);
        }
        if r > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let h = curv(u);
        let newton = u - r / h;
        u = if h > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * u.abs().max(f64::MIN_POSITIVE) {
            return Ok(u);
        }
    }
    Ok(u)
}

/// Dense samples of one characteristic on `[0, t_f]`, ascending in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub costates: Vec<f64>,
    pub controls: Vec<f64>,
}

impl CharacteristicPath {
    pub fn initial_state(&self) -> f64 {
        self.states[0]
    }

    pub fn initial_costate(&self) -> f64 {
        self.costates[0]
    }

    /// Largest `|R_u(u) + λg(x)|` over the samples.
    pub fn max_stationarity(&self, sys: &ScalarSystem) -> f64 {
        (0..self.times.len())
            .map(|i| sys.stationarity(self.states[i], self.costates[i], self.controls[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest `R_uu(u)` over the samples; positive whenever the Hamiltonian
    /// is strictly convex in `u` along the path.
    pub fn min_control_curvature(&self, sys: &ScalarSystem) -> f64 {
        self.controls
            .iter()
            .map(|&u| (sys.control_cost.curvature)(u))
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_horizon(t_f: f64, dt_int: f64) -> Result<usize> {
    if !(t_f > 0.0 && dt_int > 0.0 && t_f.is_finite()) {
        return Err(Error::InvalidInput("horizon and integration step must be positive".into()));
    }
    Ok(((t_f / dt_int).round() as usize).max(1))
}

/// Integrates the characteristic ODEs backward from `(x_tf, φ_x(x_tf))` with
/// fixed-step RK4.
pub fn integrate_characteristics_backward(
    sys: &ScalarSystem,
    x_tf: f64,
    t_f: f64,
    dt_int: f64,
) -> Result<CharacteristicPath> {
    let steps = check_horizon(t_f, dt_int)?;
    let h = t_f / steps as f64;
    let mut x = x_tf;
    let mut lambda = sys.terminal_cost.deriv(x_tf);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut costates = Vec::with_capacity(steps + 1);
    times.push(t_f);
    states.push(x);
    costates.push(lambda);

    let fail = |i: usize, reason: String| Error::IntegrationFailure {
        time: t_f - i as f64 * h,
        reason,
    };
    for i in 0..steps {
        let stage = |x: f64, l: f64| sys.rhs(x, l).map_err(|e| fail(i, e.to_string()));
        let (k1x, k1l) = stage(x, lambda)?;
        let (k2x, k2l) = stage(x - 0.5 * h * k1x, lambda - 0.5 * h * k1l)?;
        let (k3x, k3l) = stage(x - 0.5 * h * k2x, lambda - 0.5 * h * k2l)?;
        let (k4x, k4l) = stage(x - h * k3x, lambda - h * k3l)?;
        x -= h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        lambda -= h / 6.0 * (k1l + 2.0 * k2l + 2.0 * k3l + k4l);
        if !(x.is_finite() && lambda.is_finite()) {
            return Err(fail(i + 1, "non-finite state or co-state".into()));
        }
        times.push(if i + 1 == steps { 0.0 } else { t_f - (i + 1) as f64 * h });
        states.push(x);
        costates.push(lambda);
    }

    times.reverse();
    states.reverse();
    costates.reverse();
    let controls = states
        .iter()
        .zip(&costates)
        .map(|(&x, &l)| psi(sys, l * sys.input_gain.eval(x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CharacteristicPath {
        times,
        states,
        costates,
        controls,
    })
}

/// Search interval and resolution for the terminal-state root find.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    pub half_width: f64,
    pub scan_points: usize,
    pub bisection_tol: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            scan_points: 201,
            bisection_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingSolution {
    pub path: CharacteristicPath,
    pub terminal_state: f64,
    /// Every terminal state whose characteristic reaches `x0`, one per bracket.
    pub roots: Vec<f64>,
}

impl ShootingSolution {
    pub fn unique(&self) -> bool {
        self.roots.len() == 1
    }
}

/// Finds `x_tf` whose backward characteristic lands on `x0` at `t = 0`.
pub fn solve_tpbvp_shooting(
    sys: &ScalarSystem,
    x0: f64,
    t_f: f64,
    dt_int: f64,
    options: &ShootingOptions,
) -> Result<ShootingSolution> {
    check_horizon(t_f, dt_int)?;
    if options.scan_points < 2 || !(options.half_width > 0.0) {
        return Err(Error::InvalidInput("shooting scan needs ≥ 2 points and a positive width".into()));
    }
    let (lo, hi) = (x0 - options.half_width, x0 + options.half_width);
    let miss = |x_tf: f64| -> Option<f64> {
        integrate_characteristics_backward(sys, x_tf, t_f, dt_int)
            .ok()
            .map(|p| p.initial_state() - x0)
    };
    let grid: Vec<f64> = (0..options.scan_points)
        .map(|i| lo + (hi - lo) * i as f64 / (options.scan_points - 1) as f64)
        .collect();
    let values: Vec<Option<f64>> = grid.iter().map(|&x| miss(x)).collect();

    let tol = 1e-12 * (1.0 + x0.abs());
    let mut roots = Vec::new();
    for i in 0..grid.len() - 1 {
        let (Some(fa), Some(fb)) = (values[i], values[i + 1]) else {
            continue;
        };
        if fa == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if fa * fb >= 0.0 {
            if i + 2 == grid.len() && fb == 0.0 {
                roots.push(grid[i + 1]);
            }
            continue;
        }
        let (mut a, mut b, mut fa) = (grid[i], grid[i + 1], fa);
        let mut root = 0.5 * (a + b);
        for _ in 0..200 {
            root = 0.5 * (a + b);
            let Some(fm) = miss(root) else { break };
            if fm.abs() <= tol || (b - a) <= options.bisection_tol.min(1e-14 * (1.0 + root.abs())) {
                break;
            }
            if fa * fm < 0.0 {
                b = root;
            } else {
                a = root;
                fa = fm;
            }
        }
        roots.push(root);
    }

    let Some(&terminal_state) = roots.first() else {
        return Err(Error::NotFound { lo, hi });
    };
    let path = integrate_characteristics_backward(sys, terminal_state, t_f, dt_int)?;
    Ok(ShootingSolution {
        path,
        terminal_state,
        roots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessSample {
    pub terminal_state: f64,
    pub initial_state: f64,
    pub initial_costate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub samples: Vec<UniquenessSample>,
    /// Grid points whose backward integration failed, with the failure time.
    pub failures: Vec<(f64, f64)>,
    pub monotone: bool,
    /// Sign changes of `x(0) − x0` across consecutive samples.
    pub brackets: usize,
}

impl UniquenessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_tf,x0,lambda0\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                s.terminal_state, s.initial_state, s.initial_costate
            ));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "monotone: {}, brackets found: {}",
            if self.monotone { "yes" } else { "no" },
            self.brackets
        )
    }
}

/// Evaluates `x_tf ↦ (x(0), λ(0))` on `terminal_grid` and checks that the
/// state map is strictly monotone.
pub fn verify_uniqueness(
    sys: &ScalarSystem,
    x0: f64,
    t_f: f64,
    dt_int: f64,
    terminal_grid: &[f64],
) -> Result<UniquenessReport> {
    check_horizon(t_f, dt_int)?;
    let evaluated: Vec<(f64, Result<CharacteristicPath>)> = terminal_grid
        .par_iter()
        .map(|&x_tf| (x_tf, integrate_characteristics_backward(sys, x_tf, t_f, dt_int)))
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (x_tf, res) in evaluated {
        match res {
            Ok(p) => samples.push(UniquenessSample {
                terminal_state: x_tf,
                initial_state: p.initial_state(),
                initial_costate: p.initial_costate(),
            }),
            Err(Error::IntegrationFailure { time, .. }) => failures.push((x_tf, time)),
            Err(e) => return Err(e),
        }
    }
    samples.sort_by(|a, b| a.terminal_state.total_cmp(&b.terminal_state));

    let diffs: Vec<f64> = samples
        .windows(2)
        .map(|w| w[1].initial_state - w[0].initial_state)
        .collect();
    let monotone = diffs.iter().all(|&d| d > 0.0) || diffs.iter().all(|&d| d < 0.0);
    let brackets = samples
        .windows(2)
        .filter(|w| (w[0].initial_state - x0) * (w[1].initial_state - x0) < 0.0)
        .count();
    Ok(UniquenessReport {
        samples,
        failures,
        monotone,
        brackets,
    })
}
