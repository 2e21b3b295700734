//! Strict-feedback systems, GP-based command-filtered backstepping and a
//! fixed-step RK4 simulator.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, GPModel};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_DURATION: f64 = 10.0;
pub const DEFAULT_FILTER_BANDWIDTH: f64 = 100.0;
pub const DEFAULT_GAIN_FLOOR: f64 = 1e-3;
pub const DIVERGENCE_NORM: f64 = 1e6;
pub const SINGULAR_GAIN: f64 = 1e-9;

/// Scalar function of the leading states `x[..=i]`.
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `ẋ_i = f_i(x_{1..i}) + g_i(x_{1..i}) x_{i+1}` for `i < m`, with `u` in
/// place of `x_{m+1}`.
#[derive(Clone)]
pub struct StrictFeedbackSystem {
    pub f_true: Vec<StateFn>,
    pub g: Vec<StateFn>,
}

impl StrictFeedbackSystem {
    pub fn new(f_true: Vec<StateFn>, g: Vec<StateFn>) -> Result<Self> {
        if f_true.is_empty() || f_true.len() != g.len() {
            return Err(Error::Input("need one f and one g per subsystem".into()));
        }
        Ok(StrictFeedbackSystem { f_true, g })
    }

    pub fn m(&self) -> usize {
        self.f_true.len()
    }

    pub fn state_dim(&self) -> usize {
        self.m()
    }

    pub fn f(&self, i: usize, x: &[f64]) -> f64 {
        (self.f_true[i])(&x[..=i])
    }

    pub fn gain(&self, i: usize, x: &[f64]) -> f64 {
        (self.g[i])(&x[..=i])
    }

    pub fn dynamics(&self, x: &[f64], u: f64) -> Vec<f64> {
        let m = self.m();
        (0..m)
            .map(|i| {
                let next = if i + 1 < m { x[i + 1] } else { u };
                self.f(i, x) + self.gain(i, x) * next
            })
            .collect()
    }
}

/// One-link manipulator with motor dynamics, state `(φ, φ̇, τ)`.
pub fn manipulator_system() -> StrictFeedbackSystem {
    let (d, b, g, m, h, z) = (1.0, 1.0, 10.0, 0.05, 0.5, 10.0);
    let f: Vec<StateFn> = vec![
        Arc::new(|_: &[f64]| 0.0),
        Arc::new(move |x: &[f64]| (-b * x[1] - g * x[0].sin()) / d),
        Arc::new(move |x: &[f64]| -m - h * x[2] - z * x[1]),
    ];
    let gs: Vec<StateFn> = vec![Arc::new(|_: &[f64]| 1.0), Arc::new(move |_: &[f64]| 1.0 / d), Arc::new(|_: &[f64]| 1.0)];
    StrictFeedbackSystem { f_true: f, g: gs }
}

/// Anything that yields a mean and variance at a state prefix.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64)>;
}

impl Predictor for GPModel {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        GPModel::predict(self, x)
    }
}

/// Returns the true function with zero variance.
pub struct ExactModel(pub StateFn);

impl Predictor for ExactModel {
    fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok(((self.0)(x), 0.0))
    }
}

pub struct ZeroModel;

impl Predictor for ZeroModel {
    fn predict(&self, _: &[f64]) -> Result<(f64, f64)> {
        Ok((0.0, 0.0))
    }
}

/// Desired trajectory for the first state; later references come from the
/// command filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Origin,
    Sinusoid { amplitude: f64, frequency: f64 },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Origin
    }
}

impl Reference {
    /// `(x_{1,d}(t), ẋ_{1,d}(t))`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        match *self {
            Reference::Origin => (0.0, 0.0),
            Reference::Sinusoid { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                (amplitude * (w * t).sin(), amplitude * w * (w * t).cos())
            }
        }
    }
}

#[derive(Clone)]
pub struct BacksteppingController {
    pub models: Vec<Arc<dyn Predictor>>,
    pub envelopes: Vec<Arc<dyn Predictor>>,
    pub beta_bars: Vec<f64>,
    pub xi_des: f64,
    pub filter_bandwidth: f64,
    pub gain_floor: f64,
}

impl BacksteppingController {
    pub fn new(models: Vec<Arc<dyn Predictor>>, envelopes: Vec<Arc<dyn Predictor>>, beta_bars: Vec<f64>, xi_des: f64, filter_bandwidth: f64) -> Result<Self> {
        if models.len() != envelopes.len() || models.len() != beta_bars.len() || models.is_empty() {
            return Err(Error::Input("controller needs one model, envelope and beta per subsystem".into()));
        }
        if !(xi_des > 0.0) {
            return Err(Error::Input(format!("desired error bound must be positive, got {xi_des}")));
        }
        if !(filter_bandwidth > 0.0) {
            return Err(Error::Input(format!("filter bandwidth must be positive, got {filter_bandwidth}")));
        }
        if beta_bars.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Input("beta values must be nonnegative".into()));
        }
        Ok(BacksteppingController {
            models,
            envelopes,
            beta_bars,
            xi_des,
            filter_bandwidth,
            gain_floor: DEFAULT_GAIN_FLOOR,
        })
    }

    pub fn m(&self) -> usize {
        self.models.len()
    }
}

/// `C(x) = (1/ξ) √(Σ_j β̄_j σ²_j(x))`, without the floor.
pub fn adaptive_gain(ctrl: &BacksteppingController, x: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (j, (env, beta)) in ctrl.envelopes.iter().zip(&ctrl.beta_bars).enumerate() {
        let (_, v) = env.predict(&x[..=j])?;
        acc += beta * v.max(0.0);
    }
    Ok(acc.sqrt() / ctrl.xi_des)
}

/// Output of one evaluation of the control law.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub u: f64,
    /// Unfiltered virtual inputs `α_i`, `i = 1..m−1`; the filters track these.
    pub alphas: Vec<f64>,
    /// Tracking errors `e_i = x_i − x_{i,d}`.
    pub errors: Vec<f64>,
    pub gain: f64,
}

/// Evaluates the backstepping recursion at state `x`. `reference` is
/// `(x_{1,d}, ẋ_{1,d})` and `filters` holds `x_{i,d}` for `i = 2..m`.
pub fn backstepping_input(ctrl: &BacksteppingController, system: &StrictFeedbackSystem, x: &[f64], reference: (f64, f64), filters: &[f64]) -> Result<ControlStep> {
    let m = system.m();
    if x.len() != m {
        return Err(Error::Dimension { expected: m, got: x.len() });
    }
    if ctrl.m() != m || filters.len() + 1 != m {
        return Err(Error::Dimension {
            expected: m,
            got: ctrl.m().min(filters.len() + 1),
        });
    }
    let c = adaptive_gain(ctrl, x)?.max(ctrl.gain_floor);
    let mut errors = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m - 1);
    let (mut xd, mut xd_dot) = reference;
    let mut prev_coupling = 0.0;
    let mut u = 0.0;
    for i in 0..m {
        let e = x[i] - xd;
        errors.push(e);
        let gi = system.gain(i, x);
        if gi.abs() < SINGULAR_GAIN {
            return Err(Error::SingularGain { index: i, value: gi });
        }
        let (mu, _) = ctrl.models[i].predict(&x[..=i])?;
        let alpha = (-mu + xd_dot - c * e - prev_coupling) / gi;
        prev_coupling = gi * e;
        if i + 1 < m {
            alphas.push(alpha);
            xd = filters[i];
            xd_dot = ctrl.filter_bandwidth * (alpha - xd);
        } else {
            u = alpha;
        }
    }
    Ok(ControlStep { u, alphas, errors, gain: c })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
    pub error_norms: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, x: &[f64], u: f64, e: f64) {
        self.times.push(t);
        self.states.push(x.to_vec());
        self.inputs.push(u);
        self.error_norms.push(e);
    }

    /// Largest error norm at times strictly after `t`.
    pub fn max_error_after(&self, t: f64) -> f64 {
        self.times.iter().zip(&self.error_norms).filter(|(s, _)| **s > t).map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend((1..=m).map(|i| format!("x{i}")));
        header.push("u".into());
        header.push("error_norm".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.push(self.inputs[k].to_string());
            row.push(self.error_norms[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A failed simulation together with everything recorded before the failure.
#[derive(Debug)]
pub struct SimulationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl From<SimulationFailure> for Error {
    fn from(f: SimulationFailure) -> Self {
        f.error
    }
}

pub type SimResult = std::result::Result<Trajectory, SimulationFailure>;

pub fn rk4_step<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], dt: f64) -> Vec<f64> {
    let shift = |base: &[f64], k: &[f64], s: f64| base.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<f64>>();
    let k1 = f(x);
    let k2 = f(&shift(x, &k1, dt / 2.0));
    let k3 = f(&shift(x, &k2, dt / 2.0));
    let k4 = f(&shift(x, &k3, dt));
    (0..x.len()).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn step_count(duration: f64, dt: f64) -> std::result::Result<usize, Error> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Input(format!("need dt > 0 and duration >= 0, got dt={dt}, duration={duration}")));
    }
    Ok((duration / dt).round() as usize)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Integrates the plant with `u = input(t, x)` held over each step. The
/// recorded error norm is `‖x‖`.
pub fn simulate_open_loop<F: FnMut(f64, &[f64]) -> f64>(system: &StrictFeedbackSystem, mut input: F, x0: &[f64], duration: f64, dt: f64) -> SimResult {
    let mut traj = Trajectory::default();
    let n = step_count(duration, dt).map_err(|error| SimulationFailure {
        error,
        partial: Trajectory::default(),
    })?;
    let mut x = x0.to_vec();
    for k in 0..=n {
        let t = k as f64 * dt;
        let u = input(t, &x);
        traj.push(t, &x, u, norm(&x));
        if k == n {
            break;
        }
        x = rk4_step(|s| system.dynamics(s, u), &x, dt);
        if let Some(error) = divergence(&x, t + dt) {
            return Err(SimulationFailure { error, partial: traj });
        }
    }
    Ok(traj)
}

fn divergence(x: &[f64], t: f64) -> Option<Error> {
    let nx = norm(x);
    if !nx.is_finite() || nx > DIVERGENCE_NORM {
        Some(Error::Diverged { time: t, norm: nx })
    } else {
        None
    }
}

/// Closed-loop simulation under the backstepping controller. Filters start
/// at the virtual inputs evaluated at `x0`.
pub fn simulate(system: &StrictFeedbackSystem, ctrl: &BacksteppingController, reference: Reference, x0: &[f64], duration: f64, dt: f64) -> SimResult {
    let mut traj = Trajectory::default();
    let fail = |error: Error, partial: Trajectory| SimulationFailure { error, partial };
    let n = match step_count(duration, dt) {
        Ok(n) => n,
        Err(e) => return Err(fail(e, traj)),
    };
    let m = system.m();
    if x0.len() != m {
        return Err(fail(Error::Dimension { expected: m, got: x0.len() }, traj));
    }
    let mut x = x0.to_vec();

    // initialize each filter at its virtual input, one level at a time
    let mut filters = vec![0.0; m - 1];
    for i in 0..m - 1 {
        match backstepping_input(ctrl, system, &x, reference.at(0.0), &filters) {
            Ok(step) => filters[i] = step.alphas[i],
            Err(e) => return Err(fail(e, traj)),
        }
    }

    let decay = (-ctrl.filter_bandwidth * dt).exp();
    for k in 0..=n {
        let t = k as f64 * dt;
        let step = match backstepping_input(ctrl, system, &x, reference.at(t), &filters) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, traj)),
        };
        traj.push(t, &x, step.u, norm(&step.errors));
        if k == n {
            break;
        }
        let u = step.u;
        x = rk4_step(|s| system.dynamics(s, u), &x, dt);
        for (z, a) in filters.iter_mut().zip(&step.alphas) {
            *z = a + (*z - a) * decay;
        }
        if let Some(error) = divergence(&x, t + dt) {
            return Err(fail(error, traj));
        }
    }
    Ok(traj)
}

/// Open-loop excitation `u(t) = A sin(2π f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub amplitude: f64,
    pub frequency: f64,
    pub duration: f64,
}

impl Default for Excitation {
    fn default() -> Self {
        Excitation {
            amplitude: 1.0,
            frequency: 0.5,
            duration: DEFAULT_DURATION,
        }
    }
}

/// Runs the plant from rest under `excitation`, picks `n` distinct time
/// steps uniformly at random and records `y_i = f_i(x) + ε` for every
/// subsystem. Dataset `i` has the first `i + 1` states as inputs.
pub fn collect_training_data(system: &StrictFeedbackSystem, excitation: &Excitation, n: usize, noise_std: f64, seed: u64, dt: f64) -> Result<Vec<Dataset>> {
    if n == 0 {
        return Err(Error::Input("need at least one training point".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Input(format!("noise std must be nonnegative, got {noise_std}")));
    }
    let w = 2.0 * std::f64::consts::PI * excitation.frequency;
    let traj = simulate_open_loop(system, |t, _| excitation.amplitude * (w * t).sin(), &vec![0.0; system.m()], excitation.duration, dt)?;
    if traj.len() < n {
        return Err(Error::Input(format!("excitation has {} steps, fewer than {n} samples", traj.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, traj.len(), n).into_vec();
    idx.sort_unstable();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Input(e.to_string()))?;
    let m = system.m();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&k| traj.states[k][..=i].to_vec()).collect();
        let y: Vec<f64> = idx.iter().map(|&k| system.f(i, &traj.states[k]) + noise.sample(&mut rng)).collect();
        out.push(Dataset::from_rows(&rows, &y)?);
    }
    Ok(out)
}

/// Initial states drawn from `N(0, std² I)`.
pub fn random_initial_states(m: usize, count: usize, std: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..m).map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Fixed(f64, f64);
    impl Predictor for Fixed {
        fn predict(&self, _: &[f64]) -> Result<(f64, f64)> {
            Ok((self.0, self.1))
        }
    }

    fn arc(p: impl Predictor + 'static) -> Arc<dyn Predictor> {
        Arc::new(p)
    }

    fn constant(c: f64) -> StateFn {
        Arc::new(move |_: &[f64]| c)
    }

    #[test]
    fn gain_arithmetic() {
        let ctrl = BacksteppingController::new(vec![arc(ZeroModel)], vec![arc(Fixed(0.0, 1.0))], vec![4.0], 1.0, 100.0).unwrap();
        assert_eq!(adaptive_gain(&ctrl, &[0.3]).unwrap(), 2.0);
        let half = BacksteppingController { xi_des: 0.5, ..ctrl.clone() };
        assert_eq!(adaptive_gain(&half, &[0.3]).unwrap(), 4.0);
        let zero = BacksteppingController::new(vec![arc(ZeroModel)], vec![arc(ZeroModel)], vec![4.0], 1.0, 100.0).unwrap();
        assert_eq!(adaptive_gain(&zero, &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn single_subsystem_law() {
        let sys = StrictFeedbackSystem::new(vec![constant(0.0)], vec![constant(2.0)]).unwrap();
        let ctrl = BacksteppingController::new(vec![arc(Fixed(0.7, 0.0))], vec![arc(Fixed(0.0, 1.0))], vec![4.0], 1.0, 100.0).unwrap();
        let s = backstepping_input(&ctrl, &sys, &[0.5], (0.1, 0.3), &[]).unwrap();
        // C = 2, e = 0.4
        assert_relative_eq!(s.u, (-0.7 + 0.3 - 2.0 * 0.4) / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn two_subsystem_hand_evaluation() {
        let sys = StrictFeedbackSystem::new(vec![constant(0.0), constant(0.0)], vec![Arc::new(|x: &[f64]| 1.0 + x[0] * x[0]), constant(0.5)]).unwrap();
        let ctrl = BacksteppingController::new(vec![arc(Fixed(0.2, 0.0)), arc(Fixed(-0.4, 0.0))], vec![arc(Fixed(0.0, 0.25)), arc(Fixed(0.0, 1.0))], vec![4.0, 1.0], 2.0, 10.0).unwrap();
        let x = [0.5, -1.0];
        let z = 0.3;
        let s = backstepping_input(&ctrl, &sys, &x, (0.0, 0.0), &[z]).unwrap();
        let c = (4.0 * 0.25 + 1.0f64).sqrt() / 2.0;
        let g1 = 1.25;
        let e1 = 0.5;
        let a1 = (-0.2 - c * e1) / g1;
        let e2 = -1.0 - z;
        let xd2_dot = 10.0 * (a1 - z);
        let u = (0.4 + xd2_dot - c * e2 - g1 * e1) / 0.5;
        assert!((s.u - u).abs() < 1e-12);
        assert!((s.alphas[0] - a1).abs() < 1e-12);
        assert_eq!(s.errors, vec![e1, e2]);
    }

    #[test]
    fn zero_error_reduction() {
        let sys = manipulator_system();
        let ctrl = BacksteppingController::new(vec![arc(ZeroModel); 3], vec![arc(ZeroModel); 3], vec![4.0; 3], 1.0, 100.0).unwrap();
        let s = backstepping_input(&ctrl, &sys, &[0.0, 0.2, -0.1], (0.0, 0.0), &[0.2, -0.1]).unwrap();
        // e = 0; only the filter derivative remains
        let a1 = 0.0;
        let a2 = (100.0 * (a1 - 0.2)) / 1.0;
        assert_relative_eq!(s.u, 100.0 * (a2 - -0.1), max_relative = 1e-12);
    }

    #[test]
    fn singular_gain_rejected() {
        let sys = StrictFeedbackSystem::new(vec![constant(0.0)], vec![constant(1e-12)]).unwrap();
        let ctrl = BacksteppingController::new(vec![arc(ZeroModel)], vec![arc(ZeroModel)], vec![1.0], 1.0, 100.0).unwrap();
        assert!(matches!(backstepping_input(&ctrl, &sys, &[1.0], (0.0, 0.0), &[]), Err(Error::SingularGain { .. })));
    }

    #[test]
    fn equilibrium_stays_put() {
        let sys = StrictFeedbackSystem::new(vec![constant(0.0), constant(0.0)], vec![Arc::new(|x: &[f64]| 2.0 + x[0].cos()), constant(1.0)]).unwrap();
        let traj = simulate_open_loop(&sys, |_, _| 0.0, &[0.0, 0.0], 1.0, 1e-2).unwrap();
        assert!(traj.states.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let sys = StrictFeedbackSystem::new(vec![Arc::new(|x: &[f64]| -x[0])], vec![constant(1.0)]).unwrap();
        let traj = simulate_open_loop(&sys, |_, _| 0.0, &[1.0], 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        assert!((traj.final_state().unwrap()[0] - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn divergence_returns_partial_trajectory() {
        let sys = StrictFeedbackSystem::new(vec![Arc::new(|x: &[f64]| 10.0 * x[0])], vec![constant(1.0)]).unwrap();
        let err = simulate_open_loop(&sys, |_, _| 0.0, &[1.0], 10.0, 1e-2).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { .. }));
        assert!(!err.partial.is_empty());
    }

    #[test]
    fn manipulator_values() {
        let sys = manipulator_system();
        assert_relative_eq!(sys.f(1, &[0.1, 0.0]), -10.0 * 0.1f64.sin(), max_relative = 1e-14);
        let tau = -0.05 / 0.5;
        assert_relative_eq!(sys.f(2, &[0.0, 0.0, tau]), 0.0, epsilon = 1e-15);
        assert_relative_eq!(sys.dynamics(&[0.0, 0.0, tau], 0.0)[1], -0.1, max_relative = 1e-14);
        for i in 0..3 {
            assert_eq!(sys.gain(i, &[0.3, -2.0, 5.0]), 1.0);
        }
    }

    #[test]
    fn training_data_noise_free_and_reproducible() {
        let sys = manipulator_system();
        let exc = Excitation::default();
        let a = collect_training_data(&sys, &exc, 1, 0.0, 3, 1e-2).unwrap();
        let x = a[2].row(0);
        assert_eq!(a[2].y[0], sys.f(2, &x));
        assert_eq!(a[1].dim(), 2);
        let b = collect_training_data(&sys, &exc, 10, 0.01, 9, 1e-2).unwrap();
        let c = collect_training_data(&sys, &exc, 10, 0.01, 9, 1e-2).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn exact_model_drives_error_to_zero() {
        let sys = manipulator_system();
        let models: Vec<Arc<dyn Predictor>> = sys.f_true.iter().map(|f| arc(ExactModel(f.clone()))).collect();
        let ctrl = BacksteppingController::new(models, vec![arc(ZeroModel); 3], vec![4.0; 3], 1.0, 100.0).unwrap();
        let ctrl = BacksteppingController { gain_floor: 2.0, ..ctrl };
        let traj = simulate(&sys, &ctrl, Reference::Origin, &[0.5, -0.3, 0.2], 10.0, 1e-3).unwrap();
        assert!(*traj.error_norms.last().unwrap() < 1e-2);
    }

    #[test]
    fn trajectory_csv_header() {
        let sys = StrictFeedbackSystem::new(vec![Arc::new(|x: &[f64]| -x[0])], vec![constant(1.0)]).unwrap();
        let traj = simulate_open_loop(&sys, |_, _| 0.0, &[1.0], 0.01, 1e-3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("time,x1,u,error_norm\n"));
        assert_eq!(s.lines().count(), 12);
    }
}
