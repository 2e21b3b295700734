use std::sync::Arc;

use proptest::prelude::*;

use robust_gp::control::{
    adaptive_gain, collect_training_data, manipulator_system, simulate, simulate_open_loop, BacksteppingController, Excitation, ExactModel, Predictor, Reference, StateFn,
    StrictFeedbackSystem, ZeroModel,
};
use robust_gp::error::Result;

struct Var(f64);

impl Predictor for Var {
    fn predict(&self, _: &[f64]) -> Result<(f64, f64)> {
        Ok((0.0, self.0))
    }
}

fn ctrl(vars: &[f64], betas: &[f64]) -> BacksteppingController {
    let m = vars.len();
    let env: Vec<Arc<dyn Predictor>> = vars.iter().map(|v| Arc::new(Var(*v)) as Arc<dyn Predictor>).collect();
    BacksteppingController::new(vec![Arc::new(ZeroModel) as Arc<dyn Predictor>; m], env, betas.to_vec(), 1.0, 100.0).unwrap()
}

proptest! {
    #[test]
    fn gain_monotone_in_beta_and_variance(
        vars in prop::collection::vec(0.0..5.0f64, 3),
        betas in prop::collection::vec(0.0..10.0f64, 3),
        k in 0usize..3,
        bump in 0.0..3.0f64,
    ) {
        let x = [0.1, 0.2, 0.3];
        let base = adaptive_gain(&ctrl(&vars, &betas), &x).unwrap();
        let mut v2 = vars.clone();
        v2[k] += bump;
        let mut b2 = betas.clone();
        b2[k] += bump;
        prop_assert!(adaptive_gain(&ctrl(&v2, &betas), &x).unwrap() >= base);
        prop_assert!(adaptive_gain(&ctrl(&vars, &b2), &x).unwrap() >= base);
    }

    #[test]
    fn gain_is_homogeneous_in_inverse_error_bound(v in 0.0..5.0f64, b in 0.1..10.0f64, xi in 0.1..4.0f64) {
        let mut c = ctrl(&[v], &[b]);
        let g1 = adaptive_gain(&c, &[0.0]).unwrap();
        c.xi_des = xi;
        prop_assert!((adaptive_gain(&c, &[0.0]).unwrap() - g1 / xi).abs() <= 1e-12 * (1.0 + g1));
    }
}

#[test]
fn rk4_error_shrinks_sixteenfold() {
    let sys = StrictFeedbackSystem::new(vec![Arc::new(|x: &[f64]| -x[0]) as StateFn], vec![Arc::new(|_: &[f64]| 1.0) as StateFn]).unwrap();
    let err = |dt: f64| (simulate_open_loop(&sys, |_, _| 0.0, &[1.0], 1.0, dt).unwrap().final_state().unwrap()[0] - (-1f64).exp()).abs();
    let r = err(0.2) / err(0.1);
    assert!(r > 12.0 && r < 20.0, "{r}");
}

#[test]
fn exact_model_error_norm_decays_monotonically() {
    let sys = manipulator_system();
    let models: Vec<Arc<dyn Predictor>> = sys.f_true.iter().map(|f| Arc::new(ExactModel(f.clone())) as Arc<dyn Predictor>).collect();
    let mut c = BacksteppingController::new(models, vec![Arc::new(ZeroModel) as Arc<dyn Predictor>; 3], vec![1.0; 3], 1.0, 1000.0).unwrap();
    c.gain_floor = 3.0;
    let traj = simulate(&sys, &c, Reference::Origin, &[0.4, -0.2, 0.3], 3.0, 1e-4).unwrap();
    // V = ½‖e‖² decreases up to the command-filter lag
    let worst = traj.error_norms.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < 1e-6, "largest increase {worst}");
    let (e0, e1) = (traj.error_norms[0], *traj.error_norms.last().unwrap());
    assert!(e1 < 1e-3 * e0);
}

#[test]
fn tracking_a_sinusoid_with_exact_model() {
    let sys = manipulator_system();
    let models: Vec<Arc<dyn Predictor>> = sys.f_true.iter().map(|f| Arc::new(ExactModel(f.clone())) as Arc<dyn Predictor>).collect();
    let mut c = BacksteppingController::new(models, vec![Arc::new(ZeroModel) as Arc<dyn Predictor>; 3], vec![1.0; 3], 1.0, 200.0).unwrap();
    c.gain_floor = 5.0;
    let r = Reference::Sinusoid { amplitude: 0.5, frequency: 0.2 };
    let traj = simulate(&sys, &c, r, &[0.0, 0.0, 0.0], 10.0, 1e-3).unwrap();
    let tail_err = traj.times.iter().zip(&traj.states).filter(|(t, _)| **t > 5.0).map(|(t, x)| (x[0] - r.at(*t).0).abs()).fold(0.0, f64::max);
    assert!(tail_err < 0.05, "{tail_err}");
}

#[test]
fn training_noise_has_requested_spread() {
    let sys = manipulator_system();
    let exc = Excitation::default();
    let mut res = Vec::new();
    for seed in 0..100 {
        let data = collect_training_data(&sys, &exc, 10, 0.01, seed, 1e-2).unwrap();
        for (i, d) in data.iter().enumerate() {
            for k in 0..d.len() {
                let mut x = d.row(k);
                x.resize(3, 0.0);
                res.push(d.y[k] - sys.f(i, &x));
            }
        }
    }
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.005..=0.02).contains(&sd), "{sd}");
}
