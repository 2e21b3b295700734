use std::process::Command;

use proptest::prelude::*;

use robust_gp::gp::{Dataset, GPModel};
use robust_gp::harness::{self, output, violation_rate, ExperimentConfig, ExperimentKind, Method, MixtureModel};
use robust_gp::hyper::{PosteriorSampleSet, SamplerConfig};
use robust_gp::kernels::{HyperVector, KernelFamily, KernelSpec};

fn small_sampler() -> SamplerConfig {
    SamplerConfig {
        chains: 2,
        steps: 1500,
        burn_in: 500,
        thinning: 1,
        seed: 0,
    }
}

fn small_study() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::SampleStudy);
    cfg.repetitions = 3;
    cfg.train_sizes = vec![2, 5];
    cfg.sample_study.grid_size = 30;
    cfg.sampler = small_sampler();
    cfg.restarts = 3;
    cfg.fullbayes_max_samples = 20;
    cfg
}

proptest! {
    #[test]
    fn violation_rate_permutation_invariant(
        pts in prop::collection::vec((-3.0..3.0f64, 0.0..2.0f64, -3.0..3.0f64), 1..40),
        seed in any::<u64>(),
    ) {
        let (m, s, y): (Vec<f64>, Vec<f64>, Vec<f64>) = pts.iter().fold((vec![], vec![], vec![]), |mut acc, p| {
            acc.0.push(p.0);
            acc.1.push(p.1);
            acc.2.push(p.2);
            acc
        });
        let r = violation_rate(&m, &s, 2.0, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let mut idx: Vec<usize> = (0..m.len()).collect();
        use rand::{seq::SliceRandom, SeedableRng};
        idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let p = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        prop_assert_eq!(violation_rate(&p(&m), &p(&s), 2.0, &p(&y)).unwrap(), r);
    }

    #[test]
    fn mixture_variance_dominates_average(ls in prop::collection::vec(0.2..3.0f64, 1..6), x in -1.0..4.0f64) {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.5]], &[0.3, -0.4, 1.0]).unwrap();
        let samples: Vec<HyperVector> = ls.iter().map(|l| HyperVector::new(vec![*l], 1.0 + l, 0.05).unwrap()).collect();
        let mix = MixtureModel::new(&PosteriorSampleSet::from_samples(samples.clone()), &data, KernelFamily::SquaredExponential, 100).unwrap();
        let (_, v) = mix.predict(&[x]).unwrap();
        let avg = samples
            .iter()
            .map(|h| GPModel::fit(KernelSpec::new(KernelFamily::SquaredExponential, h.clone()), data.clone()).unwrap().variance(&[x]).unwrap())
            .sum::<f64>()
            / samples.len() as f64;
        prop_assert!(v >= avg - 1e-12);
    }
}

#[test]
fn identical_samples_give_component_variance() {
    let data = Dataset::from_rows(&[vec![0.0], vec![1.0]], &[0.3, -0.4]).unwrap();
    let h = HyperVector::new(vec![0.9], 1.2, 0.05).unwrap();
    let mix = MixtureModel::new(&PosteriorSampleSet::from_samples(vec![h.clone(); 4]), &data, KernelFamily::SquaredExponential, 10).unwrap();
    let gp = GPModel::fit(KernelSpec::new(KernelFamily::SquaredExponential, h), data).unwrap();
    let (m, v) = mix.predict(&[0.4]).unwrap();
    let (m0, v0) = gp.predict(&[0.4]).unwrap();
    assert!((m - m0).abs() < 1e-12 && (v - v0).abs() < 1e-12);
}

#[test]
fn sample_study_is_deterministic_and_complete() {
    let cfg = small_study();
    let a = harness::run_sample_study(&cfg).unwrap();
    let b = harness::run_sample_study(&cfg).unwrap();
    assert_eq!(a.rows.len(), 3 * 2 * 3);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!((ra.method, ra.train_size, ra.repetition, ra.violation_rate), (rb.method, rb.train_size, rb.repetition, rb.violation_rate));
    }
    for m in Method::ALL {
        for n in [2, 5] {
            assert_eq!(a.rows.iter().filter(|r| r.method == m && r.train_size == n).count(), 3);
        }
    }
    assert_eq!(a.pairs.len(), 6);
}

#[test]
fn interpolation_limit_robust_has_no_violations() {
    let mut cfg = small_study();
    cfg.sample_study.grid_size = 12;
    cfg.train_sizes = vec![12];
    cfg.prior = harness::PriorSpec::Bounds(harness::PriorBounds {
        lengthscale: [0.5, 2.0],
        signal_variance: [0.5, 2.0],
        noise_variance: [1e-8, 1e-7],
    });
    let out = harness::run_sample_study(&cfg).unwrap();
    // residuals and posterior std both shrink with the noise, so only the
    // envelope keeps a margin
    assert_eq!(out.mean_rate(Method::Robust), 0.0);
}

#[test]
fn benchmark_on_csv_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::ViolationBenchmark);
    cfg.synthetic.points = 120;
    let data = harness::synthetic_dataset(&cfg.synthetic, cfg.kernel, 5).unwrap();
    let path = dir.path().join("data.csv");
    harness::write_dataset_csv(&data, &path).unwrap();
    cfg.dataset_path = Some(path);
    cfg.repetitions = 2;
    cfg.train_sizes = vec![30];
    cfg.sampler = small_sampler();
    cfg.restarts = 3;
    cfg.fullbayes_max_samples = 20;
    let loaded = harness::benchmark_dataset(&cfg).unwrap();
    assert_eq!(loaded.len(), 120);
    let out = harness::run_violation_benchmark(&cfg, &loaded).unwrap();
    assert_eq!(out.rows.len(), 6);
    output::write_results(dir.path(), &out.rows).unwrap();
    output::write_bounding_pairs(dir.path(), &out.pairs).unwrap();
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(text.starts_with("method,train_size,repetition,seed,violation_rate,wall_time\n"));
    cfg.train_sizes = vec![120];
    assert!(harness::run_violation_benchmark(&cfg, &loaded).is_err());
}

fn short_control() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults_for(ExperimentKind::ControlRun);
    cfg.control.duration = 1.0;
    cfg.control.initial_states = 3;
    cfg.sampler = small_sampler();
    cfg.restarts = 3;
    cfg.fullbayes_max_samples = 10;
    cfg
}

#[test]
fn control_summary_is_byte_identical() {
    let cfg = short_control();
    let mut texts = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = harness::run_control_experiment(&cfg).unwrap();
        assert_eq!(out.runs.len(), 9);
        output::write_control(dir.path(), &out, 10).unwrap();
        assert_eq!(std::fs::read_dir(dir.path().join("trajectories")).unwrap().count(), 9);
        texts.push(std::fs::read(dir.path().join("control_summary.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn cli_exit_codes_and_outputs() {
    let bin = env!("CARGO_BIN_EXE_robust-gp");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "delta = 2.0\n").unwrap();
    let st = Command::new(bin).args(["sample-study", "--config"]).arg(&cfg_path).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let st = Command::new(bin).args(["benchmark", "--config"]).arg(dir.path().join("missing.toml")).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let good = dir.path().join("good.toml");
    std::fs::write(
        &good,
        "train_sizes = [3]\nrestarts = 2\nfullbayes_max_samples = 10\n[sampler]\nchains = 2\nsteps = 1500\nburn_in = 500\nthinning = 1\n[sample_study]\ngrid_size = 20\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let st = Command::new(bin).args(["sample-study", "--reps", "2", "--seed", "9", "--config"]).arg(&good).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    for f in ["results.csv", "bounding_pairs.csv", "run_manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(out.join("run_manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 9") && manifest.contains("repetitions = 2"));
}
