mod common;

use efp_core::efp::{
    efp_train, mixture_expectation, naive_efp_step, naive_efp_train, running_average_update, EfpConfig,
    MixtureHistory, RunningAverages,
};
use efp_core::raster::RenderConfig;
use efp_core::{Ensemble, FeatureFamily, LmcConfig, Problem, ScalarLoss};

fn toy(target: f64) -> Problem {
    Problem::new(
        vec![ScalarLoss::Squared { target }],
        FeatureFamily::Linear { weights: vec![1.0], dim: 1 },
        0.1,
        0.1,
    )
    .unwrap()
}

/// Fixed point of `H ↦ mean of the Gibbs measure of ℓ'(H)` for the 1-D toy,
/// iterated on the scalar Gaussian mean `-(H - y) / (2λ')`.
fn toy_fixed_point(y: f64, lambda_prime: f64) -> f64 {
    let mut h = 0.0;
    for _ in 0..10_000 {
        h = 0.9 * h + 0.1 * (-(h - y) / (2.0 * lambda_prime));
    }
    h
}

fn toy_cfg(outer_iters: usize) -> EfpConfig {
    EfpConfig {
        outer_step: 0.1,
        outer_iters,
        particles: 2000,
        lmc: LmcConfig::constant(0.05, 20, 1),
        init_scale: 1.0,
        seed: 2,
        diagnostics: None,
    }
}

#[test]
fn toy_runs_reach_scalar_fixed_point() {
    for y in [0.0, 1.0] {
        let oracle = toy_fixed_point(y, 0.1);
        let state = efp_train(&toy(y), &toy_cfg(500), &mut ()).unwrap();
        let h = state.averages.values[0];
        assert!((h - oracle).abs() <= 0.02, "target {y}: H={h}, oracle {oracle}");
    }
    assert!((toy_fixed_point(1.0, 0.1) - 0.833_333).abs() < 1e-6);
}

fn random_problem(seed: u64) -> Problem {
    let mut rng = common::rng(seed);
    let n = 6;
    Problem::new(
        vec![ScalarLoss::Squared { target: 0.2 }; n],
        FeatureFamily::Neurons { inputs: common::uniform_vec(&mut rng, n * 3, -1.0, 1.0), dim: 3 },
        0.05,
        0.05,
    )
    .unwrap()
}

#[test]
fn running_averages_equal_mixture_expectations() {
    for seed in 0..5u64 {
        let p = random_problem(seed);
        let mut rng = common::rng(100 + seed);
        let init = Ensemble::gaussian(40, 3, 1.0, seed).unwrap();
        let mut h = RunningAverages::from_ensemble(&p, &init);
        let mut hist = MixtureHistory::new(init);
        for t in 0..50 {
            let step = common::uniform(&mut rng, 0.0, 1.0);
            let gibbs = Ensemble::gaussian(40, 3, 0.5 + t as f64 * 0.02, 1000 * seed + t).unwrap();
            h = running_average_update(&h, &gibbs, step, &p);
            hist = naive_efp_step(&hist, gibbs, step).unwrap();
            for i in 0..p.n() {
                let brute = mixture_expectation(&hist, &p.features().term(i));
                assert!((h.values[i] - brute).abs() <= 1e-12, "seed {seed} t {t} i {i}");
            }
        }
    }
}

#[test]
fn memory_counts() {
    let p = toy(1.0);
    let mut cfg = toy_cfg(100);
    cfg.particles = 30;
    cfg.lmc.steps = 2;
    let state = efp_train(&p, &cfg, &mut ()).unwrap();
    assert_eq!(state.peak_particles, 30);
    let (history, naive) = naive_efp_train(&p, &cfg).unwrap();
    assert_eq!(history.total_particles(), 30 * 101);
    assert_eq!(naive.peak_particles, 30 * 101);
    assert!((naive.averages.values[0] - state.averages.values[0]).abs() < 1e-9);
}

#[test]
fn unit_interval_features_keep_averages_in_unit_interval() {
    let cfg_r = RenderConfig::new(6, 6);
    let p = Problem::new(
        vec![ScalarLoss::Squared { target: 0.5 }; 36],
        FeatureFamily::Triangles(cfg_r),
        1e-3,
        1e-2,
    )
    .unwrap();
    let cfg = EfpConfig {
        outer_step: 0.3,
        outer_iters: 30,
        particles: 20,
        lmc: LmcConfig::constant(0.05, 3, 4),
        init_scale: 1.0,
        seed: 3,
        diagnostics: None,
    };
    struct Check;
    impl efp_core::duality::DiagnosticsSink for Check {
        fn observe(&mut self, _: usize, averages: &[f64], _: &Ensemble) {
            assert!(averages.iter().all(|h| (0.0..=1.0).contains(h)));
        }
    }
    efp_train(&p, &cfg, &mut Check).unwrap();
}

#[test]
fn diagnostics_are_reproducible() {
    let p = random_problem(9);
    let mut cfg = toy_cfg(8);
    cfg.particles = 100;
    cfg.diagnostics = Some(efp_core::duality::DiagnosticsConfig { mc_samples: 2000, ..Default::default() });
    let mut a = Vec::new();
    let mut b = Vec::new();
    efp_train(&p, &cfg, &mut a).unwrap();
    efp_train(&p, &cfg, &mut b).unwrap();
    assert_eq!(a.len(), 8);
    let strip = |v: Vec<efp_core::duality::DiagnosticsRow>| v.into_iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    assert_eq!(strip(a), strip(b));
}
