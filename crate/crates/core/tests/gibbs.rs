mod common;

use common::{fd_grad, rel_err, uniform, uniform_vec};
use efp_core::duality::{log_base_partition, log_partition};
use efp_core::gibbs::{log_density_ratio, potential_grad, potential_value, sample_gibbs};
use efp_core::{Ensemble, FeatureFamily, GibbsSpec, LmcConfig, Problem, ScalarLoss};

fn linear_1d(lambda: f64, lambda_prime: f64) -> Problem {
    Problem::new(
        vec![ScalarLoss::Squared { target: 0.0 }],
        FeatureFamily::Linear { weights: vec![1.0], dim: 1 },
        lambda,
        lambda_prime,
    )
    .unwrap()
}

#[test]
fn linear_potential_examples() {
    let p = linear_1d(1.0, 0.0);
    let spec = GibbsSpec::new(&p, vec![2.0]).unwrap();
    assert_eq!(potential_value(&spec, &[3.0]), 6.0);
    assert_eq!(potential_grad(&spec, &[3.0]), vec![2.0]);
    let p = linear_1d(1.0, 0.5);
    for c in [-1.5, 0.0, 0.7] {
        let spec = GibbsSpec::new(&p, vec![c]).unwrap();
        assert!((potential_value(&spec, &[1.0]) - (c + 0.5)).abs() < 1e-15);
        assert!((potential_grad(&spec, &[1.0])[0] - (c + 1.0)).abs() < 1e-15);
    }
}

#[test]
fn neuron_potential_matches_direct_sum() {
    let p = Problem::new(
        vec![ScalarLoss::Squared { target: 0.3 }, ScalarLoss::Squared { target: -0.1 }],
        FeatureFamily::Neurons { inputs: vec![1.0, 0.0, 0.6, 0.8], dim: 2 },
        0.1,
        0.2,
    )
    .unwrap();
    let g = [0.5, -1.0];
    let spec = GibbsSpec::new(&p, g.to_vec()).unwrap();
    let th = [0.4, -0.9];
    let direct = 0.5 * (g[0] * (0.4f64).tanh() + g[1] * (0.6 * 0.4 - 0.8 * 0.9f64).tanh())
        + 0.2 * (0.16 + 0.81);
    assert!((potential_value(&spec, &th) - direct).abs() < 1e-14);
}

#[test]
fn potential_gradient_matches_finite_differences() {
    let mut rng = common::rng(10);
    for trial in 0..100 {
        let d = 1 + trial % 3;
        let n = 1 + (uniform(&mut rng, 0.0, 4.0) as usize);
        let losses = vec![ScalarLoss::Squared { target: 0.0 }; n];
        let features = if trial % 2 == 0 {
            FeatureFamily::Neurons { inputs: uniform_vec(&mut rng, n * d, -1.0, 1.0), dim: d }
        } else {
            FeatureFamily::Kernels { centers: uniform_vec(&mut rng, n * d, -1.0, 1.0), dim: d, sigma: 0.7 }
        };
        let lp = uniform(&mut rng, 0.0, 1.0);
        let p = Problem::new(losses, features, 0.1, lp).unwrap();
        let spec = GibbsSpec::new(&p, uniform_vec(&mut rng, n, -2.0, 2.0)).unwrap();
        let theta = uniform_vec(&mut rng, d, -1.5, 1.5);
        let fd = fd_grad(|t| potential_value(&spec, t), &theta, 1e-5);
        let err = rel_err(&potential_grad(&spec, &theta), &fd, 1e-8);
        assert!(err <= 1e-5, "trial {trial}: rel err {err}");
    }
}

#[test]
fn langevin_reaches_gaussian_stationary_law() {
    let p = Problem::new(
        vec![ScalarLoss::Squared { target: 0.0 }],
        FeatureFamily::Linear { weights: vec![0.0, 0.0], dim: 2 },
        0.5,
        0.5,
    )
    .unwrap();
    let init = Ensemble::gaussian(5000, 2, 3.0, 1).unwrap();
    let out = sample_gibbs(&GibbsSpec::zero(&p), &init, &LmcConfig::constant(0.01, 2000, 2)).unwrap();
    for (m, v) in out.mean().iter().zip(out.variance()) {
        assert!(m.abs() <= 0.05, "mean {m}");
        assert!((0.45..=0.55).contains(&v), "variance {v}");
    }
    let again = sample_gibbs(&GibbsSpec::zero(&p), &init, &LmcConfig::constant(0.01, 2000, 2)).unwrap();
    assert_eq!(out, again);
}

/// `log N(x; mu, var)`.
fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu) * (x - mu) / (2.0 * var)
}

#[test]
fn density_ratio_matches_gaussian_closed_form() {
    let (lambda, lambda_prime, c) = (1.0, 0.5, 0.3);
    let p = linear_1d(lambda, lambda_prime);
    let a = GibbsSpec::new(&p, vec![c]).unwrap();
    let b = GibbsSpec::zero(&p);
    let za = log_partition(&a, 1_000_000, 3).unwrap();
    let zb = log_base_partition(&p).unwrap();
    let var = lambda / (2.0 * lambda_prime);
    let mu_a = -c / (2.0 * lambda_prime);
    for x in [-2.0, -0.5, 0.0, 0.4, 1.7] {
        let oracle = log_normal_pdf(x, mu_a, var) - log_normal_pdf(x, 0.0, var);
        let got = log_density_ratio(&a, &b, &[x], za.value, zb);
        assert!((got - oracle).abs() < 1e-3, "x={x}: {got} vs {oracle}");
    }
}

#[test]
fn density_ratio_respects_bounded_problem_constant() {
    let mut rng = common::rng(11);
    let n = 4;
    let p = Problem::new(
        vec![ScalarLoss::Logistic { label: 1.0 }; n],
        FeatureFamily::Neurons { inputs: uniform_vec(&mut rng, n * 2, -1.0, 1.0), dim: 2 },
        1.0,
        0.5,
    )
    .unwrap();
    let a = GibbsSpec::new(&p, uniform_vec(&mut rng, n, -1.0, 1.0)).unwrap();
    let b = GibbsSpec::new(&p, uniform_vec(&mut rng, n, -1.0, 1.0)).unwrap();
    let za = log_partition(&a, 100_000, 1).unwrap();
    let zb = log_partition(&b, 100_000, 2).unwrap();
    let tol = 3.0 * (za.std_err.powi(2) + zb.std_err.powi(2)).sqrt();
    for _ in 0..1000 {
        let th = uniform_vec(&mut rng, 2, -4.0, 4.0);
        let r = log_density_ratio(&a, &b, &th, za.value, zb.value);
        assert!(r.abs() <= 4.0 + tol, "log ratio {r}");
    }
}
