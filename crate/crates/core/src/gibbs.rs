//! Proximal Gibbs measures `q_g(θ) ∝ exp(-V_g(θ)/λ)` with
//! `V_g(θ) = (1/n) Σ g_i h_i(θ) + λ'|θ|²`, and an unadjusted Langevin sampler
//! for them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, cos, sqrt, PI};
use crate::model::{Ensemble, Problem};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Coefficients `g ∈ R^n` tied to the problem that gives them meaning.
#[derive(Debug, Clone)]
pub struct GibbsSpec<'a> {
    problem: &'a Problem,
    coeffs: Vec<f64>,
    /// `g / n`, the weights actually applied to the feature gradients.
    scaled: Vec<f64>,
}

impl<'a> GibbsSpec<'a> {
    pub fn new(problem: &'a Problem, coeffs: Vec<f64>) -> Result<Self> {
        problem.check_len(&coeffs)?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("Gibbs coefficients must be finite".into()));
        }
        let inv_n = 1.0 / problem.n() as f64;
        let scaled = coeffs.iter().map(|c| c * inv_n).collect();
        Ok(Self {
            problem,
            coeffs,
            scaled,
        })
    }

    /// The proximal Gibbs measure of any `μ` with `E_μ[h_i] = averages[i]`.
    pub fn from_averages(problem: &'a Problem, averages: &[f64]) -> Result<Self> {
        Self::new(problem, problem.dual_coefficients(averages)?)
    }

    pub fn zero(problem: &'a Problem) -> Self {
        Self::new(problem, vec![0.0; problem.n()]).expect("zero coefficients are valid")
    }

    pub fn problem(&self) -> &'a Problem {
        self.problem
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn lambda(&self) -> f64 {
        self.problem.lambda()
    }

    pub fn lambda_prime(&self) -> f64 {
        self.problem.lambda_prime()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// `(1/n) Σ g_i h_i(θ)`, the data part of the potential.
    pub fn data_potential(&self, theta: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let mut h = vec![0.0; self.problem.n()];
        self.problem.features().eval_all(theta, &mut h);
        math::dot(&self.scaled, &h)
    }

    /// `(1/n) Σ g_i ∇h_i(θ)`.
    pub fn data_grad(&self, theta: &[f64], out: &mut [f64]) {
        self.problem.features().weighted_grad(theta, &self.scaled, out);
    }

    pub fn potential_value(&self, theta: &[f64]) -> f64 {
        self.data_potential(theta) + self.lambda_prime() * math::norm_sq(theta)
    }

    pub fn potential_grad(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.data_grad(theta, &mut g);
        let two_lp = 2.0 * self.lambda_prime();
        for (gi, t) in g.iter_mut().zip(theta) {
            *gi += two_lp * t;
        }
        g
    }

    /// `-V_g(θ)/λ`.
    pub fn log_unnormalized_density(&self, theta: &[f64]) -> f64 {
        -self.potential_value(theta) / self.lambda()
    }
}

pub fn potential_value(spec: &GibbsSpec<'_>, theta: &[f64]) -> f64 {
    spec.potential_value(theta)
}

pub fn potential_grad(spec: &GibbsSpec<'_>, theta: &[f64]) -> Vec<f64> {
    spec.potential_grad(theta)
}

/// Step-size schedule across outer rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// Cosine decay from `start` (first round) to `end` (last round).
    CosineAnneal { start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmcConfig {
    /// Step size `η'`; ignored by `CosineAnneal`.
    pub step: f64,
    /// Langevin steps per call, `S`.
    pub steps: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
}

impl LmcConfig {
    pub fn constant(step: f64, steps: usize, seed: u64) -> Self {
        Self {
            step,
            steps,
            schedule: StepSchedule::Constant,
            seed,
        }
    }

    /// Step size at `progress ∈ [0, 1]` through the outer loop.
    pub fn step_at(&self, progress: f64) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step,
            StepSchedule::CosineAnneal { start, end } => {
                let p = progress.clamp(0.0, 1.0);
                end + 0.5 * (start - end) * (1.0 + cos(PI * p))
            }
        }
    }

    fn max_step(&self) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step,
            StepSchedule::CosineAnneal { start, .. } => start,
        }
    }

    pub fn validate(&self, lambda_prime: f64) -> Result<()> {
        if let StepSchedule::CosineAnneal { start, end } = self.schedule {
            if !(end > 0.0 && start >= end && start.is_finite()) {
                return Err(Error::Config(format!(
                    "cosine annealing needs start >= end > 0, got {start} -> {end}"
                )));
            }
        } else if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("LMC step must be > 0, got {}", self.step)));
        }
        if 2.0 * self.max_step() * lambda_prime >= 1.0 {
            return Err(Error::Config(format!(
                "2·η'·λ' = {} must be < 1",
                2.0 * self.max_step() * lambda_prime
            )));
        }
        Ok(())
    }
}

/// One Langevin step with caller-supplied noise:
/// `(1 - 2η'λ') θ - η' (1/n) Σ g_i ∇h_i(θ) + √(2η'λ) ξ`.
pub fn lmc_step(theta: &[f64], spec: &GibbsSpec<'_>, step: f64, noise: &[f64]) -> Vec<f64> {
    let mut out = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    lmc_step_in_place(&mut out, spec, step, noise, &mut grad);
    out
}

#[inline]
fn lmc_step_in_place(
    theta: &mut [f64],
    spec: &GibbsSpec<'_>,
    step: f64,
    noise: &[f64],
    grad: &mut [f64],
) {
    let contraction = 1.0 - 2.0 * step * spec.lambda_prime();
    let diffusion = sqrt(2.0 * step * spec.lambda());
    spec.data_grad(theta, grad);
    for ((t, g), xi) in theta.iter_mut().zip(grad.iter()).zip(noise) {
        *t = contraction * *t - step * g + diffusion * xi;
    }
}

/// Runs `cfg.steps` Langevin steps on every particle in place.
///
/// `round` selects the noise streams (one per particle), `progress` feeds the
/// step schedule. Chains start from whatever `ensemble` holds, which gives the
/// warm start across outer iterations.
pub fn sample_gibbs_in_place(
    spec: &GibbsSpec<'_>,
    ensemble: &mut Ensemble,
    cfg: &LmcConfig,
    round: u64,
    progress: f64,
) -> Result<()> {
    let d = ensemble.dim();
    if d != spec.problem().dim() {
        return Err(Error::Config(format!(
            "ensemble dimension {d} does not match problem dimension {}",
            spec.problem().dim()
        )));
    }
    let step = cfg.step_at(progress);
    let mut noise = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for (r, theta) in ensemble.iter_mut().enumerate() {
        let mut rng = rng::stream(cfg.seed, Purpose::Langevin, round, r as u64);
        for _ in 0..cfg.steps {
            rng::fill_normal(&mut rng, &mut noise);
            lmc_step_in_place(theta, spec, step, &noise, &mut grad);
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "particle {r} diverged during Langevin sampling (step {step})"
            )));
        }
    }
    Ok(())
}

/// Copying variant of [`sample_gibbs_in_place`] at round 0.
pub fn sample_gibbs(spec: &GibbsSpec<'_>, init: &Ensemble, cfg: &LmcConfig) -> Result<Ensemble> {
    let mut out = init.clone();
    sample_gibbs_in_place(spec, &mut out, cfg, 0, 0.0)?;
    Ok(out)
}

/// `log(q_a(θ)/Z_a) - log(q_b(θ)/Z_b)`.
pub fn log_density_ratio(
    spec_a: &GibbsSpec<'_>,
    spec_b: &GibbsSpec<'_>,
    theta: &[f64],
    log_z_a: f64,
    log_z_b: f64,
) -> f64 {
    let lambda = spec_a.lambda();
    (spec_b.potential_value(theta) - spec_a.potential_value(theta)) / lambda + log_z_b - log_z_a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureFamily, ScalarLoss};

    fn linear_1d(lambda: f64, lambda_prime: f64) -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target: 0.0 }],
            FeatureFamily::Linear {
                weights: vec![1.0],
                dim: 1,
            },
            lambda,
            lambda_prime,
        )
        .unwrap()
    }

    fn zero_data(dim: usize, lambda: f64, lambda_prime: f64) -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target: 0.0 }],
            FeatureFamily::Linear {
                weights: vec![0.0; dim],
                dim,
            },
            lambda,
            lambda_prime,
        )
        .unwrap()
    }

    #[test]
    fn pure_regularizer_potential() {
        let p = zero_data(2, 0.5, 1.0);
        let spec = GibbsSpec::zero(&p);
        assert_eq!(spec.potential_value(&[1.0, -2.0]), 5.0);
        assert_eq!(spec.potential_grad(&[1.0, -2.0]), vec![2.0, -4.0]);
    }

    #[test]
    fn linear_potential() {
        let p = linear_1d(0.5, 0.0);
        let spec = GibbsSpec::new(&p, vec![2.0]).unwrap();
        assert_eq!(spec.potential_value(&[3.0]), 6.0);

        let p = linear_1d(0.5, 0.5);
        for c in [-1.5, 0.0, 2.25] {
            let spec = GibbsSpec::new(&p, vec![c]).unwrap();
            assert_eq!(spec.potential_grad(&[1.0]), vec![c + 1.0]);
        }
    }

    #[test]
    fn lmc_step_examples() {
        let p = zero_data(3, 0.5, 0.0);
        let spec = GibbsSpec::zero(&p);
        let theta = [0.3, -1.0, 2.0];
        assert_eq!(lmc_step(&theta, &spec, 0.0, &[1.0, 2.0, 3.0]), theta.to_vec());
        assert_eq!(lmc_step(&theta, &spec, 1.0, &[1.0, 0.0, 0.0]), vec![1.3, -1.0, 2.0]);

        // dataGrad = 4 from a linear feature with g = 4
        let p = linear_1d(0.02, 0.25);
        let spec = GibbsSpec::new(&p, vec![4.0]).unwrap();
        let next = lmc_step(&[2.0], &spec, 0.1, &[1.0])[0];
        let expected = 0.95 * 2.0 - 0.4 + 0.004_f64.sqrt();
        assert!((next - expected).abs() < 1e-14);
        assert!((next - 1.563_245).abs() < 1e-6);
    }

    #[test]
    fn zero_steps_is_identity_and_seeds_are_reproducible() {
        let p = zero_data(2, 0.5, 0.5);
        let spec = GibbsSpec::zero(&p);
        let init = Ensemble::gaussian(50, 2, 1.0, 9).unwrap();
        let same = sample_gibbs(&spec, &init, &LmcConfig::constant(0.01, 0, 1)).unwrap();
        assert_eq!(same, init);
        let cfg = LmcConfig::constant(0.01, 25, 1);
        let a = sample_gibbs(&spec, &init, &cfg).unwrap();
        let b = sample_gibbs(&spec, &init, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = sample_gibbs(&spec, &init, &LmcConfig::constant(0.01, 25, 2)).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn divergence_is_reported() {
        // huge negative linear coefficient with a tiny step count still blows up
        let p = linear_1d(1.0, 0.0);
        let spec = GibbsSpec::new(&p, vec![-1e308]).unwrap();
        let init = Ensemble::gaussian(2, 1, 1.0, 0).unwrap();
        let err = sample_gibbs(&spec, &init, &LmcConfig::constant(10.0, 3, 0)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn config_validation() {
        assert!(LmcConfig::constant(0.01, 10, 0).validate(0.5).is_ok());
        assert!(LmcConfig::constant(1.0, 10, 0).validate(0.5).is_err());
        let anneal = LmcConfig {
            step: 0.0,
            steps: 10,
            schedule: StepSchedule::CosineAnneal { start: 0.1, end: 0.01 },
            seed: 0,
        };
        assert!(anneal.validate(1e-4).is_ok());
        assert!((anneal.step_at(0.0) - 0.1).abs() < 1e-15);
        assert!((anneal.step_at(1.0) - 0.01).abs() < 1e-15);
        assert!((anneal.step_at(0.5) - 0.055).abs() < 1e-15);
        let bad = LmcConfig {
            schedule: StepSchedule::CosineAnneal { start: 0.01, end: 0.1 },
            ..anneal
        };
        assert!(bad.validate(1e-4).is_err());
    }

    #[test]
    fn identical_specs_have_zero_log_ratio() {
        let p = linear_1d(0.3, 0.2);
        let spec = GibbsSpec::new(&p, vec![0.7]).unwrap();
        for t in [-3.0, 0.0, 1.5] {
            assert_eq!(log_density_ratio(&spec, &spec, &[t], 0.4, 0.4), 0.0);
        }
    }
}
