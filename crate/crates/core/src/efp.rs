//! Entropic fictitious play.
//!
//! Each outer iteration samples the proximal Gibbs measure of the current
//! mixture `μ` and mixes it in: `μ ← (1 - ηγ) μ + ηγ μ̂`. Because the Gibbs
//! potential only depends on `μ` through `H_i = E_μ[h_i]`, [`efp_train`]
//! carries the `n` averages forward instead of the mixture itself. The
//! mixture-storing variant ([`MixtureHistory`], [`naive_efp_train`]) is kept
//! as a reference for tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::duality::{diagnose, DiagnosticsConfig, DiagnosticsSink};
use crate::gibbs::{sample_gibbs_in_place, GibbsSpec, LmcConfig};
use crate::model::{Ensemble, FeatureMap, Problem};
use crate::{Error, Result};

/// `H_i ≈ E_μ[h_i]` for the current mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningAverages {
    pub values: Vec<f64>,
    pub iteration: usize,
}

impl RunningAverages {
    pub fn from_ensemble(problem: &Problem, ensemble: &Ensemble) -> Self {
        Self {
            values: problem.empirical_means(ensemble),
            iteration: 0,
        }
    }

    /// `H_i ← (1 - ηγ) H_i + (ηγ/m) Σ_r h_i(θ_r)`.
    pub fn update(&mut self, problem: &Problem, gibbs: &Ensemble, outer_step: f64) {
        let keep = 1.0 - outer_step;
        self.values.iter_mut().for_each(|h| *h *= keep);
        let w = outer_step / gibbs.len() as f64;
        for theta in gibbs.iter() {
            problem.features().accumulate(theta, w, &mut self.values);
        }
        self.iteration += 1;
    }
}

pub fn running_average_update(
    averages: &RunningAverages,
    gibbs: &Ensemble,
    outer_step: f64,
    problem: &Problem,
) -> RunningAverages {
    let mut next = averages.clone();
    next.update(problem, gibbs, outer_step);
    next
}

/// Explicit particle mixture `Σ_c w_c · (1/m) Σ_r δ_{θ_r^{(c)}}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixtureHistory {
    components: Vec<(f64, Ensemble)>,
}

impl MixtureHistory {
    pub fn new(initial: Ensemble) -> Self {
        Self {
            components: vec![(1.0, initial)],
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn components(&self) -> &[(f64, Ensemble)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    /// Number of stored particles across all components.
    pub fn total_particles(&self) -> usize {
        self.components.iter().map(|(_, e)| e.len()).sum()
    }

    /// `Σ_c w_c E_c[h_i]` for every feature of `problem`.
    pub fn means(&self, problem: &Problem) -> Vec<f64> {
        let mut acc = vec![0.0; problem.n()];
        for (w, e) in &self.components {
            let per = w / e.len() as f64;
            for theta in e.iter() {
                problem.features().accumulate(theta, per, &mut acc);
            }
        }
        acc
    }

    /// Scales existing weights by `1 - ηγ` and appends `(ηγ, gibbs)`.
    ///
    /// An empty history only accepts `ηγ = 1`.
    pub fn push(&mut self, gibbs: Ensemble, outer_step: f64) -> Result<()> {
        if self.components.is_empty() && outer_step != 1.0 {
            return Err(Error::Config(
                "an empty mixture can only start with ηγ = 1".into(),
            ));
        }
        for (w, _) in self.components.iter_mut() {
            *w *= 1.0 - outer_step;
        }
        self.components.push((outer_step, gibbs));
        Ok(())
    }
}

pub fn naive_efp_step(history: &MixtureHistory, gibbs: Ensemble, outer_step: f64) -> Result<MixtureHistory> {
    let mut next = history.clone();
    next.push(gibbs, outer_step)?;
    Ok(next)
}

/// `Σ_c w_c (1/m) Σ_r h(θ_r^{(c)})`.
pub fn mixture_expectation(history: &MixtureHistory, feature: &FeatureMap) -> f64 {
    history
        .components
        .iter()
        .map(|(w, e)| w * crate::model::predictor_value(e, feature))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfpConfig {
    /// Fused outer step `ηγ ∈ (0, 1]`.
    pub outer_step: f64,
    /// Outer iterations `T`.
    pub outer_iters: usize,
    /// Particles `m`.
    pub particles: usize,
    pub lmc: LmcConfig,
    /// Standard deviation of the mean-zero Gaussian initial measure.
    pub init_scale: f64,
    pub seed: u64,
    /// `None` disables primal/dual estimation.
    pub diagnostics: Option<DiagnosticsConfig>,
}

impl EfpConfig {
    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if !(self.outer_step > 0.0 && self.outer_step <= 1.0) {
            return Err(Error::Config(format!(
                "outer step ηγ must be in (0, 1], got {}",
                self.outer_step
            )));
        }
        if self.outer_iters == 0 || self.particles == 0 {
            return Err(Error::Config("T and m must be >= 1".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("initial scale must be > 0".into()));
        }
        if let Some(d) = &self.diagnostics {
            if d.cadence == 0 {
                return Err(Error::Config("diagnostics cadence must be >= 1".into()));
            }
        }
        self.lmc.validate(problem.lambda_prime())?;
        if self.outer_step > 0.125 {
            log::warn!(
                "ηγ = {} exceeds 1/8; discrete-time convergence guarantees do not apply",
                self.outer_step
            );
        }
        Ok(())
    }

    pub(crate) fn progress(&self, t: usize) -> f64 {
        if self.outer_iters <= 1 {
            0.0
        } else {
            t as f64 / (self.outer_iters - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfpState {
    /// `H^{(t)}`.
    pub averages: RunningAverages,
    /// `θ^{(t-1)}`, the latest Gibbs sample (the initial draw before any step).
    pub ensemble: Ensemble,
    pub iteration: usize,
    /// Largest number of particles held at once.
    pub peak_particles: usize,
}

fn should_emit(cfg: &DiagnosticsConfig, t: usize, total: usize) -> bool {
    t.is_multiple_of(cfg.cadence) || t + 1 == total
}

/// Memory-efficient EFP: `m` particles and `n` averages, independent of `T`.
pub fn efp_train<S: DiagnosticsSink + ?Sized>(
    problem: &Problem,
    cfg: &EfpConfig,
    sink: &mut S,
) -> Result<EfpState> {
    cfg.validate(problem)?;
    let mut ensemble = Ensemble::gaussian(cfg.particles, problem.dim(), cfg.init_scale, cfg.seed)?;
    let mut averages = RunningAverages::from_ensemble(problem, &ensemble);
    let peak = ensemble.len();
    for t in 0..cfg.outer_iters {
        let spec = GibbsSpec::from_averages(problem, &averages.values)?;
        // warm start: chains continue from the previous Gibbs sample
        sample_gibbs_in_place(&spec, &mut ensemble, &cfg.lmc, t as u64, cfg.progress(t))?;
        if let Some(dcfg) = &cfg.diagnostics {
            if should_emit(dcfg, t, cfg.outer_iters) {
                let mut row = diagnose(problem, &averages.values, &ensemble, t, dcfg)?;
                row.wall_ms = sink.elapsed_ms();
                sink.record(&row);
            }
        }
        averages.update(problem, &ensemble, cfg.outer_step);
        sink.observe(t, &averages.values, &ensemble);
    }
    Ok(EfpState {
        iteration: averages.iteration,
        averages,
        ensemble,
        peak_particles: peak,
    })
}

/// Mixture-storing EFP that recomputes `E_μ[h_i]` from every stored particle.
///
/// Uses the same noise streams as [`efp_train`], so both follow the same
/// trajectory up to rounding in the averages.
pub fn naive_efp_train(problem: &Problem, cfg: &EfpConfig) -> Result<(MixtureHistory, EfpState)> {
    cfg.validate(problem)?;
    let init = Ensemble::gaussian(cfg.particles, problem.dim(), cfg.init_scale, cfg.seed)?;
    let mut chain = init.clone();
    let mut history = MixtureHistory::new(init);
    let mut peak = history.total_particles();
    for t in 0..cfg.outer_iters {
        let means = history.means(problem);
        let spec = GibbsSpec::from_averages(problem, &means)?;
        sample_gibbs_in_place(&spec, &mut chain, &cfg.lmc, t as u64, cfg.progress(t))?;
        history.push(chain.clone(), cfg.outer_step)?;
        peak = peak.max(history.total_particles());
    }
    let state = EfpState {
        averages: RunningAverages {
            values: history.means(problem),
            iteration: cfg.outer_iters,
        },
        ensemble: chain,
        iteration: cfg.outer_iters,
        peak_particles: peak,
    };
    Ok((history, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureFamily, ScalarLoss};

    fn linear_problem() -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target: 1.0 }, ScalarLoss::Squared { target: -1.0 }],
            FeatureFamily::Linear {
                weights: vec![1.0, 0.0, 0.5, 0.5],
                dim: 2,
            },
            0.1,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn running_average_edge_steps() {
        let p = linear_problem();
        let e = Ensemble::from_rows(&[[1.0, 2.0], [3.0, 0.0]]).unwrap();
        let h = RunningAverages {
            values: vec![5.0, -5.0],
            iteration: 3,
        };
        let same = running_average_update(&h, &e, 0.0, &p);
        assert_eq!(same.values, h.values);
        assert_eq!(same.iteration, 4);
        let fresh = running_average_update(&h, &e, 1.0, &p);
        assert_eq!(fresh.values, p.empirical_means(&e));
        assert_eq!(fresh.values, vec![2.0, 1.5]);

        let h0 = RunningAverages {
            values: vec![0.0, 0.0],
            iteration: 0,
        };
        let e2 = Ensemble::from_rows(&[[2.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(running_average_update(&h0, &e2, 0.5, &p).values[0], 1.0);
    }

    #[test]
    fn mixture_weights() {
        let a = Ensemble::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = Ensemble::from_rows(&[[2.0, 0.0]]).unwrap();
        let h = naive_efp_step(&MixtureHistory::empty(), a.clone(), 1.0).unwrap();
        assert_eq!(h.components(), &[(1.0, a.clone())]);
        assert!(naive_efp_step(&MixtureHistory::empty(), a.clone(), 0.5).is_err());

        let h = MixtureHistory::new(a.clone());
        let h = naive_efp_step(&h, b.clone(), 0.5).unwrap();
        let h = naive_efp_step(&h, b.clone(), 0.5).unwrap();
        assert_eq!(h.weights(), vec![0.25, 0.25, 0.5]);
        assert_eq!(h.total_particles(), 3);

        let two = naive_efp_step(&MixtureHistory::new(a), b, 0.5).unwrap();
        let f = FeatureMap::Linear {
            weights: vec![1.0, 0.0],
        };
        assert_eq!(mixture_expectation(&two, &f), 1.0);
    }

    #[test]
    fn single_component_expectation_is_predictor() {
        let e = Ensemble::gaussian(20, 2, 1.0, 4).unwrap();
        let f = FeatureMap::Neuron {
            input: vec![0.3, -0.7],
        };
        let h = MixtureHistory::new(e.clone());
        assert_eq!(mixture_expectation(&h, &f), crate::model::predictor_value(&e, &f));
    }

    fn small_cfg(t: usize, step: f64, s: usize) -> EfpConfig {
        EfpConfig {
            outer_step: step,
            outer_iters: t,
            particles: 64,
            lmc: LmcConfig::constant(0.05, s, 11),
            init_scale: 1.0,
            seed: 5,
            diagnostics: None,
        }
    }

    #[test]
    fn one_full_step_without_sampling_reproduces_initial_means() {
        let p = linear_problem();
        let cfg = small_cfg(1, 1.0, 0);
        let state = efp_train(&p, &cfg, &mut ()).unwrap();
        let init = Ensemble::gaussian(64, 2, 1.0, 5).unwrap();
        assert_eq!(state.averages.values, p.empirical_means(&init));
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn efficient_and_naive_paths_agree() {
        let p = linear_problem();
        let cfg = small_cfg(15, 0.2, 5);
        let state = efp_train(&p, &cfg, &mut ()).unwrap();
        let (history, naive) = naive_efp_train(&p, &cfg).unwrap();
        assert_eq!(history.total_particles(), 64 * 16);
        assert_eq!(naive.peak_particles, 64 * 16);
        assert_eq!(state.peak_particles, 64);
        for (a, b) in state.averages.values.iter().zip(&naive.averages.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn config_validation() {
        let p = linear_problem();
        let mut cfg = small_cfg(1, 0.0, 1);
        assert!(efp_train(&p, &cfg, &mut ()).is_err());
        cfg.outer_step = 1.5;
        assert!(efp_train(&p, &cfg, &mut ()).is_err());
        cfg.outer_step = 0.5;
        cfg.particles = 0;
        assert!(efp_train(&p, &cfg, &mut ()).is_err());
    }
}
