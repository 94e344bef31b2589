//! Reference dynamics that solve the same self-consistent equation `μ = μ̂`:
//! mean-field Langevin dynamics and a simplified particle dual averaging.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::duality::{diagnose, DiagnosticsConfig, DiagnosticsRow, DiagnosticsSink};
use crate::gibbs::{lmc_step, sample_gibbs_in_place, GibbsSpec, LmcConfig};
use crate::model::{Ensemble, Problem};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    /// Noisy gradient descent with step `step` for `iters` steps; the
    /// coefficients `g = ℓ'(E_ρ[h])` are refreshed every step.
    Mfld { step: f64, iters: usize },
    /// Gibbs sampling of the uniformly averaged coefficients
    /// `ḡ^{(t)} = (1/(t+1)) Σ_{s≤t} g^{(s)}`.
    PdaSimplified { outer_iters: usize, lmc: LmcConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub particles: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub diagnostics: Option<DiagnosticsConfig>,
}

impl BaselineConfig {
    fn validate(&self, problem: &Problem) -> Result<()> {
        if self.particles == 0 || !(self.init_scale > 0.0) {
            return Err(Error::Config("baseline needs m >= 1 and a positive init scale".into()));
        }
        match self.kind {
            BaselineKind::Mfld { step, iters } => {
                if iters == 0 {
                    return Err(Error::Config("MFLD needs at least one step".into()));
                }
                LmcConfig::constant(step, 1, self.seed).validate(problem.lambda_prime())
            }
            BaselineKind::PdaSimplified { outer_iters, lmc } => {
                if outer_iters == 0 {
                    return Err(Error::Config("PDA needs at least one outer iteration".into()));
                }
                lmc.validate(problem.lambda_prime())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub ensemble: Ensemble,
    /// `E_ρ[h_i]` of the final particles.
    pub averages: Vec<f64>,
    pub rows: Vec<DiagnosticsRow>,
}

struct Recorder<'s, S: ?Sized> {
    sink: &'s mut S,
    rows: Vec<DiagnosticsRow>,
}

impl<S: DiagnosticsSink + ?Sized> Recorder<'_, S> {
    fn maybe_emit(
        &mut self,
        problem: &Problem,
        cfg: &Option<DiagnosticsConfig>,
        averages: &[f64],
        ensemble: &Ensemble,
        t: usize,
        total: usize,
    ) -> Result<()> {
        if let Some(d) = cfg {
            if t.is_multiple_of(d.cadence) || t + 1 == total {
                let mut row = diagnose(problem, averages, ensemble, t, d)?;
                row.wall_ms = self.sink.elapsed_ms();
                self.sink.record(&row);
                self.rows.push(row);
            }
        }
        self.sink.observe(t, averages, ensemble);
        Ok(())
    }
}

/// Mean-field Langevin dynamics.
///
/// Particle `r` draws its noise from one stream for the whole run, the same
/// stream [`crate::gibbs::sample_gibbs`] uses at round 0, so with `g ≡ 0`
/// the two produce identical particles.
pub fn mfld_train<S: DiagnosticsSink + ?Sized>(
    problem: &Problem,
    cfg: &BaselineConfig,
    sink: &mut S,
) -> Result<BaselineOutcome> {
    cfg.validate(problem)?;
    let BaselineKind::Mfld { step, iters } = cfg.kind else {
        return Err(Error::Config("mfld_train needs an Mfld config".into()));
    };
    let mut ensemble = Ensemble::gaussian(cfg.particles, problem.dim(), cfg.init_scale, cfg.seed)?;
    let d = problem.dim();
    let mut streams: Vec<ChaCha8Rng> = (0..cfg.particles)
        .map(|r| rng::stream(cfg.seed, Purpose::Langevin, 0, r as u64))
        .collect();
    let mut noise = vec![0.0; d];
    let mut rec = Recorder {
        sink,
        rows: Vec::new(),
    };
    for t in 0..iters {
        let averages = problem.empirical_means(&ensemble);
        let spec = GibbsSpec::from_averages(problem, &averages)?;
        let mut next = Vec::with_capacity(ensemble.as_slice().len());
        for (theta, rng) in ensemble.iter().zip(streams.iter_mut()) {
            rng::fill_normal(rng, &mut noise);
            next.extend(lmc_step(theta, &spec, step, &noise));
        }
        ensemble = Ensemble::new(d, next)?;
        let averages = problem.empirical_means(&ensemble);
        rec.maybe_emit(problem, &cfg.diagnostics, &averages, &ensemble, t, iters)?;
    }
    Ok(BaselineOutcome {
        averages: problem.empirical_means(&ensemble),
        ensemble,
        rows: rec.rows,
    })
}

/// Particle dual averaging without the weighted gradient averaging.
pub fn pda_simplified_train<S: DiagnosticsSink + ?Sized>(
    problem: &Problem,
    cfg: &BaselineConfig,
    sink: &mut S,
) -> Result<BaselineOutcome> {
    cfg.validate(problem)?;
    let BaselineKind::PdaSimplified { outer_iters, lmc } = cfg.kind else {
        return Err(Error::Config("pda_simplified_train needs a PdaSimplified config".into()));
    };
    let mut ensemble = Ensemble::gaussian(cfg.particles, problem.dim(), cfg.init_scale, cfg.seed)?;
    let mut g_bar = problem.dual_coefficients(&problem.empirical_means(&ensemble))?;
    let mut rec = Recorder {
        sink,
        rows: Vec::new(),
    };
    for t in 0..outer_iters {
        let spec = GibbsSpec::new(problem, g_bar.clone())?;
        let progress = if outer_iters > 1 {
            t as f64 / (outer_iters - 1) as f64
        } else {
            0.0
        };
        sample_gibbs_in_place(&spec, &mut ensemble, &lmc, t as u64, progress)?;
        let averages = problem.empirical_means(&ensemble);
        let g = problem.dual_coefficients(&averages)?;
        // ḡ^{(t+1)} = ((t+1) ḡ^{(t)} + g^{(t+1)}) / (t+2)
        let w = 1.0 / (t + 2) as f64;
        for (gb, gi) in g_bar.iter_mut().zip(&g) {
            *gb += w * (gi - *gb);
        }
        rec.maybe_emit(problem, &cfg.diagnostics, &averages, &ensemble, t, outer_iters)?;
    }
    Ok(BaselineOutcome {
        averages: problem.empirical_means(&ensemble),
        ensemble,
        rows: rec.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efp::{efp_train, EfpConfig};
    use crate::gibbs::sample_gibbs;
    use crate::model::{FeatureFamily, ScalarLoss};

    fn zero_data() -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target: 0.0 }],
            FeatureFamily::Linear {
                weights: vec![0.0, 0.0],
                dim: 2,
            },
            0.5,
            0.5,
        )
        .unwrap()
    }

    fn toy(target: f64) -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target }],
            FeatureFamily::Linear {
                weights: vec![1.0],
                dim: 1,
            },
            0.1,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn mfld_without_data_is_plain_langevin() {
        let p = zero_data();
        let cfg = BaselineConfig {
            kind: BaselineKind::Mfld { step: 0.05, iters: 30 },
            particles: 40,
            init_scale: 1.0,
            seed: 17,
            diagnostics: None,
        };
        let out = mfld_train(&p, &cfg, &mut ()).unwrap();
        let init = Ensemble::gaussian(40, 2, 1.0, 17).unwrap();
        let spec = GibbsSpec::zero(&p);
        let direct = sample_gibbs(&spec, &init, &LmcConfig::constant(0.05, 30, 17)).unwrap();
        assert_eq!(out.ensemble.as_slice(), direct.as_slice());
    }

    #[test]
    fn mfld_is_deterministic() {
        let p = toy(1.0);
        let cfg = BaselineConfig {
            kind: BaselineKind::Mfld { step: 0.05, iters: 20 },
            particles: 30,
            init_scale: 1.0,
            seed: 2,
            diagnostics: None,
        };
        let a = mfld_train(&p, &cfg, &mut ()).unwrap();
        let b = mfld_train(&p, &cfg, &mut ()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_pda_round_matches_first_efp_sample() {
        let p = toy(1.0);
        let lmc = LmcConfig::constant(0.05, 10, 8);
        let pda = BaselineConfig {
            kind: BaselineKind::PdaSimplified { outer_iters: 1, lmc },
            particles: 25,
            init_scale: 1.0,
            seed: 3,
            diagnostics: None,
        };
        let out = pda_simplified_train(&p, &pda, &mut ()).unwrap();
        let efp = EfpConfig {
            outer_step: 0.1,
            outer_iters: 1,
            particles: 25,
            lmc,
            init_scale: 1.0,
            seed: 3,
            diagnostics: None,
        };
        let state = efp_train(&p, &efp, &mut ()).unwrap();
        assert_eq!(out.ensemble, state.ensemble);
    }

    #[test]
    fn pda_with_constant_coefficients_repeats_gibbs_sampling() {
        // with no data the coefficient sequence is identically zero
        let p = zero_data();
        let lmc = LmcConfig::constant(0.05, 4, 8);
        let pda = BaselineConfig {
            kind: BaselineKind::PdaSimplified { outer_iters: 3, lmc },
            particles: 10,
            init_scale: 1.0,
            seed: 1,
            diagnostics: None,
        };
        let out = pda_simplified_train(&p, &pda, &mut ()).unwrap();
        let spec = GibbsSpec::zero(&p);
        let mut e = Ensemble::gaussian(10, 2, 1.0, 1).unwrap();
        for t in 0..3 {
            sample_gibbs_in_place(&spec, &mut e, &lmc, t, t as f64 / 2.0).unwrap();
        }
        assert_eq!(out.ensemble, e);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let p = toy(0.0);
        let cfg = BaselineConfig {
            kind: BaselineKind::Mfld { step: 0.05, iters: 2 },
            particles: 5,
            init_scale: 1.0,
            seed: 0,
            diagnostics: None,
        };
        assert!(pda_simplified_train(&p, &cfg, &mut ()).is_err());
    }
}
