//! Acceptance criteria, shared by the `verify` subcommand and the
//! acceptance test target. Each check prints one line when it finishes.

use std::time::Instant;

use efp_core::duality::{
    dual_value, linearized_value_at_gibbs, linearized_value_gaussian, log_partition, primal_estimate,
    DiagnosticsConfig, DiagnosticsRow,
};
use efp_core::efp::{
    efp_train, mixture_expectation, naive_efp_step, naive_efp_train, EfpConfig, MixtureHistory,
    RunningAverages,
};
use efp_core::gibbs::{log_density_ratio, potential_grad, potential_value, sample_gibbs, sample_gibbs_in_place};
use efp_core::raster::{render_grad, pixel_value, RenderConfig};
use efp_core::rng::{self, Purpose};
use efp_core::{Ensemble, FeatureFamily, GibbsSpec, LmcConfig, Problem, ScalarLoss};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Experiment, Method, RunConfig};
use crate::datasets::make_student_teacher;
use crate::error::CliResult;
use crate::run::{synth_image, toy_fixed_point, toy_problem, train};

pub const ALL: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {} ({:.1}s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub fn name(id: u32) -> &'static str {
    match id {
        1 => "duality-gap convergence",
        2 => "geometric gap rate",
        3 => "self-consistent fixed point",
        4 => "memory invariant",
        5 => "running-average recursion",
        6 => "weak duality",
        7 => "density-ratio bound",
        8 => "linearization optimality",
        9 => "gradient suites",
        10 => "sampler stationarity",
        11 => "image synthesis",
        12 => "baseline agreement",
        _ => "unknown",
    }
}

/// Runs the selected criteria (all when `ids` is empty), printing one line each.
pub fn run_selected(ids: &[u32]) -> Vec<Outcome> {
    let ids: Vec<u32> = if ids.is_empty() { ALL.to_vec() } else { ids.to_vec() };
    let mut gap_rows: Option<CliResult<Vec<DiagnosticsRow>>> = None;
    let mut out = Vec::new();
    for id in ids {
        let start = Instant::now();
        let result = match id {
            1 | 2 => {
                let rows = gap_rows.get_or_insert_with(gap_run);
                match rows {
                    Ok(rows) if id == 1 => Ok(check_gap_convergence(rows)),
                    Ok(rows) => Ok(check_gap_rate(rows)),
                    Err(e) => Err(e.to_string()),
                }
            }
            3 => fixed_point().map_err(|e| e.to_string()),
            4 => memory().map_err(|e| e.to_string()),
            5 => recursion().map_err(|e| e.to_string()),
            6 => weak_duality().map_err(|e| e.to_string()),
            7 => density_ratio().map_err(|e| e.to_string()),
            8 => linearization().map_err(|e| e.to_string()),
            9 => Ok(gradients()),
            10 => stationarity().map_err(|e| e.to_string()),
            11 => image_synthesis().map_err(|e| e.to_string()),
            12 => baselines().map_err(|e| e.to_string()),
            _ => Err(format!("no criterion {id}")),
        };
        let (passed, detail) = match result {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let o = Outcome {
            id,
            name: name(id),
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        println!("{}", o.line());
        out.push(o);
    }
    out
}

type Check = (bool, String);

fn data_rng(seed: u64) -> ChaCha8Rng {
    rng::stream(seed, Purpose::Data, 7, 0)
}

/// Student–teacher gap run: `n=50, d=2`, teacher width 5, `m=500`,
/// `λ=λ'=0.01`, `ηγ=0.05`, `S=50`, `η'=0.01`, `T=200`.
pub fn gap_run() -> CliResult<Vec<DiagnosticsRow>> {
    let problem = make_student_teacher(50, 2, 5, 0, 0.01, 0.01)?;
    let cfg = EfpConfig {
        outer_step: 0.05,
        outer_iters: 200,
        particles: 500,
        lmc: LmcConfig::constant(0.01, 50, 1),
        init_scale: 1.0,
        seed: 2,
        diagnostics: Some(DiagnosticsConfig {
            cadence: 1,
            mc_samples: 20_000,
            knn_k: 5,
            seed: 3,
        }),
    };
    let mut rows = Vec::new();
    efp_train(&problem, &cfg, &mut rows)?;
    Ok(rows)
}

const GAP_T0: usize = 20;

/// `gap(T) ≤ 0.1 gap(t₀)` and `gap(t) ≥ -3σ` throughout.
pub fn check_gap_convergence(rows: &[DiagnosticsRow]) -> Check {
    let lambda = 0.01;
    let (Some(first), Some(last)) = (rows.iter().find(|r| r.iter == GAP_T0), rows.last()) else {
        return (false, "missing rows".into());
    };
    let ratio = last.gap / first.gap;
    let worst = rows
        .iter()
        .map(|r| r.gap / r.sigma_est(lambda).max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let passed = first.gap > 0.0 && last.gap <= 0.1 * first.gap && worst >= -3.0;
    (
        passed,
        format!(
            "gap({}) = {:.3e}, gap({}) = {:.3e}, ratio {:.3} (need <= 0.1), min gap/sigma {:.2} (need >= -3)",
            GAP_T0, first.gap, last.iter, last.gap, ratio, worst
        ),
    )
}

/// Least-squares slope of `log gap` over `[t₀, t₀ + 100]`, within a factor 3
/// of `ηγ = 0.05`. Rows with non-positive gap are left out of the fit.
pub fn check_gap_rate(rows: &[DiagnosticsRow]) -> Check {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| (GAP_T0..=GAP_T0 + 100).contains(&r.iter) && r.gap > 0.0)
        .map(|r| (r.iter as f64, r.gap.ln()))
        .collect();
    if pts.len() < 10 {
        return (false, format!("only {} positive gaps in the fit window", pts.len()));
    }
    let slope = ls_slope(&pts);
    let rate = 0.05;
    let passed = slope < 0.0 && (rate / 3.0..=rate * 3.0).contains(&-slope);
    (
        passed,
        format!(
            "slope {slope:.4} over {} points (need -slope in [{:.4}, {:.2}])",
            pts.len(),
            rate / 3.0,
            rate * 3.0
        ),
    )
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn toy_config(method: Method) -> RunConfig {
    let mut cfg = RunConfig::defaults(Experiment::Toy1d);
    cfg.optimizer.method = method;
    cfg.optimizer.mfld_iters = cfg.optimizer.outer_iters * cfg.optimizer.lmc_steps;
    cfg.diagnostics.cadence = 1;
    cfg
}

/// Toy `n=1`, squared loss with target 0, `h = θ`, `λ = λ' = 0.1`.
fn fixed_point() -> CliResult<Check> {
    let mut cfg = toy_config(Method::Efp);
    cfg.problem.target = 0.0;
    cfg.diagnostics.cadence = cfg.optimizer.outer_iters;
    let problem = toy_problem(0.0, 0.1, 0.1)?;
    let mut rows = Vec::new();
    let out = train(&cfg, &problem, &mut rows)?;
    let oracle = toy_fixed_point(0.0, 0.1);
    let h = out.averages[0];
    let kl = rows.last().map_or(f64::NAN, |r| r.kl_est);
    let passed = (h - oracle).abs() <= 0.02 && kl <= 0.05;
    Ok((
        passed,
        format!("terminal H {h:.4} vs fixed point {oracle:.4} (tol 0.02), terminal kl_est {kl:.4} (need <= 0.05)"),
    ))
}

fn memory() -> CliResult<Check> {
    let problem = toy_problem(1.0, 0.1, 0.1)?;
    let m = 64;
    let cfg = EfpConfig {
        outer_step: 0.1,
        outer_iters: 100,
        particles: m,
        lmc: LmcConfig::constant(0.05, 5, 1),
        init_scale: 1.0,
        seed: 2,
        diagnostics: None,
    };
    struct Counter(usize);
    impl efp_core::duality::DiagnosticsSink for Counter {
        fn observe(&mut self, _: usize, _: &[f64], gibbs: &Ensemble) {
            self.0 = self.0.max(gibbs.len());
        }
    }
    let mut counter = Counter(0);
    let state = efp_train(&problem, &cfg, &mut counter)?;
    let (history, naive) = naive_efp_train(&problem, &cfg)?;
    let expect_naive = m * (cfg.outer_iters + 1);
    let passed = state.peak_particles == m
        && counter.0 == m
        && history.total_particles() == expect_naive
        && naive.peak_particles == expect_naive;
    Ok((
        passed,
        format!(
            "running-average peak {} (observed {}), naive history {} (need {m} and {expect_naive})",
            state.peak_particles,
            counter.0,
            history.total_particles()
        ),
    ))
}

/// Drives both updates with the same LMC samples of a random student–teacher problem.
fn recursion() -> CliResult<Check> {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let problem = make_student_teacher(8, 3, 4, seed, 0.05, 0.05)?;
        let mut rng = data_rng(seed);
        let init = Ensemble::gaussian(32, 3, 1.0, seed)?;
        let mut h = RunningAverages::from_ensemble(&problem, &init);
        let mut history = MixtureHistory::new(init.clone());
        let mut chain = init;
        let lmc = LmcConfig::constant(0.05, 3, seed);
        for t in 0..50u64 {
            let step: f64 = rng.gen_range(0.01..1.0);
            let spec = GibbsSpec::from_averages(&problem, &h.values)?;
            sample_gibbs_in_place(&spec, &mut chain, &lmc, t, 0.0)?;
            h.update(&problem, &chain, step);
            history = naive_efp_step(&history, chain.clone(), step)?;
            for i in 0..problem.n() {
                let brute = mixture_expectation(&history, &problem.features().term(i));
                worst = worst.max((h.values[i] - brute).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max |H - brute force| = {worst:.2e} over 5 seeds, 50 steps (tol 1e-12)")))
}

/// Logistic loss on tanh neurons: `|ℓ'| ≤ 1`, `|h| ≤ 1`.
fn bounded_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, lambda: f64, lambda_prime: f64) -> CliResult<Problem> {
    let losses = (0..n)
        .map(|_| ScalarLoss::Logistic {
            label: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    let inputs = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(Problem::new(losses, FeatureFamily::Neurons { inputs, dim: d }, lambda, lambda_prime)?)
}

/// Coefficients `g = ℓ'(H)` at random averages `H ∈ [-1, 1]^n`.
fn random_coeffs(rng: &mut ChaCha8Rng, problem: &Problem) -> CliResult<Vec<f64>> {
    let h: Vec<f64> = (0..problem.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(problem.dual_coefficients(&h)?)
}

fn weak_duality() -> CliResult<Check> {
    let mut rng = data_rng(60);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for inst in 0..20u64 {
        let n = rng.gen_range(1..=5);
        let d = rng.gen_range(1..=3);
        let lambda = rng.gen_range(0.05..0.5);
        let lambda_prime = rng.gen_range(0.05..0.5);
        let problem = bounded_problem(&mut rng, n, d, lambda, lambda_prime)?;
        let g = random_coeffs(&mut rng, &problem)?;
        let log_z = log_partition(&GibbsSpec::new(&problem, g.clone())?, 100_000, inst)?;
        let dual = dual_value(&problem, &g, &log_z)?;
        let scale = rng.gen_range(0.2..1.5);
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = Ensemble::gaussian(5000, d, scale, 1000 + inst)?;
        let data = base.iter().flat_map(|p| p.iter().zip(&shift).map(|(x, s)| x + s)).collect();
        let ensemble = Ensemble::new(d, data)?;
        let primal = primal_estimate(&problem, &ensemble, 5)?;
        let sigma = (primal.std_err.powi(2) + (lambda * log_z.std_err).powi(2)).sqrt();
        let margin = (primal.value - dual) / sigma;
        min_margin = min_margin.min(margin);
        if margin < -3.0 {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in 20 instances, min (L - D)/sigma = {min_margin:.2}"),
    ))
}

fn density_ratio() -> CliResult<Check> {
    let mut rng = data_rng(70);
    let problem = bounded_problem(&mut rng, 5, 2, 1.0, 0.5)?;
    let a = GibbsSpec::new(&problem, random_coeffs(&mut rng, &problem)?)?;
    let b = GibbsSpec::new(&problem, random_coeffs(&mut rng, &problem)?)?;
    let za = log_partition(&a, 100_000, 1)?;
    let zb = log_partition(&b, 100_000, 2)?;
    let tol = 3.0 * (za.std_err.powi(2) + zb.std_err.powi(2)).sqrt();
    let (lo, hi) = ((-4.0f64).exp() - tol, 4.0f64.exp() + tol);
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut outside = 0;
    for _ in 0..1000 {
        let theta: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let r = log_density_ratio(&a, &b, &theta, za.value, zb.value).exp();
        range = (range.0.min(r), range.1.max(r));
        if !(lo..=hi).contains(&r) {
            outside += 1;
        }
    }
    Ok((
        outside == 0,
        format!(
            "ratios in [{:.4}, {:.4}], bound [{lo:.4}, {hi:.4}], {outside} outside of 1000",
            range.0, range.1
        ),
    ))
}

fn linearization() -> CliResult<Check> {
    let mut rng = data_rng(80);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for inst in 0..3u64 {
        let problem = bounded_problem(&mut rng, 3, 2, 0.1, 0.2)?;
        let mu = Ensemble::gaussian(500, 2, rng.gen_range(0.3..1.2), 2000 + inst)?;
        let spec = GibbsSpec::from_averages(&problem, &problem.empirical_means(&mu))?;
        let at_gibbs = linearized_value_at_gibbs(&spec, &log_partition(&spec, 100_000, inst)?)?;
        // candidates near the base Gaussian, where the near-optimal measures are
        let base_sd = efp_core::duality::base_variance(&problem)?.sqrt();
        for c in 0..20u64 {
            let mean: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let std = base_sd * rng.gen_range(-0.3f64..0.3).exp();
            let cand = linearized_value_gaussian(&spec, &mean, std, 20_000, 100 * inst + c)?;
            let sigma = (at_gibbs.std_err.powi(2) + cand.std_err.powi(2)).sqrt();
            let excess = (at_gibbs.value - cand.value) / sigma;
            worst = worst.max(excess);
            if excess > 3.0 {
                failures += 1;
            }
        }
    }
    Ok((
        failures == 0,
        format!("{failures} of 60 candidates beat the Gibbs measure by > 3 sigma; max (J(q) - J(xi))/sigma = {worst:.2}"),
    ))
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / nb.max(1e-8)
}

fn gradients() -> Check {
    let mut rng = data_rng(90);
    let mut worst_pot: f64 = 0.0;
    for trial in 0..100 {
        let d = 1 + trial % 3;
        let n = rng.gen_range(1..=4);
        let features = if trial % 2 == 0 {
            FeatureFamily::Neurons {
                inputs: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                dim: d,
            }
        } else {
            FeatureFamily::Kernels {
                centers: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                dim: d,
                sigma: 0.7,
            }
        };
        let Ok(problem) = Problem::new(
            vec![ScalarLoss::Squared { target: 0.0 }; n],
            features,
            0.1,
            rng.gen_range(0.0..1.0),
        ) else {
            return (false, "could not build problem".into());
        };
        let g = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let spec = GibbsSpec::new(&problem, g).expect("valid coefficients");
        let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let fd = fd_grad(|t| potential_value(&spec, t), &theta, 1e-5);
        worst_pot = worst_pot.max(rel_err(&potential_grad(&spec, &theta), &fd));
    }
    let cfg = RenderConfig::new(16, 16);
    let mut worst_px: f64 = 0.0;
    for _ in 0..100 {
        let mut theta: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.6..0.6)).collect();
        theta[6] = rng.gen_range(-2.0..2.0);
        theta[7] = rng.gen_range(-2.0..2.0);
        let (row, col) = (rng.gen_range(0..16), rng.gen_range(0..16));
        let fd = fd_grad(|t| pixel_value(t, &cfg, row, col), &theta, 1e-6);
        worst_px = worst_px.max(rel_err(&render_grad(&theta, &cfg, row, col), &fd));
    }
    (
        worst_pot <= 1e-5 && worst_px <= 1e-3,
        format!("max rel err: potential {worst_pot:.2e} (tol 1e-5), render {worst_px:.2e} (tol 1e-3)"),
    )
}

fn stationarity() -> CliResult<Check> {
    let problem = Problem::new(
        vec![ScalarLoss::Squared { target: 0.0 }],
        FeatureFamily::Linear {
            weights: vec![0.0, 0.0],
            dim: 2,
        },
        0.5,
        0.5,
    )?;
    let init = Ensemble::gaussian(5000, 2, 2.0, 100)?;
    let out = sample_gibbs(&GibbsSpec::zero(&problem), &init, &LmcConfig::constant(0.01, 2000, 101))?;
    let (mean, var) = (out.mean(), out.variance());
    let passed = mean.iter().all(|m| m.abs() <= 0.05) && var.iter().all(|v| (0.45..=0.55).contains(v));
    Ok((passed, format!("means {mean:.4?}, variances {var:.4?} (target 0.5 +/- 10%)")))
}

/// 64×64 radial target at `m = 200` and `m = 1000`.
fn image_synthesis() -> CliResult<Check> {
    let start = Instant::now();
    let mut cfg = RunConfig::defaults(Experiment::SynthImage);
    cfg.checkpoint_every = cfg.optimizer.outer_iters;
    let mut runs = Vec::new();
    for m in [200, 1000] {
        cfg.optimizer.particles = m;
        let run = synth_image(&cfg, false)?;
        runs.push(run);
    }
    let secs = start.elapsed().as_secs_f64();
    let (small, large) = (&runs[0], &runs[1]);
    let (s, l) = (small.last(), large.last());
    let gap_small = (s.err_gibbs - s.err_h).abs();
    let gap_large = (l.err_gibbs - l.err_h).abs();
    let reduced = s.err_h <= 0.2 * small.initial_err;
    let parity = l.err_gibbs <= 1.1 * l.err_h;
    let passed = reduced && gap_large < gap_small && parity && secs <= 900.0;
    Ok((
        passed,
        format!(
            "m=200: error {:.5} -> H {:.5} / Gibbs {:.5}; m=1000: H {:.5} / Gibbs {:.5}; \
             |Gibbs - H| {:.2e} (m=200) vs {:.2e} (m=1000); total {:.0}s",
            small.initial_err, s.err_h, s.err_gibbs, l.err_h, l.err_gibbs, gap_small, gap_large, secs
        ),
    ))
}

fn baselines() -> CliResult<Check> {
    let problem = toy_problem(1.0, 0.1, 0.1)?;
    let mut finals = Vec::new();
    for method in [Method::Efp, Method::Mfld, Method::Pda] {
        let mut cfg = toy_config(method);
        cfg.diagnostics.enabled = false;
        finals.push(train(&cfg, &problem, &mut ())?.averages[0]);
    }
    let spread = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - finals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        spread <= 0.05,
        format!(
            "terminal means efp {:.4}, mfld {:.4}, pda {:.4}; max pairwise difference {spread:.4} (tol 0.05)",
            finals[0], finals[1], finals[2]
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_exponential() {
        let pts: Vec<(f64, f64)> = (0..20).map(|t| (t as f64, 2.0 - 0.05 * t as f64)).collect();
        assert!((ls_slope(&pts) + 0.05).abs() < 1e-12);
    }

    #[test]
    fn gap_checks_on_synthetic_rows() {
        let row = |iter: usize, gap: f64| DiagnosticsRow {
            iter,
            primal: 0.0,
            dual: 0.0,
            gap,
            kl_est: gap / 0.01,
            f0: 0.0,
            log_z_stderr: 1e-3,
            entropy_stderr: 1e-3,
            wall_ms: 0.0,
        };
        let rows: Vec<_> = (0..200).map(|t| row(t, 0.1 * (-0.05 * t as f64).exp())).collect();
        assert!(check_gap_convergence(&rows).0);
        assert!(check_gap_rate(&rows).0);
        let flat: Vec<_> = (0..200).map(|t| row(t, 0.1)).collect();
        assert!(!check_gap_convergence(&flat).0);
        assert!(!check_gap_rate(&flat).0);
    }
}
