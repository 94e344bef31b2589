//! Primal and dual objectives and the duality gap.
//!
//! For `g_μ = ℓ'(E_μ[h])` the gap `L(μ) - D(g_μ)` equals `λ KL(μ ‖ μ̂)`,
//! where `μ̂` is the proximal Gibbs measure of `μ`. Both sides are estimated
//! here: the log-partition function by importance sampling from the Gaussian
//! base measure `ν ∝ exp(-λ'|θ|²/λ)`, the entropy by Kozachenko–Leonenko.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::gibbs::GibbsSpec;
use crate::math::{self, digamma_int, exp, ln, ln_unit_ball_volume, sqrt, PI};
use crate::model::{f0_value, Ensemble, Problem};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Monte Carlo samples drawn from one RNG stream.
const MC_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPartitionEstimate {
    /// Estimate of `log ∫ q_g(θ) dθ`.
    pub value: f64,
    /// Jackknife standard error of `value`.
    pub std_err: f64,
    pub samples: usize,
}

/// Variance `λ / (2λ')` of the Gaussian base measure.
pub fn base_variance(problem: &Problem) -> Result<f64> {
    if !(problem.lambda_prime() > 0.0) {
        return Err(Error::Config(
            "λ' must be > 0 for the Gaussian base measure to be proper".into(),
        ));
    }
    Ok(problem.lambda() / (2.0 * problem.lambda_prime()))
}

/// `log ∫ exp(-λ'|θ|²/λ) dθ = (d/2) log(πλ/λ')`.
pub fn log_base_partition(problem: &Problem) -> Result<f64> {
    base_variance(problem)?;
    Ok(0.5 * problem.dim() as f64 * ln(PI * problem.lambda() / problem.lambda_prime()))
}

/// Fills `out` with draws from `N(0, var I_d)`; draw `j` comes from chunk
/// stream `j / MC_CHUNK`, so the draws do not depend on how work is split.
fn base_draws(problem: &Problem, count: usize, seed: u64, round: u64, mut f: impl FnMut(usize, &[f64])) -> Result<()> {
    let sd = sqrt(base_variance(problem)?);
    let d = problem.dim();
    let mut theta = vec![0.0; d];
    let mut j = 0;
    for chunk in 0..count.div_ceil(MC_CHUNK) {
        let mut rng = rng::stream(seed, Purpose::MonteCarlo, round, chunk as u64);
        let end = ((chunk + 1) * MC_CHUNK).min(count);
        while j < end {
            for t in theta.iter_mut() {
                *t = sd * rng::normal(&mut rng);
            }
            f(j, &theta);
            j += 1;
        }
    }
    Ok(())
}

/// `log ∫ q_g`, via `∫ q_g = Z_ν E_ν[exp(-(1/(λn)) Σ g_i h_i)]`.
pub fn log_partition(spec: &GibbsSpec<'_>, mc_samples: usize, seed: u64) -> Result<LogPartitionEstimate> {
    let problem = spec.problem();
    let log_base = log_base_partition(problem)?;
    if spec.is_zero() {
        return Ok(LogPartitionEstimate {
            value: log_base,
            std_err: 0.0,
            samples: mc_samples.max(1),
        });
    }
    if mc_samples < 2 {
        return Err(Error::Config("log-partition estimate needs at least 2 samples".into()));
    }
    let inv_lambda = 1.0 / spec.lambda();
    let mut logw = vec![0.0; mc_samples];
    base_draws(problem, mc_samples, seed, 0, |j, theta| {
        logw[j] = -spec.data_potential(theta) * inv_lambda;
    })?;
    if logw.iter().any(|w| w.is_nan()) {
        return Err(Error::Numerical("NaN importance weight".into()));
    }
    let (lme, std_err) = log_mean_exp_jackknife(&logw);
    Ok(LogPartitionEstimate {
        value: log_base + lme,
        std_err,
        samples: mc_samples,
    })
}

/// `log mean exp(w)` and its jackknife standard error.
fn log_mean_exp_jackknife(logw: &[f64]) -> (f64, f64) {
    let n = logw.len();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logw.iter().map(|w| exp(w - max)).collect();
    let total: f64 = shifted.iter().sum();
    let full = max + ln(total / n as f64);
    let nm1 = (n - 1) as f64;
    let loo: Vec<f64> = shifted
        .iter()
        .map(|s| max + ln(((total - s) / nm1).max(f64::MIN_POSITIVE)))
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = nm1 / n as f64 * loo.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>();
    (full, sqrt(var))
}

/// `D(g) = -(1/n) Σ ℓ_i*(g_i) - λ log ∫ q_g`.
pub fn dual_value(problem: &Problem, g: &[f64], log_z: &LogPartitionEstimate) -> Result<f64> {
    problem.check_len(g)?;
    let mut conj = 0.0;
    for (l, &gi) in problem.losses().iter().zip(g) {
        conj += l.conjugate(gi)?;
    }
    Ok(-conj / problem.n() as f64 - problem.lambda() * log_z.value)
}

/// Negative differential entropy `Ent(μ) = ∫ μ log μ` estimated from particles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Plug-in standard error from the spread of the log neighbour distances.
    pub std_err: f64,
}

/// Kozachenko–Leonenko estimate of `Ent(μ)` (the negative entropy).
pub fn entropy_knn(ensemble: &Ensemble, k: usize) -> Result<f64> {
    entropy_knn_estimate(ensemble, k).map(|e| e.value)
}

pub fn entropy_knn_estimate(ensemble: &Ensemble, k: usize) -> Result<EntropyEstimate> {
    let m = ensemble.len();
    let d = ensemble.dim();
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let distinct = count_distinct(ensemble);
    if distinct < k + 1 {
        return Err(Error::Degenerate(format!(
            "{distinct} distinct points, need at least {}",
            k + 1
        )));
    }
    let mut log_r = kth_neighbor_log_distances(ensemble.as_slice(), d, k);
    if log_r.iter().any(|r| !r.is_finite()) {
        log::warn!("duplicate particles in entropy estimate; applying jitter");
        let jittered = jitter(ensemble);
        log_r = kth_neighbor_log_distances(&jittered, d, k);
    }
    let mean_log = log_r.iter().sum::<f64>() / m as f64;
    let var = log_r.iter().map(|l| (l - mean_log) * (l - mean_log)).sum::<f64>() / (m.max(2) - 1) as f64;
    let h = digamma_int(m) - digamma_int(k) + ln_unit_ball_volume(d) + d as f64 * mean_log;
    Ok(EntropyEstimate {
        value: -h,
        std_err: d as f64 * sqrt(var / m as f64),
    })
}

fn count_distinct(ensemble: &Ensemble) -> usize {
    let mut rows: Vec<&[f64]> = ensemble.iter().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    rows.dedup();
    rows.len()
}

fn jitter(ensemble: &Ensemble) -> Vec<f64> {
    let scale = ensemble
        .as_slice()
        .iter()
        .fold(0.0_f64, |a, x| a.max(x.abs()))
        .max(1.0)
        * 1e-12;
    let mut out = ensemble.as_slice().to_vec();
    let mut rng = rng::stream(0, Purpose::Jitter, 0, 0);
    for x in out.iter_mut() {
        *x += scale * rng::normal(&mut rng);
    }
    out
}

/// `ln R_k(r)` for every point, by exhaustive search.
fn kth_neighbor_log_distances(data: &[f64], d: usize, k: usize) -> Vec<f64> {
    let m = data.len() / d;
    let mut best = vec![f64::INFINITY; k];
    let mut out = Vec::with_capacity(m);
    for r in 0..m {
        let p = &data[r * d..(r + 1) * d];
        best.iter_mut().for_each(|b| *b = f64::INFINITY);
        for s in 0..m {
            if s == r {
                continue;
            }
            let q = &data[s * d..(s + 1) * d];
            let mut d2 = 0.0;
            for (a, b) in p.iter().zip(q) {
                d2 += (a - b) * (a - b);
            }
            if d2 < best[k - 1] {
                // insertion into the sorted list of the k smallest
                let mut i = k - 1;
                while i > 0 && best[i - 1] > d2 {
                    best[i] = best[i - 1];
                    i -= 1;
                }
                best[i] = d2;
            }
        }
        out.push(0.5 * ln(best[k - 1]));
    }
    out
}

/// Primal objective of the particle measure, with its estimator spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalEstimate {
    pub value: f64,
    pub std_err: f64,
    /// `F_0` at the particle measure.
    pub f0: f64,
    pub second_moment: f64,
    pub entropy: f64,
}

/// `L(ρ) = F_0(ρ) + λ' E_ρ|θ|² + λ Ent(ρ)` for the empirical measure `ρ`.
pub fn primal_estimate(problem: &Problem, ensemble: &Ensemble, k: usize) -> Result<PrimalEstimate> {
    let means = problem.empirical_means(ensemble);
    let f0 = f0_value(problem, &means)?;
    let second_moment = ensemble.mean_sq_norm();
    let ent = entropy_knn_estimate(ensemble, k)?;
    Ok(PrimalEstimate {
        value: f0 + problem.lambda_prime() * second_moment + problem.lambda() * ent.value,
        std_err: problem.lambda() * ent.std_err,
        f0,
        second_moment,
        entropy: ent.value,
    })
}

/// Estimator settings for diagnostics rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    /// Emit a row every `cadence` outer iterations (and at the last one).
    pub cadence: usize,
    pub mc_samples: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            cadence: 1,
            mc_samples: 20_000,
            knn_k: 5,
            seed: 0,
        }
    }
}

impl DiagnosticsConfig {
    /// Every iteration up to 500 iterations, otherwise about 500 rows.
    pub fn default_cadence(outer_iters: usize) -> usize {
        if outer_iters <= 500 {
            1
        } else {
            outer_iters.div_ceil(500)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// `gap / λ`.
    pub kl_est: f64,
    /// `F_0` at the tracked averages.
    pub f0: f64,
    pub log_z_stderr: f64,
    pub entropy_stderr: f64,
    pub wall_ms: f64,
}

impl DiagnosticsRow {
    /// Combined standard error of `gap` from both estimators.
    pub fn sigma_est(&self, lambda: f64) -> f64 {
        let a = lambda * self.log_z_stderr;
        let b = lambda * self.entropy_stderr;
        sqrt(a * a + b * b)
    }

    /// Same row with the wall-clock field cleared, for reproducibility checks.
    pub fn without_timing(mut self) -> Self {
        self.wall_ms = 0.0;
        self
    }
}

/// Receives per-iteration information from the optimisers.
pub trait DiagnosticsSink {
    fn record(&mut self, _row: &DiagnosticsRow) {}
    /// Called after every outer iteration with the tracked averages and the
    /// particles of the latest Gibbs sample.
    fn observe(&mut self, _iter: usize, _averages: &[f64], _gibbs: &Ensemble) {}
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

impl DiagnosticsSink for () {}

impl DiagnosticsSink for Vec<DiagnosticsRow> {
    fn record(&mut self, row: &DiagnosticsRow) {
        self.push(*row);
    }
}

/// Gap between the particle measure `gibbs` and the dual point `g = ℓ'(averages)`.
///
/// The primal side is evaluated on `gibbs` alone, so the gap is a weak-duality
/// gap and is non-negative up to estimator noise whatever `averages` holds;
/// when `averages` are the particle means it is `λ KL(ρ ‖ ρ̂)`.
pub fn diagnose(
    problem: &Problem,
    averages: &[f64],
    gibbs: &Ensemble,
    iter: usize,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsRow> {
    let spec = GibbsSpec::from_averages(problem, averages)?;
    let log_z = log_partition(&spec, cfg.mc_samples, cfg.seed ^ iter as u64)?;
    let dual = dual_value(problem, spec.coeffs(), &log_z)?;
    let primal = primal_estimate(problem, gibbs, cfg.knn_k)?;
    let gap = primal.value - dual;
    Ok(DiagnosticsRow {
        iter,
        primal: primal.value,
        dual,
        gap,
        kl_est: gap / problem.lambda(),
        f0: f0_value(problem, averages)?,
        log_z_stderr: log_z.std_err,
        entropy_stderr: primal.std_err / problem.lambda(),
        wall_ms: 0.0,
    })
}

/// Reporting-only constants from the discrete-time analysis, with `γ = 1`
/// so that `η = outer_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    /// Density-ratio bound `exp(4/λ)`.
    pub c_lambda: f64,
    /// `⌈1/(γη)⌉`.
    pub t0: usize,
    /// `7η(1 + C_λ)/λ`.
    pub floor: f64,
}

impl TheoryConstants {
    pub fn new(lambda: f64, outer_step: f64) -> Self {
        let c_lambda = exp(4.0 / lambda);
        Self {
            c_lambda,
            t0: libm::ceil(1.0 / outer_step - 1e-12) as usize,
            floor: 7.0 * outer_step * (1.0 + c_lambda) / lambda,
        }
    }
}

/// The linear functional whose entropic minimiser is the Gibbs measure:
/// `J(ξ) = ∫ (1/n) Σ g_i h_i dξ + λ KL(ξ ‖ ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedValue {
    pub value: f64,
    pub std_err: f64,
}

/// `J(q_g / Z) = -λ log(Z_g / Z_ν)`.
pub fn linearized_value_at_gibbs(spec: &GibbsSpec<'_>, log_z: &LogPartitionEstimate) -> Result<LinearizedValue> {
    let log_base = log_base_partition(spec.problem())?;
    Ok(LinearizedValue {
        value: -spec.lambda() * (log_z.value - log_base),
        std_err: spec.lambda() * log_z.std_err,
    })
}

/// `J(N(mean, std² I))`: Monte Carlo for the linear term, closed form for the KL.
pub fn linearized_value_gaussian(
    spec: &GibbsSpec<'_>,
    mean: &[f64],
    std: f64,
    samples: usize,
    seed: u64,
) -> Result<LinearizedValue> {
    let problem = spec.problem();
    let v = base_variance(problem)?;
    let d = problem.dim();
    if mean.len() != d || !(std > 0.0) || samples < 2 {
        return Err(Error::Config("bad Gaussian candidate".into()));
    }
    let s2 = std * std;
    let kl = 0.5
        * (d as f64 * (s2 / v - 1.0 - ln(s2 / v)) + math::norm_sq(mean) / v);
    let mut vals = Vec::with_capacity(samples);
    let mut theta = vec![0.0; d];
    for chunk in 0..samples.div_ceil(MC_CHUNK) {
        let mut rng = rng::stream(seed, Purpose::MonteCarlo, 1, chunk as u64);
        for _ in (chunk * MC_CHUNK)..((chunk + 1) * MC_CHUNK).min(samples) {
            for (t, m) in theta.iter_mut().zip(mean) {
                *t = m + std * rng::normal(&mut rng);
            }
            vals.push(spec.data_potential(&theta));
        }
    }
    let mean_val = vals.iter().sum::<f64>() / samples as f64;
    let var = vals.iter().map(|x| (x - mean_val) * (x - mean_val)).sum::<f64>() / (samples - 1) as f64;
    Ok(LinearizedValue {
        value: mean_val + spec.lambda() * kl,
        std_err: sqrt(var / samples as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureFamily, ScalarLoss};

    fn gaussian_problem(d: usize, lambda: f64, lambda_prime: f64) -> Problem {
        Problem::new(
            vec![ScalarLoss::Squared { target: 0.0 }],
            FeatureFamily::Linear {
                weights: vec![1.0; d],
                dim: d,
            },
            lambda,
            lambda_prime,
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_give_exact_gaussian_partition() {
        let p = gaussian_problem(2, 0.3, 0.3);
        let est = log_partition(&GibbsSpec::zero(&p), 10, 0).unwrap();
        assert_eq!(est.std_err, 0.0);
        assert!((est.value - PI.ln()).abs() < 1e-12);
        assert!((est.value - 1.144_73).abs() < 1e-5);

        let p = gaussian_problem(3, 0.02, 0.5);
        let est = log_partition(&GibbsSpec::zero(&p), 10, 0).unwrap();
        let oracle = 1.5 * (PI * 0.02 / 0.5).ln();
        assert!((est.value - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_partition_needs_proper_base() {
        let p = gaussian_problem(1, 0.3, 0.0);
        assert!(matches!(
            log_partition(&GibbsSpec::zero(&p), 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn linear_feature_partition_matches_completed_square() {
        // ∫ exp(-(cθ + λ'θ²)/λ) dθ = √(πλ/λ') exp(c²/(4λλ'))
        let (lambda, lp, c) = (0.5, 0.5, 0.4);
        let p = gaussian_problem(1, lambda, lp);
        let spec = GibbsSpec::new(&p, vec![c]).unwrap();
        let est = log_partition(&spec, 50_000, 3).unwrap();
        let oracle = 0.5 * (PI * lambda / lp).ln() + c * c / (4.0 * lambda * lp);
        assert!(est.std_err > 0.0);
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.std_err,
            "{} vs {} (se {})",
            est.value,
            oracle,
            est.std_err
        );
    }

    #[test]
    fn dual_at_zero_coefficients() {
        let (lambda, lp) = (0.1, 0.4);
        let p = gaussian_problem(1, lambda, lp);
        let spec = GibbsSpec::zero(&p);
        let lz = log_partition(&spec, 10, 0).unwrap();
        let d = dual_value(&p, spec.coeffs(), &lz).unwrap();
        let oracle = -lambda * 0.5 * (PI * lambda / lp).ln();
        assert!((d - oracle).abs() < 1e-14);
    }

    #[test]
    fn jackknife_of_constant_weights_is_zero() {
        let (v, se) = log_mean_exp_jackknife(&[0.3; 10]);
        assert!((v - 0.3).abs() < 1e-15);
        assert!(se < 1e-14);
    }

    #[test]
    fn entropy_needs_enough_distinct_points() {
        let e = Ensemble::from_rows(&[[1.0], [1.0], [1.0], [2.0]]).unwrap();
        assert!(matches!(entropy_knn(&e, 2), Err(Error::Degenerate(_))));
        assert!(matches!(entropy_knn(&e, 0), Err(Error::Config(_))));
    }

    #[test]
    fn entropy_tolerates_duplicates() {
        let mut rows: Vec<[f64; 1]> = (0..200).map(|i| [i as f64 / 200.0]).collect();
        rows.push([0.5]);
        let e = Ensemble::from_rows(&rows).unwrap();
        let v = entropy_knn(&e, 1).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn theory_constants() {
        let c = TheoryConstants::new(1.0, 0.05);
        assert!((c.c_lambda - 4.0_f64.exp()).abs() < 1e-12);
        assert_eq!(c.t0, 20);
        assert_eq!(TheoryConstants::new(1.0, 0.01).t0, 100);
        assert_eq!(TheoryConstants::new(1.0, 0.3).t0, 4);
    }
}
