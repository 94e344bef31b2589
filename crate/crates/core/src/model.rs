//! Finite-sum problem definition: scalar losses, feature maps, particles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, dot, exp, ln, sigmoid, softplus, tanh};
use crate::raster::{self, RenderConfig, TRIANGLE_DIM};
use crate::{Error, Result};

/// `(ℓ(z), ℓ'(z), ℓ''(z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub deriv: f64,
    pub second_deriv: f64,
}

/// Convex scalar loss applied to one tracked average `E_μ[h_i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarLoss {
    /// `0.5 (z - target)²`
    Squared { target: f64 },
    /// `log(1 + exp(-label·z))`, label in {-1, +1}
    Logistic { label: f64 },
    /// `-log z` on `z > 0`
    NegLog,
}

impl ScalarLoss {
    pub fn eval(&self, z: f64) -> Result<LossEval> {
        match *self {
            ScalarLoss::Squared { target } => Ok(LossEval {
                value: 0.5 * (z - target) * (z - target),
                deriv: z - target,
                second_deriv: 1.0,
            }),
            ScalarLoss::Logistic { label } => {
                let m = label * z;
                Ok(LossEval {
                    value: softplus(-m),
                    deriv: -label * sigmoid(-m),
                    second_deriv: sigmoid(m) * sigmoid(-m),
                })
            }
            ScalarLoss::NegLog => {
                if !(z > 0.0) {
                    return Err(Error::Domain(format!("-log evaluated at z = {z} <= 0")));
                }
                Ok(LossEval {
                    value: -ln(z),
                    deriv: -1.0 / z,
                    second_deriv: 1.0 / (z * z),
                })
            }
        }
    }

    pub fn value(&self, z: f64) -> Result<f64> {
        self.eval(z).map(|e| e.value)
    }

    pub fn deriv(&self, z: f64) -> Result<f64> {
        self.eval(z).map(|e| e.deriv)
    }

    /// Fenchel conjugate `ℓ*(g) = sup_z { z g - ℓ(z) }`.
    pub fn conjugate(&self, g: f64) -> Result<f64> {
        match *self {
            ScalarLoss::Squared { target } => Ok(0.5 * g * g + target * g),
            ScalarLoss::Logistic { label } => {
                // p = -g·y must lie in [0, 1]; ℓ* is the negative binary entropy of p
                let p = -g * label;
                if !(-1e-15..=1.0 + 1e-15).contains(&p) {
                    return Err(Error::Domain(format!(
                        "logistic conjugate needs g·y in [-1, 0], got {}",
                        -p
                    )));
                }
                let p = p.clamp(0.0, 1.0);
                Ok(xlogx(p) + xlogx(1.0 - p))
            }
            ScalarLoss::NegLog => {
                if !(g < 0.0) {
                    return Err(Error::Domain(format!(
                        "conjugate of -log needs g < 0, got {g}"
                    )));
                }
                Ok(-1.0 - ln(-g))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ScalarLoss::Squared { target } if !target.is_finite() => {
                Err(Error::Config("squared-loss target must be finite".into()))
            }
            ScalarLoss::Logistic { label } if label != 1.0 && label != -1.0 => {
                Err(Error::Config(format!("logistic label must be ±1, got {label}")))
            }
            _ => Ok(()),
        }
    }
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * ln(x)
    }
}

pub fn loss_eval(loss: &ScalarLoss, z: f64) -> Result<LossEval> {
    loss.eval(z)
}

pub fn loss_conjugate(loss: &ScalarLoss, g: f64) -> Result<f64> {
    loss.conjugate(g)
}

/// Normalising constant of the isotropic Gaussian kernel, `(2πσ²)^{-d/2}`.
pub fn gaussian_kernel_peak(sigma: f64, dim: usize) -> f64 {
    exp(-0.5 * dim as f64 * ln(2.0 * math::PI * sigma * sigma))
}

/// One feature `h: R^d → R`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `tanh(x · θ)`
    Neuron { input: Vec<f64> },
    /// `g_σ(θ - center)`, the normalised Gaussian density
    GaussianKernel { center: Vec<f64>, sigma: f64 },
    /// `w · θ`
    Linear { weights: Vec<f64> },
    /// Pixel `(row, col)` of the rendered triangle `θ ∈ R^8`
    TrianglePixel {
        row: usize,
        col: usize,
        config: RenderConfig,
    },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Neuron { input } => input.len(),
            FeatureMap::GaussianKernel { center, .. } => center.len(),
            FeatureMap::Linear { weights } => weights.len(),
            FeatureMap::TrianglePixel { .. } => TRIANGLE_DIM,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            FeatureMap::Neuron { input } => tanh(dot(input, theta)),
            FeatureMap::GaussianKernel { center, sigma } => kernel_value(center, *sigma, theta),
            FeatureMap::Linear { weights } => dot(weights, theta),
            FeatureMap::TrianglePixel { row, col, config } => {
                raster::pixel_value(theta, config, *row, *col)
            }
        }
    }

    /// Writes `∇h(θ)` into `out`.
    pub fn grad(&self, theta: &[f64], out: &mut [f64]) {
        match self {
            FeatureMap::Neuron { input } => {
                let t = tanh(dot(input, theta));
                let s = 1.0 - t * t;
                for (o, x) in out.iter_mut().zip(input) {
                    *o = s * x;
                }
            }
            FeatureMap::GaussianKernel { center, sigma } => {
                let h = kernel_value(center, *sigma, theta);
                let inv = 1.0 / (sigma * sigma);
                for ((o, t), c) in out.iter_mut().zip(theta).zip(center) {
                    *o = -h * (t - c) * inv;
                }
            }
            FeatureMap::Linear { weights } => out.copy_from_slice(weights),
            FeatureMap::TrianglePixel { row, col, config } => {
                out.copy_from_slice(&raster::render_grad(theta, config, *row, *col));
            }
        }
    }
}

fn kernel_value(center: &[f64], sigma: f64, theta: &[f64]) -> f64 {
    let r2: f64 = center.iter().zip(theta).map(|(c, t)| (t - c) * (t - c)).sum();
    gaussian_kernel_peak(sigma, center.len()) * exp(-0.5 * r2 / (sigma * sigma))
}

/// The `n` features of a problem, stored so that all of them can be
/// evaluated for one `θ` in a single pass.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFamily {
    /// Row-major `n × d` inputs; `h_i(θ) = tanh(x_i · θ)`.
    Neurons { inputs: Vec<f64>, dim: usize },
    /// Row-major `n × d` centres; `h_i(θ) = g_σ(θ - ζ_i)`.
    Kernels { centers: Vec<f64>, dim: usize, sigma: f64 },
    /// Row-major `n × d` weights; `h_i(θ) = w_i · θ`.
    Linear { weights: Vec<f64>, dim: usize },
    /// All `W·H` pixels of one soft triangle.
    Triangles(RenderConfig),
}

impl FeatureFamily {
    pub fn len(&self) -> usize {
        match self {
            FeatureFamily::Neurons { inputs: rows, dim }
            | FeatureFamily::Kernels { centers: rows, dim, .. }
            | FeatureFamily::Linear { weights: rows, dim } => rows.len() / dim,
            FeatureFamily::Triangles(cfg) => cfg.pixels(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureFamily::Neurons { dim, .. }
            | FeatureFamily::Kernels { dim, .. }
            | FeatureFamily::Linear { dim, .. } => *dim,
            FeatureFamily::Triangles(_) => TRIANGLE_DIM,
        }
    }

    /// Upper bound on `sup |h_i|`, when one exists.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            FeatureFamily::Neurons { .. } | FeatureFamily::Triangles(_) => Some(1.0),
            FeatureFamily::Kernels { dim, sigma, .. } => Some(gaussian_kernel_peak(*sigma, *dim)),
            FeatureFamily::Linear { .. } => None,
        }
    }

    /// The `i`-th feature as a standalone map.
    pub fn term(&self, i: usize) -> FeatureMap {
        match self {
            FeatureFamily::Neurons { inputs, dim } => FeatureMap::Neuron {
                input: inputs[i * dim..(i + 1) * dim].to_vec(),
            },
            FeatureFamily::Kernels { centers, dim, sigma } => FeatureMap::GaussianKernel {
                center: centers[i * dim..(i + 1) * dim].to_vec(),
                sigma: *sigma,
            },
            FeatureFamily::Linear { weights, dim } => FeatureMap::Linear {
                weights: weights[i * dim..(i + 1) * dim].to_vec(),
            },
            FeatureFamily::Triangles(cfg) => FeatureMap::TrianglePixel {
                row: i / cfg.width,
                col: i % cfg.width,
                config: *cfg,
            },
        }
    }

    /// Adds `weight · h_i(θ)` to `acc[i]` for every `i`.
    pub fn accumulate(&self, theta: &[f64], weight: f64, acc: &mut [f64]) {
        match self {
            FeatureFamily::Neurons { inputs, dim } => {
                for (a, x) in acc.iter_mut().zip(inputs.chunks_exact(*dim)) {
                    *a += weight * tanh(dot(x, theta));
                }
            }
            FeatureFamily::Kernels { centers, dim, sigma } => {
                let peak = gaussian_kernel_peak(*sigma, *dim);
                let inv = 0.5 / (sigma * sigma);
                for (a, c) in acc.iter_mut().zip(centers.chunks_exact(*dim)) {
                    let r2: f64 = c.iter().zip(theta).map(|(c, t)| (t - c) * (t - c)).sum();
                    *a += weight * peak * exp(-r2 * inv);
                }
            }
            FeatureFamily::Linear { weights, dim } => {
                for (a, w) in acc.iter_mut().zip(weights.chunks_exact(*dim)) {
                    *a += weight * dot(w, theta);
                }
            }
            FeatureFamily::Triangles(cfg) => raster::accumulate_render(theta, cfg, weight, acc),
        }
    }

    /// Writes `h_i(θ)` for every `i` into `out`.
    pub fn eval_all(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        self.accumulate(theta, 1.0, out);
    }

    /// Writes `Σ_i coeffs[i] ∇h_i(θ)` into `out`.
    pub fn weighted_grad(&self, theta: &[f64], coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match self {
            FeatureFamily::Neurons { inputs, dim } => {
                for (&c, x) in coeffs.iter().zip(inputs.chunks_exact(*dim)) {
                    if c == 0.0 {
                        continue;
                    }
                    let t = tanh(dot(x, theta));
                    let s = c * (1.0 - t * t);
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o += s * xi;
                    }
                }
            }
            FeatureFamily::Kernels { centers, dim, sigma } => {
                let peak = gaussian_kernel_peak(*sigma, *dim);
                let inv = 1.0 / (sigma * sigma);
                for (&c, z) in coeffs.iter().zip(centers.chunks_exact(*dim)) {
                    if c == 0.0 {
                        continue;
                    }
                    let r2: f64 = z.iter().zip(theta).map(|(z, t)| (t - z) * (t - z)).sum();
                    let s = -c * peak * exp(-0.5 * r2 * inv) * inv;
                    for ((o, t), zi) in out.iter_mut().zip(theta).zip(z) {
                        *o += s * (t - zi);
                    }
                }
            }
            FeatureFamily::Linear { weights, dim } => {
                for (&c, w) in coeffs.iter().zip(weights.chunks_exact(*dim)) {
                    for (o, wi) in out.iter_mut().zip(w) {
                        *o += c * wi;
                    }
                }
            }
            FeatureFamily::Triangles(cfg) => {
                out.copy_from_slice(&raster::weighted_grad(theta, cfg, coeffs));
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FeatureFamily::Neurons { inputs: rows, dim }
            | FeatureFamily::Kernels { centers: rows, dim, .. }
            | FeatureFamily::Linear { weights: rows, dim } => {
                if *dim == 0 {
                    return Err(Error::Config("parameter dimension must be >= 1".into()));
                }
                if rows.len() % dim != 0 {
                    return Err(Error::Config("feature rows are not a multiple of d".into()));
                }
                if rows.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("feature data must be finite".into()));
                }
            }
            FeatureFamily::Triangles(cfg) => cfg.validate()?,
        }
        if let FeatureFamily::Kernels { sigma, .. } = self {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config("kernel bandwidth must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// `min_μ (1/n) Σ ℓ_i(E_μ[h_i]) + λ' E_μ[|θ|²] + λ Ent(μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    losses: Vec<ScalarLoss>,
    features: FeatureFamily,
    lambda: f64,
    lambda_prime: f64,
}

impl Problem {
    pub fn new(
        losses: Vec<ScalarLoss>,
        features: FeatureFamily,
        lambda: f64,
        lambda_prime: f64,
    ) -> Result<Self> {
        features.validate()?;
        if losses.is_empty() {
            return Err(Error::Config("problem needs at least one term".into()));
        }
        if losses.len() != features.len() {
            return Err(Error::Config(format!(
                "{} losses but {} features",
                losses.len(),
                features.len()
            )));
        }
        for l in &losses {
            l.validate()?;
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
        }
        if !(lambda_prime >= 0.0 && lambda_prime.is_finite()) {
            return Err(Error::Config(format!(
                "lambda' must be >= 0, got {lambda_prime}"
            )));
        }
        Ok(Self {
            losses,
            features,
            lambda,
            lambda_prime,
        })
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn losses(&self) -> &[ScalarLoss] {
        &self.losses
    }

    pub fn features(&self) -> &FeatureFamily {
        &self.features
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_prime(&self) -> f64 {
        self.lambda_prime
    }

    /// Same data, different regularisation.
    pub fn with_regularization(&self, lambda: f64, lambda_prime: f64) -> Result<Self> {
        Self::new(self.losses.clone(), self.features.clone(), lambda, lambda_prime)
    }

    /// `g_i = ℓ'_i(H_i)`.
    pub fn dual_coefficients(&self, averages: &[f64]) -> Result<Vec<f64>> {
        self.check_len(averages)?;
        self.losses
            .iter()
            .zip(averages)
            .map(|(l, &h)| l.deriv(h))
            .collect()
    }

    /// `(1/m) Σ_r h_i(θ_r)` for every `i`.
    pub fn empirical_means(&self, ensemble: &Ensemble) -> Vec<f64> {
        let mut acc = vec![0.0; self.n()];
        let w = 1.0 / ensemble.len() as f64;
        for theta in ensemble.iter() {
            self.features.accumulate(theta, w, &mut acc);
        }
        acc
    }

    pub(crate) fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::Config(format!(
                "expected a vector of length {}, got {}",
                self.n(),
                v.len()
            )));
        }
        Ok(())
    }
}

/// `F_0 = (1/n) Σ ℓ_i(H_i)`.
pub fn f0_value(problem: &Problem, averages: &[f64]) -> Result<f64> {
    problem.check_len(averages)?;
    let mut s = 0.0;
    for (l, &h) in problem.losses().iter().zip(averages) {
        s += l.value(h)?;
    }
    Ok(s / problem.n() as f64)
}

/// Mean-field prediction `(1/m) Σ_r h(θ_r)`.
pub fn predictor_value(ensemble: &Ensemble, feature: &FeatureMap) -> f64 {
    let s: f64 = ensemble.iter().map(|t| feature.value(t)).sum();
    s / ensemble.len() as f64
}

/// `m` particles in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("particles need dimension >= 1".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} coordinates do not form a non-empty set of {dim}-vectors",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "particle {} has a non-finite coordinate",
                i / dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::Config("ragged particle rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(dim, data)
    }

    /// Draws `m` particles from `N(0, scale² I)`.
    pub fn gaussian(m: usize, dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut data = vec![0.0; m * dim];
        for (r, p) in data.chunks_exact_mut(dim).enumerate() {
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Init, 0, r as u64);
            for x in p {
                *x = scale * crate::rng::normal(&mut rng);
            }
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub(crate) fn iter_mut(&mut self) -> core::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mean of `|θ|²` over particles.
    pub fn mean_sq_norm(&self) -> f64 {
        self.iter().map(math::norm_sq).sum::<f64>() / self.len() as f64
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for p in self.iter() {
            for (m, x) in mu.iter_mut().zip(p) {
                *m += x;
            }
        }
        let inv = 1.0 / self.len() as f64;
        mu.iter_mut().for_each(|m| *m *= inv);
        mu
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let mu = self.mean();
        let mut var = vec![0.0; self.dim];
        for p in self.iter() {
            for ((v, x), m) in var.iter_mut().zip(p).zip(&mu) {
                *v += (x - m) * (x - m);
            }
        }
        let inv = 1.0 / (self.len().max(2) - 1) as f64;
        var.iter_mut().for_each(|v| *v *= inv);
        var
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.dim, self.data.iter().map(|x| c * x).collect())
    }
}
