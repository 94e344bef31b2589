//! Synthetic problem builders.

use efp_core::math::{cos, norm_sq, sqrt};
use efp_core::model::{FeatureFamily, Problem, ScalarLoss};
use efp_core::raster::RenderConfig;
use efp_core::rng::{self, Purpose};
use efp_core::Result;

/// Student–teacher regression: inputs uniform on the unit sphere of `R^d`,
/// labels `y = (1/w) Σ_j cos(a_j · x)` from `w` Gaussian teacher neurons
/// (all zero when `w = 0`), tanh student neurons, squared loss.
pub fn make_student_teacher(
    n: usize,
    d: usize,
    teacher_width: usize,
    seed: u64,
    lambda: f64,
    lambda_prime: f64,
) -> Result<Problem> {
    let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
    let mut inputs = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut x: Vec<f64> = (0..d).map(|_| rng::normal(&mut rng)).collect();
        let r = sqrt(norm_sq(&x));
        if r == 0.0 {
            x[0] = 1.0;
        } else {
            x.iter_mut().for_each(|v| *v /= r);
        }
        inputs.extend(x);
    }
    let mut teacher_rng = rng::stream(seed, Purpose::Data, 1, 0);
    let teacher: Vec<f64> = (0..teacher_width * d)
        .map(|_| rng::normal(&mut teacher_rng))
        .collect();
    let losses = inputs
        .chunks_exact(d)
        .map(|x| {
            let target = if teacher_width == 0 {
                0.0
            } else {
                teacher
                    .chunks_exact(d)
                    .map(|a| cos(efp_core::math::dot(a, x)))
                    .sum::<f64>()
                    / teacher_width as f64
            };
            ScalarLoss::Squared { target }
        })
        .collect();
    Problem::new(losses, FeatureFamily::Neurons { inputs, dim: d }, lambda, lambda_prime)
}

/// Mixture density estimation: `-log` losses on Gaussian-kernel features
/// centred at the observations (row-major `n × d`).
pub fn make_density_problem(
    observations: &[f64],
    dim: usize,
    sigma: f64,
    lambda: f64,
    lambda_prime: f64,
) -> Result<Problem> {
    let n = observations.len().checked_div(dim).unwrap_or(0);
    Problem::new(
        vec![ScalarLoss::NegLog; n],
        FeatureFamily::Kernels {
            centers: observations.to_vec(),
            dim,
            sigma,
        },
        lambda,
        lambda_prime,
    )
}

/// Image fitting: squared loss per pixel against a row-major target.
pub fn make_image_problem(target: &[f64], cfg: RenderConfig, lambda: f64, lambda_prime: f64) -> Result<Problem> {
    if target.len() != cfg.pixels() {
        return Err(efp_core::Error::Config(format!(
            "target has {} pixels, expected {}x{}",
            target.len(),
            cfg.width,
            cfg.height
        )));
    }
    Problem::new(
        target.iter().map(|&t| ScalarLoss::Squared { target: t }).collect(),
        FeatureFamily::Triangles(cfg),
        lambda,
        lambda_prime,
    )
}

/// Radial gradient test target: bright centre fading towards the corners,
/// values in `[0.1, 0.7]`.
pub fn radial_target(width: usize, height: usize) -> Vec<f64> {
    let cfg = RenderConfig::new(width, height);
    let rmax = sqrt(0.5);
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = cfg.pixel_center(row, col);
            let r = sqrt(x * x + y * y) / rmax;
            out.push(0.1 + 0.6 * (1.0 - r).max(0.0));
        }
    }
    out
}

/// Draws `n` points from an equal mixture of Gaussians at `centers`.
pub fn gaussian_mixture_sample(centers: &[f64], dim: usize, spread: f64, n: usize, seed: u64) -> Vec<f64> {
    let k = centers.len() / dim;
    let mut rng = rng::stream(seed, Purpose::Data, 2, 0);
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        let c = &centers[(i % k) * dim..(i % k + 1) * dim];
        for &ci in c {
            out.push(ci + spread * rng::normal(&mut rng));
        }
    }
    out
}
