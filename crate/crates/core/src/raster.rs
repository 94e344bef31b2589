//! Soft single-channel triangle renderer with analytic parameter gradients.
//!
//! A particle `θ ∈ R^8` is `[x0, y0, x1, y1, x2, y2, c, a]`: three vertices in
//! image-plane coordinates, an intensity logit `c` and an opacity logit `a`.
//! The image plane is centred on the origin: pixel centres of a `W × H` image
//! lie in `(-0.5, 0.5)²`, so a mean-zero Gaussian over `θ` scatters triangles
//! around the middle of the picture.
//!
//! Pixel value:
//!
//! ```text
//! h_p(θ) = σ(a) σ(c) s² Π_e σ(κ s d_e(p))
//! ```
//!
//! where `d_e(p)` is the signed distance from pixel centre `p` to edge `e`
//! (positive on the left of the directed edge), `s` is a smoothed sign of the
//! signed area, so the interior is positive for either winding, and `κ` is the
//! edge sharpness per unit of image-plane length. The `s²` factor makes a
//! zero-area triangle render as nothing instead of a faint blob.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sigmoid, sqrt};
use crate::model::Ensemble;

/// Number of parameters per triangle.
pub const TRIANGLE_DIM: usize = 8;

/// Below this value of `κ s d_e` the edge factor is under 5e-18 and the pixel
/// is treated as exactly empty.
const CULL: f64 = 40.0;
/// Width of the band around zero area over which the orientation sign is
/// smoothed.
const AREA_EPS: f64 = 1e-9;
const LEN_EPS_SQ: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Edge sharpness `κ` per unit of image-plane length; the soft edge is
    /// roughly `width / κ` pixels wide.
    pub sharpness: f64,
}

impl RenderConfig {
    pub const DEFAULT_SHARPNESS: f64 = 50.0;

    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sharpness: Self::DEFAULT_SHARPNESS,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(crate::Error::Config("image must be at least 1x1".into()));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(crate::Error::Config("edge sharpness must be > 0".into()));
        }
        Ok(())
    }

    /// Centre of pixel `(row, col)` in image-plane coordinates.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64 - 0.5,
            (row as f64 + 0.5) / self.height as f64 - 0.5,
        )
    }
}

/// Named view over a raw parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleParams {
    pub vertices: [(f64, f64); 3],
    pub intensity_logit: f64,
    pub opacity_logit: f64,
}

impl TriangleParams {
    pub fn from_slice(theta: &[f64]) -> Self {
        assert_eq!(theta.len(), TRIANGLE_DIM, "triangle parameters have 8 entries");
        Self {
            vertices: [(theta[0], theta[1]), (theta[2], theta[3]), (theta[4], theta[5])],
            intensity_logit: theta[6],
            opacity_logit: theta[7],
        }
    }

    pub fn to_array(&self) -> [f64; TRIANGLE_DIM] {
        let [(x0, y0), (x1, y1), (x2, y2)] = self.vertices;
        [x0, y0, x1, y1, x2, y2, self.intensity_logit, self.opacity_logit]
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    ax: f64,
    ay: f64,
    ux: f64,
    uy: f64,
    len: f64,
}

impl Edge {
    fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        let ux = b.0 - a.0;
        let uy = b.1 - a.1;
        Self {
            ax: a.0,
            ay: a.1,
            ux,
            uy,
            len: sqrt(ux * ux + uy * uy + LEN_EPS_SQ),
        }
    }

    /// Signed distance of `(px, py)`, positive to the left of `a -> b`.
    #[inline]
    fn distance(&self, px: f64, py: f64) -> f64 {
        (self.ux * (py - self.ay) - self.uy * (px - self.ax)) / self.len
    }
}

/// Per-triangle quantities shared by every pixel.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    edges: [Edge; 3],
    /// Smoothed orientation sign.
    sign: f64,
    /// d sign / d (twice signed area).
    dsign: f64,
    sig_c: f64,
    sig_a: f64,
    kappa: f64,
}

impl Prepared {
    fn new(theta: &[f64], cfg: &RenderConfig) -> Self {
        let t = TriangleParams::from_slice(theta);
        let [v0, v1, v2] = t.vertices;
        let area2 = (v1.0 - v0.0) * (v2.1 - v0.1) - (v2.0 - v0.0) * (v1.1 - v0.1);
        let r = sqrt(area2 * area2 + AREA_EPS * AREA_EPS);
        let sign = area2 / r;
        let dsign = AREA_EPS * AREA_EPS / (r * r * r);
        Self {
            edges: [Edge::new(v0, v1), Edge::new(v1, v2), Edge::new(v2, v0)],
            sign,
            dsign,
            sig_c: sigmoid(t.intensity_logit),
            sig_a: sigmoid(t.opacity_logit),
            kappa: cfg.sharpness,
        }
    }

    #[inline]
    fn scale(&self) -> f64 {
        self.sig_a * self.sig_c * self.sign * self.sign
    }

    /// Edge factors `σ(κ s d_e)` at a pixel, or `None` when the pixel is culled.
    #[inline]
    fn edge_factors(&self, px: f64, py: f64) -> Option<[f64; 3]> {
        let ks = self.kappa * self.sign;
        let mut z = [0.0; 3];
        for (zi, e) in z.iter_mut().zip(&self.edges) {
            *zi = ks * e.distance(px, py);
            if *zi < -CULL {
                return None;
            }
        }
        Some([sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2])])
    }

    #[inline]
    fn pixel(&self, px: f64, py: f64) -> f64 {
        match self.edge_factors(px, py) {
            Some(f) => self.scale() * f[0] * f[1] * f[2],
            None => 0.0,
        }
    }
}

/// Weighted first moments of the per-edge sensitivities, enough to assemble
/// `Σ_p c_p ∇h_p` because the edge distances are affine in the pixel centre.
#[derive(Debug, Clone, Copy, Default)]
struct EdgeMoments {
    /// Σ c_p Π_e σ_e
    sum_cov: f64,
    m0: [f64; 3],
    mx: [f64; 3],
    my: [f64; 3],
}

impl EdgeMoments {
    #[inline]
    fn add(&mut self, prep: &Prepared, px: f64, py: f64, weight: f64) {
        let Some(f) = prep.edge_factors(px, py) else {
            return;
        };
        let prod = f[0] * f[1] * f[2];
        self.sum_cov += weight * prod;
        let base = weight * prod * prep.sign * prep.sign * prep.kappa;
        for (e, fe) in f.iter().enumerate() {
            let w = base * (1.0 - fe);
            self.m0[e] += w;
            self.mx[e] += w * px;
            self.my[e] += w * py;
        }
    }

    fn gradient(&self, prep: &Prepared) -> [f64; TRIANGLE_DIM] {
        let s = prep.sign;
        let alpha = prep.sig_a * prep.sig_c;
        let mut g = [0.0; TRIANGLE_DIM];
        // Σ_e Σ_p W_e d_e(p): feeds the orientation-sign derivative
        let mut q_total = 0.0;
        for e in 0..3 {
            let edge = &prep.edges[e];
            let (m0, mx, my) = (self.m0[e], self.mx[e], self.my[e]);
            // centred moments: Σ W (p - a)
            let cx = mx - edge.ax * m0;
            let cy = my - edge.ay * m0;
            let q = (edge.ux * cy - edge.uy * cx) / edge.len;
            q_total += q;
            // Σ W ∂C/∂(ax, ay, bx, by), C the unnormalised cross product
            let dc_ax = edge.uy * m0 - cy;
            let dc_ay = cx - edge.ux * m0;
            let dc_bx = cy;
            let dc_by = -cx;
            let l = edge.len;
            let nx = edge.ux / l;
            let ny = edge.uy / l;
            // Σ W ∂d/∂v = (Σ W ∂C/∂v) / L - (q / L) ∂L/∂v
            let d_ax = dc_ax / l + (q / l) * nx;
            let d_ay = dc_ay / l + (q / l) * ny;
            let d_bx = dc_bx / l - (q / l) * nx;
            let d_by = dc_by / l - (q / l) * ny;
            let ia = 2 * e;
            let ib = 2 * ((e + 1) % 3);
            g[ia] += alpha * s * d_ax;
            g[ia + 1] += alpha * s * d_ay;
            g[ib] += alpha * s * d_bx;
            g[ib + 1] += alpha * s * d_by;
        }
        // orientation sign through the signed area
        let ds_coeff = alpha * (2.0 * s * self.sum_cov + q_total) * prep.dsign;
        if ds_coeff != 0.0 {
            let v = |i: usize| (prep.edges[i].ax, prep.edges[i].ay);
            let (v0, v1, v2) = (v(0), v(1), v(2));
            let darea = [
                v1.1 - v2.1,
                v2.0 - v1.0,
                v2.1 - v0.1,
                v0.0 - v2.0,
                v0.1 - v1.1,
                v1.0 - v0.0,
            ];
            for (gi, da) in g.iter_mut().zip(darea) {
                *gi += ds_coeff * da;
            }
        }
        let s2 = s * s;
        g[6] = prep.sig_c * (1.0 - prep.sig_c) * prep.sig_a * s2 * self.sum_cov;
        g[7] = prep.sig_a * (1.0 - prep.sig_a) * prep.sig_c * s2 * self.sum_cov;
        g
    }
}

/// Renders one triangle into a row-major `W·H` buffer.
pub fn render_into(theta: &[f64], cfg: &RenderConfig, out: &mut [f64]) {
    assert_eq!(out.len(), cfg.pixels());
    let prep = Prepared::new(theta, cfg);
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let (px, py) = cfg.pixel_center(row, col);
            out[row * cfg.width + col] = prep.pixel(px, py);
        }
    }
}

pub fn render_triangle(theta: &[f64], cfg: &RenderConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.pixels()];
    render_into(theta, cfg, &mut out);
    out
}

/// Adds `weight · h(θ)` into `acc` without materialising the image.
pub fn accumulate_render(theta: &[f64], cfg: &RenderConfig, weight: f64, acc: &mut [f64]) {
    assert_eq!(acc.len(), cfg.pixels());
    let prep = Prepared::new(theta, cfg);
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let (px, py) = cfg.pixel_center(row, col);
            acc[row * cfg.width + col] += weight * prep.pixel(px, py);
        }
    }
}

pub fn pixel_value(theta: &[f64], cfg: &RenderConfig, row: usize, col: usize) -> f64 {
    let (px, py) = cfg.pixel_center(row, col);
    Prepared::new(theta, cfg).pixel(px, py)
}

/// `∇_θ h_{row,col}(θ)`.
pub fn render_grad(theta: &[f64], cfg: &RenderConfig, row: usize, col: usize) -> [f64; TRIANGLE_DIM] {
    let prep = Prepared::new(theta, cfg);
    let (px, py) = cfg.pixel_center(row, col);
    let mut m = EdgeMoments::default();
    m.add(&prep, px, py, 1.0);
    m.gradient(&prep)
}

/// `Σ_p coeffs[p] ∇_θ h_p(θ)` over the whole image in one pass.
pub fn weighted_grad(theta: &[f64], cfg: &RenderConfig, coeffs: &[f64]) -> [f64; TRIANGLE_DIM] {
    assert_eq!(coeffs.len(), cfg.pixels());
    let prep = Prepared::new(theta, cfg);
    let mut m = EdgeMoments::default();
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let c = coeffs[row * cfg.width + col];
            if c != 0.0 {
                let (px, py) = cfg.pixel_center(row, col);
                m.add(&prep, px, py, c);
            }
        }
    }
    m.gradient(&prep)
}

/// Per-pixel mean image of an ensemble of triangles.
pub fn image_expectation(ensemble: &Ensemble, cfg: &RenderConfig) -> Vec<f64> {
    assert_eq!(ensemble.dim(), TRIANGLE_DIM);
    let mut acc = vec![0.0; cfg.pixels()];
    let w = 1.0 / ensemble.len() as f64;
    for theta in ensemble.iter() {
        accumulate_render(theta, cfg, w, &mut acc);
    }
    acc
}
