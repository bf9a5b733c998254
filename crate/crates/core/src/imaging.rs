//! Parallel-hole collimator imaging: Gaussian point response, closed-form
//! measurement of Gaussian blobs, and additive Gaussian noise.
//!
//! A blob `a * exp(-0.5 (r-c)^T S^-1 (r-c))` seen through the response
//! `h_m(r) = A exp(-|r - r_m|^2 / (2 w^2))`, `A = h / (2 pi w^2)`, gives pixel
//! `m` the value
//!
//! ```text
//! a * (h / w^2) * sqrt(det((S^-1 + w^-2 I)^-1)) * exp(-0.5 d^T (S + w^2 I)^-1 d),   d = r_m - c
//! ```
//!
//! No tail truncation is applied.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsfParams {
    /// Kernel standard deviation `w`, pixels.
    pub width: f64,
    /// Kernel height `h`.
    pub height: f64,
}

impl Default for PsfParams {
    fn default() -> Self {
        PsfParams {
            width: 0.5,
            height: 40.0,
        }
    }
}

impl PsfParams {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let p = PsfParams { width, height };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite() && self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "psf width and height must be positive, got w={} h={}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// `A = h / (2 pi w^2)`.
    pub fn amplitude(&self) -> f64 {
        self.height / (2.0 * PI * self.width * self.width)
    }

    /// Response of detector pixel centred at `rm` to a point source at `r`.
    pub fn response(&self, rm: [f64; 2], r: [f64; 2]) -> f64 {
        let dx = r[0] - rm[0];
        let dy = r[1] - rm[1];
        self.amplitude() * (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// Symmetric 2x2 matrix stored as `[xx, xy, yy]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2(pub [f64; 3]);

impl Sym2 {
    pub fn isotropic(variance: f64) -> Self {
        Sym2([variance, 0.0, variance])
    }

    /// `R(phi) diag(s1^2, s2^2) R(phi)^T`.
    pub fn rotated(s1: f64, s2: f64, phi: f64) -> Self {
        let (sin, cos) = phi.sin_cos();
        let v1 = s1 * s1;
        let v2 = s2 * s2;
        Sym2([
            cos * cos * v1 + sin * sin * v2,
            sin * cos * (v1 - v2),
            sin * sin * v1 + cos * cos * v2,
        ])
    }

    pub fn det(&self) -> f64 {
        let [a, b, c] = self.0;
        a * c - b * b
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        let [a, b, c] = self.0;
        Some(Sym2([c / det, -b / det, a / det]))
    }

    pub fn add_diag(&self, v: f64) -> Sym2 {
        let [a, b, c] = self.0;
        Sym2([a + v, b, c + v])
    }

    pub fn is_spd(&self) -> bool {
        let [a, _, c] = self.0;
        a > 0.0 && c > 0.0 && self.det() > 0.0 && self.0.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn quad(&self, d: [f64; 2]) -> f64 {
        let [a, b, c] = self.0;
        a * d[0] * d[0] + 2.0 * b * d[0] * d[1] + c * d[1] * d[1]
    }
}

/// A Gaussian blob in object space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussBlob {
    pub center: [f64; 2],
    pub cov: Sym2,
    pub amplitude: f64,
}

impl GaussBlob {
    pub fn isotropic(center: [f64; 2], std: f64, amplitude: f64) -> Self {
        GaussBlob {
            center,
            cov: Sym2::isotropic(std * std),
            amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cov.is_spd() {
            return Err(Error::InvalidParameter(format!(
                "blob covariance {:?} is not symmetric positive-definite",
                self.cov.0
            )));
        }
        if !self.amplitude.is_finite() || !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("blob amplitude/center must be finite".into()));
        }
        Ok(())
    }

    /// Object-space value at `r`.
    pub fn value(&self, r: [f64; 2]) -> f64 {
        let inv = self.cov.inverse().expect("validated blob");
        let d = [r[0] - self.center[0], r[1] - self.center[1]];
        self.amplitude * (-0.5 * inv.quad(d)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
}

impl GaussianNoise {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(GaussianNoise { sigma })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Measured (noiseless) image of `blob`.
pub fn measured_blob(blob: &GaussBlob, psf: &PsfParams, grid: Grid) -> Result<Image> {
    let mut img = Image::zeros(grid);
    add_measured_blob(&mut img, blob, psf)?;
    Ok(img)
}

/// Accumulates the measured image of `blob` into `img`.
pub fn add_measured_blob(img: &mut Image, blob: &GaussBlob, psf: &PsfParams) -> Result<()> {
    blob.validate()?;
    psf.validate()?;
    let w2 = psf.width * psf.width;
    let blurred = blob.cov.add_diag(w2);
    let blurred_inv = blurred.inverse().ok_or(Error::SingularCovariance)?;
    let cov_inv = blob.cov.inverse().ok_or(Error::SingularCovariance)?;
    let precision_sum = cov_inv.add_diag(1.0 / w2);
    let det_sum = precision_sum.det();
    if !(det_sum > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let prefactor = blob.amplitude * (psf.height / w2) / det_sum.sqrt();
    if prefactor == 0.0 {
        return Ok(());
    }

    let grid = img.grid();
    let [p, q, r] = blurred_inv.0;
    let [cx, cy] = blob.center;
    let step_decay = (-p).exp();
    let pixels = img.pixels_mut();
    for j in 0..grid.ny {
        let dy = j as f64 + 0.5 - cy;
        let row = &mut pixels[j * grid.nx..(j + 1) * grid.nx];
        // exponent(dx) = -0.5 (p dx^2 + 2 q dx dy + r dy^2) is quadratic in dx,
        // so successive pixel ratios form a geometric sequence. Walk outward
        // from the row maximum so values only shrink.
        let cross = q * dy;
        let yy = r * dy * dy;
        let exponent = |dx: f64| -0.5 * (dx * (p * dx + 2.0 * cross) + yy);
        let peak = (cx - cross / p - 0.5).round().clamp(0.0, (grid.nx - 1) as f64) as usize;
        let dx0 = peak as f64 + 0.5 - cx;
        let v0 = prefactor * exponent(dx0).exp();
        if v0 == 0.0 {
            continue;
        }
        row[peak] += v0;

        let mut v = v0;
        let mut ratio = (-p * dx0 - 0.5 * p - cross).exp();
        for x in row[peak + 1..].iter_mut() {
            v *= ratio;
            if v == 0.0 {
                break;
            }
            *x += v;
            ratio *= step_decay;
        }
        let mut v = v0;
        let mut ratio = (p * dx0 - 0.5 * p + cross).exp();
        for x in row[..peak].iter_mut().rev() {
            v *= ratio;
            if v == 0.0 {
                break;
            }
            *x += v;
            ratio *= step_decay;
        }
    }
    Ok(())
}

/// Peak value of the measured image of an isotropic blob, `a h s^2 / (s^2 + w^2)`.
pub fn isotropic_peak(amplitude: f64, std: f64, psf: &PsfParams) -> f64 {
    let s2 = std * std;
    amplitude * psf.height * s2 / (s2 + psf.width * psf.width)
}

/// Measured image of an isotropic blob in separable form:
/// `value(i, j) = peak * ex[i] * ey[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableBlob {
    pub peak: f64,
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
}

/// Writes `exp(k (i + 0.5 - c)^2)` for `k < 0` into `out` using the
/// geometric recurrence of successive ratios, outward from the maximum.
fn gaussian_profile(out: &mut [f64], c: f64, k: f64) {
    let n = out.len();
    let peak = (c - 0.5).round().clamp(0.0, (n - 1) as f64) as usize;
    let d0 = peak as f64 + 0.5 - c;
    let v0 = (k * d0 * d0).exp();
    out[peak] = v0;
    let decay = (2.0 * k).exp();
    let mut v = v0;
    let mut ratio = (k * (2.0 * d0 + 1.0)).exp();
    for x in out[peak + 1..].iter_mut() {
        v *= ratio;
        *x = v;
        ratio *= decay;
    }
    let mut v = v0;
    let mut ratio = (k * (1.0 - 2.0 * d0)).exp();
    for x in out[..peak].iter_mut().rev() {
        v *= ratio;
        *x = v;
        ratio *= decay;
    }
}

impl SeparableBlob {
    pub fn new(center: [f64; 2], std: f64, amplitude: f64, psf: &PsfParams, grid: Grid) -> Self {
        let v = std * std + psf.width * psf.width;
        let k = -0.5 / v;
        let axis = |n: usize, c: f64| -> Vec<f64> {
            let mut out = vec![0.0; n];
            gaussian_profile(&mut out, c, k);
            out
        };
        SeparableBlob {
            peak: isotropic_peak(amplitude, std, psf),
            ex: axis(grid.nx, center[0]),
            ey: axis(grid.ny, center[1]),
        }
    }

    /// `pixels += weight * self`.
    pub fn accumulate(&self, pixels: &mut [f64], weight: f64) {
        let nx = self.ex.len();
        for (j, row) in pixels.chunks_exact_mut(nx).enumerate() {
            let s = weight * self.peak * self.ey[j];
            for (v, e) in row.iter_mut().zip(&self.ex) {
                *v += s * e;
            }
        }
    }

    /// `pixels += self - old`, the update when a blob moves.
    pub fn replace(&self, old: &SeparableBlob, pixels: &mut [f64]) {
        let nx = self.ex.len();
        for (j, row) in pixels.chunks_exact_mut(nx).enumerate() {
            let sn = self.peak * self.ey[j];
            let so = old.peak * old.ey[j];
            for ((v, en), eo) in row.iter_mut().zip(&self.ex).zip(&old.ex) {
                *v += sn * en - so * eo;
            }
        }
    }

    /// Inner product with an image given by its pixels.
    pub fn dot(&self, pixels: &[f64]) -> f64 {
        let nx = self.ex.len();
        pixels
            .chunks_exact(nx)
            .zip(&self.ey)
            .map(|(row, ey)| ey * crate::image::dot(row, &self.ex))
            .sum::<f64>()
            * self.peak
    }
}

/// `-M/2 ln(2 pi sigma^2) - |g - mean|^2 / (2 sigma^2)`.
pub fn log_likelihood(g: &Image, mean: &Image, noise: &GaussianNoise) -> Result<f64> {
    g.grid().check_same(&mean.grid())?;
    let ss = crate::image::sq_dist(g.pixels(), mean.pixels());
    Ok(log_likelihood_from_residual(ss, g.grid().len(), noise))
}

/// Gaussian log density given the residual sum of squares.
#[inline]
pub fn log_likelihood_from_residual(residual_sq: f64, n_pixels: usize, noise: &GaussianNoise) -> f64 {
    let var = noise.variance();
    -0.5 * n_pixels as f64 * (2.0 * PI * var).ln() - residual_sq / (2.0 * var)
}

/// `mean + n`, with `n` i.i.d. `N(0, sigma^2)` per pixel.
pub fn sample_measurement<R: Rng + ?Sized>(mean: &Image, noise: &GaussianNoise, rng: &mut R) -> Image {
    let mut out = mean.clone();
    for v in out.pixels_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += noise.sigma * n;
    }
    out
}
