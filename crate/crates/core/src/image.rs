//! Pixel grids, measurement-space images and the `IOIMG1` file format.
//!
//! `IOIMG1` layout: the 7 magic bytes `IOIMG1\n`, an ASCII line `"{nx} {ny}\n"`,
//! then `nx * ny` little-endian `f32` values in row-major order
//! (index `m = j * nx + i`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 7] = b"IOIMG1\n";

/// Rectangular pixel grid. Pixel `(i, j)` is centred at `(i + 0.5, j + 0.5)`,
/// so the field of view is exactly `[0, nx) x [0, ny)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { nx: 64, ny: 64 }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {nx}x{ny}"
            )));
        }
        Ok(Grid { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Grid::new(n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, m: usize) -> (usize, usize) {
        (m % self.nx, m / self.nx)
    }

    /// Continuous coordinate of the centre of pixel `m`.
    #[inline]
    pub fn center(&self, m: usize) -> [f64; 2] {
        let (i, j) = self.coords(m);
        [i as f64 + 0.5, j as f64 + 0.5]
    }

    pub fn area(&self) -> f64 {
        (self.nx * self.ny) as f64
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[0] < self.nx as f64 && p[1] >= 0.0 && p[1] < self.ny as f64
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: format!("{}x{}", self.nx, self.ny),
                right: format!("{}x{}", other.nx, other.ny),
            });
        }
        Ok(())
    }
}

/// A measurement-space image. Pixels are stored in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    grid: Grid,
    pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: Grid) -> Self {
        Image {
            grid,
            pixels: vec![0.0; grid.len()],
        }
    }

    pub fn from_pixels(grid: Grid, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: pixels.len(),
            });
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel { index });
        }
        Ok(Image { grid, pixels })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[self.grid.index(i, j)]
    }

    pub fn add_assign(&mut self, other: &Image) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.pixels {
            *v *= factor;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(dot(&self.pixels, &other.pixels))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Serializes to `IOIMG1` bytes. Values are narrowed to `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(index) = self.pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel { index });
        }
        let header = format!("{} {}\n", self.grid.nx, self.grid.ny);
        let mut out = Vec::with_capacity(IMAGE_MAGIC.len() + header.len() + 4 * self.pixels.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(header.as_bytes());
        for (index, &v) in self.pixels.iter().enumerate() {
            let narrowed = v as f32;
            if !narrowed.is_finite() {
                return Err(Error::NonFinitePixel { index });
            }
            out.extend_from_slice(&narrowed.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < IMAGE_MAGIC.len() || &bytes[..IMAGE_MAGIC.len()] != IMAGE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        let rest = &bytes[IMAGE_MAGIC.len()..];
        let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::BadHeader {
            path: path.to_path_buf(),
            reason: "missing dimension line".into(),
        })?;
        let line = std::str::from_utf8(&rest[..newline]).map_err(|_| Error::BadHeader {
            path: path.to_path_buf(),
            reason: "dimension line is not ASCII".into(),
        })?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("bad dimension {line:?}: {e}"),
            })?;
        let [nx, ny] = dims[..] else {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("expected two dimensions, got {line:?}"),
            });
        };
        let grid = Grid::new(nx, ny).map_err(|e| Error::BadHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let payload = &rest[newline + 1..];
        let expected = 4 * grid.len();
        if payload.len() != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: payload.len(),
            });
        }
        let pixels: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Image::from_pixels(grid, pixels)
    }
}

const LANES: usize = 8;

/// Inner product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `x - x` is NaN exactly when `x` is not finite, so one vectorized sum
/// screens the whole slice.
#[allow(clippy::eq_op)]
pub fn all_finite(a: &[f64]) -> bool {
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let tail_ok = ca.remainder().iter().all(|v| v.is_finite());
    for x in ca {
        for k in 0..LANES {
            acc[k] += x[k] - x[k];
        }
    }
    tail_ok && acc.iter().sum::<f64>() == 0.0
}

/// `|a - b|^2`, vectorized like [`dot`].
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub fn image_write(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = img.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn image_read(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Image::from_bytes(&bytes, path)
}
