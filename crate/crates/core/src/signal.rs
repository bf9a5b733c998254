//! Signals: the deterministic SKE blob and the random elliptical SKS blob.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{measured_blob, GaussBlob, PsfParams, SeparableBlob, Sym2};
use crate::image::{Grid, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeSignalCfg {
    pub center: [f64; 2],
    pub amplitude: f64,
    /// Standard deviation, pixels.
    pub width: f64,
}

impl SkeSignalCfg {
    /// Defaults for a grid: centred, amplitude 0.2, width 3.
    pub fn centered(grid: Grid) -> Self {
        SkeSignalCfg {
            center: [grid.nx as f64 / 2.0, grid.ny as f64 / 2.0],
            amplitude: 0.2,
            width: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite() && self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "SKE signal needs finite amplitude >= 0 and width > 0, got a={} s={}",
                self.amplitude, self.width
            )));
        }
        Ok(())
    }
}

pub fn measured_signal_ske(cfg: &SkeSignalCfg, psf: &PsfParams, grid: Grid) -> Result<Image> {
    cfg.validate()?;
    psf.validate()?;
    let mut img = Image::zeros(grid);
    SeparableBlob::new(cfg.center, cfg.width, cfg.amplitude, psf, grid).accumulate(img.pixels_mut(), 1.0);
    Ok(img)
}

/// SKS signal parameters: centre, principal standard deviations and rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub center: [f64; 2],
    pub w1: f64,
    pub w2: f64,
    pub phi: f64,
}

impl SignalParams {
    pub fn covariance(&self) -> Sym2 {
        Sym2::rotated(self.w1, self.w2, self.phi)
    }

    /// `cx,cy,w1,w2,phi`
    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.center[0], self.center[1], self.w1, self.w2, self.phi)
    }

    pub fn from_fields(fields: &[f64]) -> Result<Self> {
        let [cx, cy, w1, w2, phi] = fields[..] else {
            return Err(Error::DimensionMismatch {
                expected: 5,
                got: fields.len(),
            });
        };
        Ok(SignalParams {
            center: [cx, cy],
            w1,
            w2,
            phi,
        })
    }
}

/// Closed interval `[lo, hi]` for a uniformly distributed parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + rng.random::<f64>() * self.width()
    }
}

/// Independent uniform prior over SKS parameters. Rotation is uniform on `[0, pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SksPrior {
    pub center_x: Range,
    pub center_y: Range,
    pub w1: Range,
    pub w2: Range,
    pub amplitude: f64,
}

impl Default for SksPrior {
    fn default() -> Self {
        SksPrior {
            center_x: Range::new(16.0, 48.0),
            center_y: Range::new(16.0, 48.0),
            w1: Range::new(1.0, 5.0),
            w2: Range::new(1.0, 5.0),
            amplitude: 0.2,
        }
    }
}

impl SksPrior {
    pub fn validate(&self, grid: Grid) -> Result<()> {
        let ranges = [self.center_x, self.center_y, self.w1, self.w2];
        if ranges.iter().any(|r| !(r.width() > 0.0) || !r.lo.is_finite() || !r.hi.is_finite()) {
            return Err(Error::InvalidParameter("SKS prior ranges must be nonempty".into()));
        }
        if self.w1.lo <= 0.0 || self.w2.lo <= 0.0 {
            return Err(Error::InvalidParameter("SKS widths must be positive".into()));
        }
        if self.center_x.lo < 0.0
            || self.center_y.lo < 0.0
            || self.center_x.hi > grid.nx as f64
            || self.center_y.hi > grid.ny as f64
        {
            return Err(Error::InvalidParameter("SKS centre range must lie inside the field of view".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter("SKS amplitude must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn log_volume(&self) -> f64 {
        self.center_x.width().ln() + self.center_y.width().ln() + self.w1.width().ln() + self.w2.width().ln() + PI.ln()
    }
}

pub fn sample_signal_params<R: Rng + ?Sized>(prior: &SksPrior, rng: &mut R) -> SignalParams {
    let cx = prior.center_x.sample(rng);
    let cy = prior.center_y.sample(rng);
    let w1 = prior.w1.sample(rng);
    let w2 = prior.w2.sample(rng);
    let phi = rng.random::<f64>() * PI;
    SignalParams {
        center: [cx, cy],
        w1,
        w2,
        phi,
    }
}

pub fn log_signal_prior(alpha: &SignalParams, prior: &SksPrior) -> f64 {
    let inside = prior.center_x.contains(alpha.center[0])
        && prior.center_y.contains(alpha.center[1])
        && prior.w1.contains(alpha.w1)
        && prior.w2.contains(alpha.w2)
        && (0.0..PI).contains(&alpha.phi);
    if inside {
        -prior.log_volume()
    } else {
        f64::NEG_INFINITY
    }
}

pub fn measured_signal_sks(alpha: &SignalParams, amplitude: f64, psf: &PsfParams, grid: Grid) -> Result<Image> {
    let blob = GaussBlob {
        center: alpha.center,
        cov: Sym2::rotated(alpha.w1, alpha.w2, alpha.phi.rem_euclid(PI)),
        amplitude,
    };
    measured_blob(&blob, psf, grid)
}
