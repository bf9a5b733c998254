//! Generators `G(z)` mapping a latent vector to a measured background image.

mod analytic;
mod network;

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use analytic::{analytic_lumpy_generator, normal_cdf, normal_pdf, AnalyticLumpyGenerator};
pub use network::{load_generator, save_network, Activation, DenseLayer, DenseNetwork, NetworkHeader, LayerHeader, NETWORK_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::image::{Grid, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPriorKind {
    StandardNormal,
    /// Uniform on `(-1, 1)` per coordinate.
    Uniform,
}

impl LatentPriorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard_normal" => Ok(LatentPriorKind::StandardNormal),
            "uniform" => Ok(LatentPriorKind::Uniform),
            other => Err(Error::NetworkHeader(format!("unknown latent prior {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LatentPriorKind::StandardNormal => "standard_normal",
            LatentPriorKind::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub kind: LatentPriorKind,
    pub dim: usize,
}

impl LatentPrior {
    pub fn new(kind: LatentPriorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("latent dimension must be at least 1".into()));
        }
        Ok(LatentPrior { kind, dim })
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        match self.kind {
            LatentPriorKind::StandardNormal => {
                -0.5 * z.iter().map(|v| v * v).sum::<f64>()
                    - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln()
            }
            LatentPriorKind::Uniform => {
                if z.iter().all(|v| v.abs() < 1.0) {
                    -(self.dim as f64) * 2f64.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn grad_log_density(&self, z: &[f64]) -> Vec<f64> {
        match self.kind {
            LatentPriorKind::StandardNormal => z.iter().map(|v| -v).collect(),
            LatentPriorKind::Uniform => vec![0.0; z.len()],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| match self.kind {
                LatentPriorKind::StandardNormal => rng.sample(StandardNormal),
                LatentPriorKind::Uniform => rng.random_range(-1.0..1.0),
            })
            .collect()
    }

    /// The prior mode (or centre), used to start latent chains.
    pub fn origin(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Analytic,
    Constant,
    NetworkFile(PathBuf),
    InMemory,
}

/// A deterministic map from latent space to measured images.
pub trait Generator: Send + Sync + std::fmt::Debug {
    fn latent_prior(&self) -> LatentPrior;

    fn grid(&self) -> Grid;

    fn provenance(&self) -> Provenance;

    /// `G(z)`. Callers go through [`generator_forward`], which checks the dimension.
    fn forward(&self, z: &[f64]) -> Result<Image>;

    /// `J(z)^T u`.
    fn vjp(&self, _z: &[f64], _cotangent: &Image) -> Result<Vec<f64>> {
        Err(Error::GradientUnsupported)
    }

    fn has_gradient(&self) -> bool {
        false
    }
}

pub type GeneratorSpec = Arc<dyn Generator>;

pub fn generator_forward(gen: &dyn Generator, z: &[f64]) -> Result<Image> {
    let k = gen.latent_prior().dim;
    if z.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: z.len() });
    }
    let img = gen.forward(z)?;
    if !crate::image::all_finite(img.pixels()) {
        let i = img.pixels().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite(format!("generator output pixel {i}")));
    }
    Ok(img)
}

pub fn generator_vjp(gen: &dyn Generator, z: &[f64], cotangent: &Image) -> Result<Vec<f64>> {
    let k = gen.latent_prior().dim;
    if z.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: z.len() });
    }
    gen.grid().check_same(&cotangent.grid())?;
    if !gen.has_gradient() {
        return Err(Error::GradientUnsupported);
    }
    gen.vjp(z, cotangent)
}

/// `G(z) = b0` for every `z`.
#[derive(Clone, Debug)]
pub struct ConstantGenerator {
    pub image: Image,
    pub prior: LatentPrior,
}

impl Generator for ConstantGenerator {
    fn latent_prior(&self) -> LatentPrior {
        self.prior
    }

    fn grid(&self) -> Grid {
        self.image.grid()
    }

    fn provenance(&self) -> Provenance {
        Provenance::Constant
    }

    fn forward(&self, _z: &[f64]) -> Result<Image> {
        Ok(self.image.clone())
    }

    fn vjp(&self, z: &[f64], _cotangent: &Image) -> Result<Vec<f64>> {
        Ok(vec![0.0; z.len()])
    }

    fn has_gradient(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_prior_densities() {
        let p = LatentPrior::new(LatentPriorKind::StandardNormal, 2).unwrap();
        approx::assert_relative_eq!(p.log_density(&[0.0, 0.0]), -(2.0 * std::f64::consts::PI).ln());
        assert_eq!(p.grad_log_density(&[1.0, -2.0]), vec![-1.0, 2.0]);
        let u = LatentPrior::new(LatentPriorKind::Uniform, 3).unwrap();
        approx::assert_relative_eq!(u.log_density(&[0.0, 0.5, -0.9]), -3.0 * 2f64.ln());
        assert_eq!(u.log_density(&[0.0, 1.5, 0.0]), f64::NEG_INFINITY);
        assert!(LatentPrior::new(LatentPriorKind::Uniform, 0).is_err());
    }

    #[test]
    fn constant_generator_dimension_check() {
        let g = ConstantGenerator {
            image: Image::zeros(Grid::new(2, 2).unwrap()),
            prior: LatentPrior::new(LatentPriorKind::StandardNormal, 3).unwrap(),
        };
        assert!(generator_forward(&g, &[0.0; 3]).is_ok());
        assert!(matches!(generator_forward(&g, &[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        let zero = Image::zeros(Grid::new(2, 2).unwrap());
        assert_eq!(generator_vjp(&g, &[1.0; 3], &zero).unwrap(), vec![0.0; 3]);
    }
}
