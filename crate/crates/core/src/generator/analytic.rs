
use super::{Generator, LatentPrior, LatentPriorKind, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{PsfParams, SeparableBlob};
use crate::image::{Grid, Image};
use crate::lumpy::LumpyPrior;

/// Standard normal CDF via the musl/FreeBSD `erfc` (libm crate), accurate to
/// about one ulp, well inside 1e-12 absolute.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Fixed-`K` lumpy model written as a generator: lump `i` is centred at
/// `(nx * Phi(z[2i]), ny * Phi(z[2i+1]))`. Under `z ~ N(0, I)` the centres are
/// i.i.d. uniform over the field of view, so the induced background law is the
/// fixed-`K` lumpy prior.
#[derive(Clone, Debug)]
pub struct AnalyticLumpyGenerator {
    pub lumps: usize,
    pub prior: LumpyPrior,
    pub psf: PsfParams,
    pub grid: Grid,
}

pub fn analytic_lumpy_generator(lumps: usize, prior: LumpyPrior, psf: PsfParams, grid: Grid) -> Result<AnalyticLumpyGenerator> {
    if lumps == 0 {
        return Err(Error::InvalidParameter("analytic generator needs at least one lump".into()));
    }
    prior.validate()?;
    psf.validate()?;
    Ok(AnalyticLumpyGenerator { lumps, prior, psf, grid })
}

impl AnalyticLumpyGenerator {
    pub fn centers(&self, z: &[f64]) -> Vec<[f64; 2]> {
        z.chunks_exact(2)
            .map(|p| [self.grid.nx as f64 * normal_cdf(p[0]), self.grid.ny as f64 * normal_cdf(p[1])])
            .collect()
    }

    fn blob(&self, c: [f64; 2]) -> SeparableBlob {
        SeparableBlob::new(c, self.prior.width, self.prior.amplitude, &self.psf, self.grid)
    }
}

impl Generator for AnalyticLumpyGenerator {
    fn latent_prior(&self) -> LatentPrior {
        LatentPrior {
            kind: LatentPriorKind::StandardNormal,
            dim: 2 * self.lumps,
        }
    }

    fn grid(&self) -> Grid {
        self.grid
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn forward(&self, z: &[f64]) -> Result<Image> {
        let mut img = Image::zeros(self.grid);
        for c in self.centers(z) {
            self.blob(c).accumulate(img.pixels_mut(), 1.0);
        }
        Ok(img)
    }

    fn vjp(&self, z: &[f64], cotangent: &Image) -> Result<Vec<f64>> {
        // d value / d cx = value * (x - cx) / v, v = s^2 + w^2; chain through Phi.
        let v = self.prior.width * self.prior.width + self.psf.width * self.psf.width;
        let u = cotangent.pixels();
        let nx = self.grid.nx;
        let mut out = Vec::with_capacity(z.len());
        for (pair, c) in z.chunks_exact(2).zip(self.centers(z)) {
            let blob = self.blob(c);
            let xs: Vec<f64> = (0..nx).map(|i| (i as f64 + 0.5 - c[0]) / v).collect();
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (j, row) in u.chunks_exact(nx).enumerate() {
                let dy = (j as f64 + 0.5 - c[1]) / v;
                let mut sx = 0.0;
                let mut s0 = 0.0;
                for ((ui, ex), x) in row.iter().zip(&blob.ex).zip(&xs) {
                    let t = ui * ex;
                    s0 += t;
                    sx += t * x;
                }
                gx += blob.ey[j] * sx;
                gy += blob.ey[j] * dy * s0;
            }
            out.push(blob.peak * gx * self.grid.nx as f64 * normal_pdf(pair[0]));
            out.push(blob.peak * gy * self.grid.ny as f64 * normal_pdf(pair[1]));
        }
        Ok(out)
    }

    fn has_gradient(&self) -> bool {
        true
    }
}
