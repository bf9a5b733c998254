//! Generator checks: vjp against central differences, determinism, and
//! agreement with forward passes computed elsewhere (the forward-check CSV).

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{generator_forward, generator_vjp, Generator};
use crate::image::{dot, Image};

use super::{csv_err, csv_open};

pub const FD_STEP: f64 = 1e-4;
pub const VJP_REL_TOL: f64 = 1e-4;
pub const FORWARD_ABS_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCase {
    pub z: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardCheck {
    pub cases: usize,
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub latent_dim: usize,
    pub n_pixels: usize,
    pub vjp_cases: usize,
    /// Worst coordinate-wise relative error; `None` without a gradient.
    pub max_vjp_rel_err: Option<f64>,
    pub deterministic: bool,
    pub forward_check: Option<ForwardCheck>,
    pub passed: bool,
}

/// Writes `n` cases with `z` drawn from the latent prior; header
/// `case,z_0..z_{k-1},g_0..g_{M-1}`.
pub fn write_forward_check<R: Rng + ?Sized>(gen: &dyn Generator, n: usize, rng: &mut R, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let k = gen.latent_prior().dim;
    let m = gen.grid().len();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open(path, e))?;
    let header = std::iter::once("case".to_string())
        .chain((0..k).map(|i| format!("z_{i}")))
        .chain((0..m).map(|i| format!("g_{i}")));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for case in 0..n {
        let z = gen.latent_prior().sample(rng);
        let g = generator_forward(gen, &z)?;
        let rec = std::iter::once(case.to_string())
            .chain(z.iter().chain(g.pixels()).map(|v| format!("{v:?}")));
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_forward_check(path: impl AsRef<Path>, latent_dim: usize, n_pixels: usize) -> Result<Vec<ForwardCase>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_open(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = 1 + latent_dim + n_pixels;
    if header.len() != expected {
        return Err(csv_err(
            path,
            format!("expected {expected} columns for latent_dim {latent_dim} and {n_pixels} pixels, found {}", header.len()),
        ));
    }
    let names_ok = header.get(0) == Some("case")
        && (0..latent_dim).all(|i| header.get(1 + i) == Some(format!("z_{i}").as_str()))
        && (0..n_pixels).all(|i| header.get(1 + latent_dim + i) == Some(format!("g_{i}").as_str()));
    if !names_ok {
        return Err(csv_err(path, "header must be case,z_0..z_{k-1},g_0..g_{M-1}"));
    }
    let mut cases = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, e))?;
        let (z, g) = vals.split_at(latent_dim);
        cases.push(ForwardCase {
            z: z.to_vec(),
            g: g.to_vec(),
        });
    }
    Ok(cases)
}

/// Relative error of `a` against `b`, with differences below `floor`
/// treated as absolute.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest coordinate-wise relative error between the vjp and central
/// differences of `<c, G(z)>` at one `(z, c)` pair.
pub fn vjp_fd_error(gen: &dyn Generator, z: &[f64], cot: &Image) -> Result<f64> {
    let vjp = generator_vjp(gen, z, cot)?;
    let mut fd = Vec::with_capacity(z.len());
    let mut zp = z.to_vec();
    for i in 0..z.len() {
        zp[i] = z[i] + FD_STEP;
        let up = dot(cot.pixels(), generator_forward(gen, &zp)?.pixels());
        zp[i] = z[i] - FD_STEP;
        let dn = dot(cot.pixels(), generator_forward(gen, &zp)?.pixels());
        zp[i] = z[i];
        fd.push((up - dn) / (2.0 * FD_STEP));
    }
    let scale = fd.iter().chain(&vjp).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    Ok(vjp.iter().zip(&fd).map(|(a, b)| rel_err(*a, *b, floor)).fold(0.0, f64::max))
}

/// Runs the checks on `n_cases` random `(z, cotangent)` pairs, with `z` from
/// the latent prior and a standard normal cotangent.
pub fn validate_generator<R: Rng + ?Sized>(
    gen: &dyn Generator,
    n_cases: usize,
    forward_cases: Option<&[ForwardCase]>,
    rng: &mut R,
) -> Result<GeneratorReport> {
    let prior = gen.latent_prior();
    let grid = gen.grid();
    let mut deterministic = true;
    let mut max_vjp: Option<f64> = None;
    for _ in 0..n_cases {
        let z = prior.sample(rng);
        let a = generator_forward(gen, &z)?;
        let b = generator_forward(gen, &z)?;
        deterministic &= a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits());
        if gen.has_gradient() {
            let cot = Image::from_pixels(grid, (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect())?;
            let err = vjp_fd_error(gen, &z, &cot)?;
            max_vjp = Some(max_vjp.map_or(err, |m| m.max(err)));
        }
    }
    let forward_check = match forward_cases {
        Some(cases) => {
            let mut worst = 0.0f64;
            for c in cases {
                if c.z.len() != prior.dim || c.g.len() != grid.len() {
                    return Err(Error::DimensionMismatch {
                        expected: prior.dim + grid.len(),
                        got: c.z.len() + c.g.len(),
                    });
                }
                let out = generator_forward(gen, &c.z)?;
                worst = out.pixels().iter().zip(&c.g).fold(worst, |m, (a, b)| m.max((a - b).abs()));
            }
            Some(ForwardCheck {
                cases: cases.len(),
                max_abs_diff: worst,
            })
        }
        None => None,
    };
    let passed = deterministic
        && max_vjp.is_none_or(|e| e < VJP_REL_TOL)
        && forward_check.as_ref().is_none_or(|f| f.cases > 0 && f.max_abs_diff < FORWARD_ABS_TOL);
    Ok(GeneratorReport {
        latent_dim: prior.dim,
        n_pixels: grid.len(),
        vjp_cases: if gen.has_gradient() { n_cases } else { 0 },
        max_vjp_rel_err: max_vjp,
        deterministic,
        forward_check,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{analytic_lumpy_generator, Activation, DenseNetwork, LatentPrior, LatentPriorKind};
    use crate::image::Grid;
    use crate::imaging::PsfParams;
    use crate::lumpy::LumpyPrior;
    use crate::seed::SeedSpec;

    #[test]
    fn analytic_generator_passes() {
        let gen = analytic_lumpy_generator(3, LumpyPrior::default(), PsfParams::default(), Grid::new(16, 16).unwrap()).unwrap();
        let mut rng = SeedSpec::new(1).stream("v", 0);
        let rep = validate_generator(&gen, 5, None, &mut rng).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.max_vjp_rel_err.unwrap() < VJP_REL_TOL);
    }

    #[test]
    fn forward_check_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fwd.csv");
        let grid = Grid::new(4, 3).unwrap();
        let prior = LatentPrior::new(LatentPriorKind::StandardNormal, 2).unwrap();
        let mut rng = SeedSpec::new(2).stream("v", 0);
        let net = DenseNetwork::random(prior, grid, &[(5, Activation::Tanh)], Activation::Identity, &mut rng).unwrap();
        write_forward_check(&net, 10, &mut rng, &path).unwrap();
        let cases = read_forward_check(&path, 2, 12).unwrap();
        assert_eq!(cases.len(), 10);
        let rep = validate_generator(&net, 3, Some(&cases), &mut rng).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.forward_check.as_ref().unwrap().max_abs_diff, 0.0);

        let mut bad = cases.clone();
        bad[3].g[5] += 1e-3;
        let rep = validate_generator(&net, 1, Some(&bad), &mut rng).unwrap();
        assert!(!rep.passed);
        assert!(read_forward_check(&path, 3, 12).is_err());
    }
}
