//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

/// Adaptive Gauss–Kronrod (7/15) quadrature by recursive bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (k, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, abs_tol, 0)
}

/// Iterated adaptive quadrature over a rectangle.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: &F, x: [f64; 2], y: [f64; 2], abs_tol: f64) -> f64 {
    // Inner errors integrate over the y range, so they get a share of the budget.
    let inner = |yv: f64| integrate(&|xv| f(xv, yv), x[0], x[1], 0.1 * abs_tol / (y[1] - y[0]));
    integrate(&inner, y[0], y[1], 0.5 * abs_tol)
}

/// Kolmogorov survival function with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample KS test of `xs` against the uniform law on `[lo, hi]`.
pub fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut v: Vec<f64> = xs.iter().map(|x| (x - lo) / (hi - lo)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    (d, ks_pvalue(d, v.len()))
}

/// Pearson chi-square of integer counts against Poisson(mean). Cells with
/// expected count below 5 at the upper end are pooled into a tail cell.
pub fn chi_square_poisson(counts: &[usize], mean: f64) -> (f64, f64) {
    let n = counts.len() as f64;
    let pmf = |k: usize| (k as f64 * mean.ln() - mean - statrs::function::gamma::ln_gamma(k as f64 + 1.0)).exp();
    let mut last = 0;
    while n * pmf(last + 1) >= 5.0 {
        last += 1;
    }
    let mut observed = vec![0.0; last + 2];
    for &c in counts {
        observed[c.min(last + 1)] += 1.0;
    }
    let mut expected: Vec<f64> = (0..=last).map(|k| n * pmf(k)).collect();
    expected.push(n - expected.iter().sum::<f64>());
    let stat: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (expected.len() - 1) as f64;
    (stat, ChiSquared::new(dof).unwrap().sf(stat))
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Central-difference gradient of `z -> <c, f(z)>`.
pub fn fd_vjp<F: Fn(&[f64]) -> Vec<f64>>(f: F, z: &[f64], c: &[f64], h: f64) -> Vec<f64> {
    let dotc = |v: Vec<f64>| v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mut zp = z.to_vec();
    (0..z.len())
        .map(|i| {
            zp[i] = z[i] + h;
            let up = dotc(f(&zp));
            zp[i] = z[i] - h;
            let dn = dotc(f(&zp));
            zp[i] = z[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Reference forward pass straight from a network header and its payload,
/// without going through the library loader.
/// `(inputs, outputs, activation, weights, bias)`.
type RefLayer = (usize, usize, String, Vec<f64>, Vec<f64>);

pub struct ReferenceNet {
    layers: Vec<RefLayer>,
    scale: f64,
    offset: f64,
}

impl ReferenceNet {
    pub fn load(header: &Path) -> ReferenceNet {
        let text = std::fs::read_to_string(header).unwrap();
        let h: serde_json::Value = serde_json::from_str(&text).unwrap();
        let payload = header.parent().unwrap().join(h["payload"].as_str().unwrap());
        let bytes = std::fs::read(payload).unwrap();
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mut at = 0;
        let mut layers = Vec::new();
        for l in h["layers"].as_array().unwrap() {
            let i = l["in"].as_u64().unwrap() as usize;
            let o = l["out"].as_u64().unwrap() as usize;
            let w = floats[at..at + i * o].to_vec();
            at += i * o;
            let b = floats[at..at + o].to_vec();
            at += o;
            layers.push((i, o, l["activation"].as_str().unwrap().to_string(), w, b));
        }
        assert_eq!(at, floats.len());
        ReferenceNet {
            layers,
            scale: h["output_scale"].as_f64().unwrap(),
            offset: h["output_offset"].as_f64().unwrap(),
        }
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        for (i, o, act, w, b) in &self.layers {
            let mut y = b.clone();
            for r in 0..*o {
                for c in 0..*i {
                    y[r] += w[r * i + c] * x[c];
                }
            }
            for v in y.iter_mut() {
                *v = match act.as_str() {
                    "identity" => *v,
                    "relu" => v.max(0.0),
                    "leaky_relu" => {
                        if *v > 0.0 {
                            *v
                        } else {
                            0.2 * *v
                        }
                    }
                    "tanh" => v.tanh(),
                    "sigmoid" => 1.0 / (1.0 + (-*v).exp()),
                    other => panic!("activation {other}"),
                };
            }
            x = y;
        }
        x.iter().map(|v| self.scale * v + self.offset).collect()
    }
}
