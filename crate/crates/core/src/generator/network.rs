//! Dense feed-forward generators and their on-disk format.
//!
//! A network is a JSON header plus a sibling little-endian `f32` payload:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "latent_dim": 8,
//!   "latent_prior": "standard_normal",
//!   "output_shape": [64, 64],
//!   "layers": [
//!     {"type": "dense", "in": 8, "out": 32, "activation": "leaky_relu"},
//!     {"type": "dense", "in": 32, "out": 4096, "activation": "identity"}
//!   ],
//!   "output_scale": 1.0,
//!   "output_offset": 0.0,
//!   "payload": "generator.bin"
//! }
//! ```
//!
//! `output_shape` is `[ny, nx]`. For each layer in order the payload holds the
//! weight matrix (`out` rows by `in` columns, row-major) then the `out` biases.
//! A layer computes `act(W a + b)`; the image is `output_scale * a + output_offset`.
//! `leaky_relu` uses slope 0.2. `payload` is resolved relative to the header
//! and defaults to the header path with extension `bin`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Generator, LatentPrior, LatentPriorKind, Provenance};
use crate::error::{Error, Result};
use crate::image::{Grid, Image};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn parse(name: &str, layer: usize) -> Result<Self> {
        match name {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::UnsupportedActivation {
                layer,
                name: other.to_string(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative in terms of the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => (x > 0.0) as u8 as f64,
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn pre_activation(&self, a: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + crate::image::dot(row, a))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "in")]
    pub inputs: usize,
    #[serde(rename = "out")]
    pub outputs: usize,
    pub activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkHeader {
    pub format_version: u32,
    pub latent_dim: usize,
    pub latent_prior: String,
    pub output_shape: [usize; 2],
    pub layers: Vec<LayerHeader>,
    #[serde(default = "one")]
    pub output_scale: f64,
    #[serde(default)]
    pub output_offset: f64,
    #[serde(default)]
    pub payload: Option<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    pub prior: LatentPrior,
    pub grid: Grid,
    pub layers: Vec<DenseLayer>,
    pub output_scale: f64,
    pub output_offset: f64,
    pub source: Option<PathBuf>,
}

impl DenseNetwork {
    /// Builds a network after checking that the layer sizes chain from the
    /// latent dimension to the image size.
    pub fn new(prior: LatentPrior, grid: Grid, layers: Vec<DenseLayer>, output_scale: f64, output_offset: f64) -> Result<Self> {
        let mut width = prior.dim;
        for (i, l) in layers.iter().enumerate() {
            if l.inputs != width {
                return Err(Error::NetworkHeader(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    l.inputs
                )));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::NetworkHeader(format!("layer {i} parameter count does not match its shape")));
            }
            width = l.outputs;
        }
        if layers.is_empty() || width != grid.len() {
            return Err(Error::NetworkHeader(format!(
                "last layer produces {width} values, image needs {}",
                grid.len()
            )));
        }
        if !output_scale.is_finite() || !output_offset.is_finite() {
            return Err(Error::NetworkHeader("output scale/offset must be finite".into()));
        }
        Ok(DenseNetwork {
            prior,
            grid,
            layers,
            output_scale,
            output_offset,
            source: None,
        })
    }

    /// Random network with the given hidden widths, weights scaled by `1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(
        prior: LatentPrior,
        grid: Grid,
        hidden: &[(usize, Activation)],
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes: Vec<(usize, Activation)> = hidden.to_vec();
        sizes.push((grid.len(), output_activation));
        let mut width = prior.dim;
        let mut layers = Vec::with_capacity(sizes.len());
        for (out, act) in sizes {
            let scale = 1.0 / (width as f64).sqrt();
            let weights = (0..out * width)
                .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32 as f64)
                .collect();
            let bias = (0..out).map(|_| (0.1 * rng.sample::<f64, _>(StandardNormal)) as f32 as f64).collect();
            layers.push(DenseLayer {
                inputs: width,
                outputs: out,
                activation: act,
                weights,
                bias,
            });
            width = out;
        }
        DenseNetwork::new(prior, grid, layers, 1.0, 0.0)
    }

    pub fn header(&self, payload: Option<String>) -> NetworkHeader {
        NetworkHeader {
            format_version: NETWORK_FORMAT_VERSION,
            latent_dim: self.prior.dim,
            latent_prior: self.prior.kind.name().to_string(),
            output_shape: [self.grid.ny, self.grid.nx],
            layers: self
                .layers
                .iter()
                .map(|l| LayerHeader {
                    kind: "dense".into(),
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation.name().into(),
                })
                .collect(),
            output_scale: self.output_scale,
            output_offset: self.output_offset,
            payload,
        }
    }

    fn forward_with_activations(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(z.to_vec());
        for l in &self.layers {
            let x = l.pre_activation(post.last().expect("input present"));
            let y = x.iter().map(|&v| l.activation.apply(v)).collect();
            pre.push(x);
            post.push(y);
        }
        (pre, post)
    }
}

impl Generator for DenseNetwork {
    fn latent_prior(&self) -> LatentPrior {
        self.prior
    }

    fn grid(&self) -> Grid {
        self.grid
    }

    fn provenance(&self) -> Provenance {
        match &self.source {
            Some(p) => Provenance::NetworkFile(p.clone()),
            None => Provenance::InMemory,
        }
    }

    fn forward(&self, z: &[f64]) -> Result<Image> {
        let mut a = z.to_vec();
        for l in &self.layers {
            a = l.pre_activation(&a).into_iter().map(|v| l.activation.apply(v)).collect();
        }
        for v in &mut a {
            *v = self.output_scale * *v + self.output_offset;
        }
        Image::from_pixels(self.grid, a).map_err(|e| match e {
            Error::NonFinitePixel { index } => Error::NonFinite(format!("network output {index}")),
            e => e,
        })
    }

    fn vjp(&self, z: &[f64], cotangent: &Image) -> Result<Vec<f64>> {
        let (pre, post) = self.forward_with_activations(z);
        let mut delta: Vec<f64> = cotangent.pixels().iter().map(|u| u * self.output_scale).collect();
        for (k, l) in self.layers.iter().enumerate().rev() {
            for ((d, &x), &y) in delta.iter_mut().zip(&pre[k]).zip(&post[k + 1]) {
                *d *= l.activation.derivative(x, y);
            }
            let mut back = vec![0.0; l.inputs];
            for (row, d) in l.weights.chunks_exact(l.inputs).zip(&delta) {
                if *d != 0.0 {
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
            }
            delta = back;
        }
        Ok(delta)
    }

    fn has_gradient(&self) -> bool {
        true
    }
}

/// Writes `header_path` and its payload. Returns the payload path.
pub fn save_network(net: &DenseNetwork, header_path: impl AsRef<Path>) -> Result<PathBuf> {
    let header_path = header_path.as_ref();
    let payload_path = header_path.with_extension("bin");
    let payload_name = payload_path
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidParameter(format!("bad header path {}", header_path.display())))?;
    let header = net.header(Some(payload_name));
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, text).map_err(|e| Error::io(header_path, e))?;

    let mut bytes = Vec::new();
    for l in &net.layers {
        for v in l.weights.iter().chain(&l.bias) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(&payload_path, bytes).map_err(|e| Error::io(&payload_path, e))?;
    Ok(payload_path)
}

pub fn load_generator(header_path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: NetworkHeader =
        serde_json::from_str(&text).map_err(|e| Error::NetworkHeader(format!("{}: {e}", header_path.display())))?;
    if header.format_version != NETWORK_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: NETWORK_FORMAT_VERSION,
        });
    }
    let prior = LatentPrior::new(LatentPriorKind::parse(&header.latent_prior)?, header.latent_dim)?;
    let [ny, nx] = header.output_shape;
    let grid = Grid::new(nx, ny)?;

    let mut shapes = Vec::with_capacity(header.layers.len());
    for (i, l) in header.layers.iter().enumerate() {
        if l.kind != "dense" {
            return Err(Error::UnsupportedLayer {
                layer: i,
                kind: l.kind.clone(),
            });
        }
        shapes.push((l.inputs, l.outputs, Activation::parse(&l.activation, i)?));
    }

    let payload_path = match &header.payload {
        Some(name) => header_path.parent().unwrap_or(Path::new(".")).join(name),
        None => header_path.with_extension("bin"),
    };
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let expected: usize = shapes.iter().map(|(i, o, _)| 4 * (i * o + o)).sum();
    if bytes.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            found: bytes.len(),
        });
    }

    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut layers = Vec::with_capacity(shapes.len());
    for (inputs, outputs, activation) in shapes {
        let weights: Vec<f64> = values.by_ref().take(inputs * outputs).collect();
        let bias: Vec<f64> = values.by_ref().take(outputs).collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NetworkHeader("payload contains non-finite weights".into()));
        }
        layers.push(DenseLayer {
            inputs,
            outputs,
            activation,
            weights,
            bias,
        });
    }
    let mut net = DenseNetwork::new(prior, grid, layers, header.output_scale, header.output_offset)?;
    net.source = Some(header_path.to_path_buf());
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generator_forward, generator_vjp};
    use crate::seed::SeedSpec;

    fn small_grid() -> Grid {
        Grid::new(3, 2).unwrap()
    }

    #[test]
    fn identity_network_reshapes_latent() {
        let grid = small_grid();
        let k = grid.len();
        let mut weights = vec![0.0; k * k];
        for i in 0..k {
            weights[i * k + i] = 1.0;
        }
        let net = DenseNetwork::new(
            LatentPrior::new(LatentPriorKind::StandardNormal, k).unwrap(),
            grid,
            vec![DenseLayer {
                inputs: k,
                outputs: k,
                activation: Activation::Identity,
                weights,
                bias: vec![0.0; k],
            }],
            1.0,
            0.0,
        )
        .unwrap();
        let z = vec![1.0, -2.0, 3.5, 0.0, 0.25, 9.0];
        assert_eq!(generator_forward(&net, &z).unwrap().pixels(), &z[..]);
    }

    #[test]
    fn linear_vjp_is_transpose() {
        let grid = small_grid();
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let net = DenseNetwork::new(
            LatentPrior::new(LatentPriorKind::StandardNormal, 2).unwrap(),
            grid,
            vec![DenseLayer {
                inputs: 2,
                outputs: 6,
                activation: Activation::Identity,
                weights: w.clone(),
                bias: vec![1.0; 6],
            }],
            1.0,
            0.0,
        )
        .unwrap();
        let u = Image::from_pixels(grid, vec![1.0, 0.0, -1.0, 2.0, 0.5, 3.0]).unwrap();
        let g = generator_vjp(&net, &[0.3, -0.7], &u).unwrap();
        let expected: Vec<f64> = (0..2)
            .map(|c| (0..6).map(|r| w[r * 2 + c] * u.pixels()[r]).sum())
            .collect();
        assert_eq!(g, expected);
        assert_eq!(generator_vjp(&net, &[0.3, -0.7], &Image::zeros(grid)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn save_load_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(4, 4).unwrap();
        let prior = LatentPrior::new(LatentPriorKind::Uniform, 3).unwrap();
        let net = DenseNetwork::random(
            prior,
            grid,
            &[(5, Activation::Tanh), (7, Activation::LeakyRelu)],
            Activation::Sigmoid,
            &mut SeedSpec::new(1).stream("net", 0),
        )
        .unwrap();
        let header = dir.path().join("gen.json");
        let payload = save_network(&net, &header).unwrap();
        let loaded = load_generator(&header).unwrap();
        assert_eq!(loaded.layers, net.layers);
        assert_eq!(loaded.prior, prior);
        let z = [0.2, -0.5, 0.9];
        assert_eq!(loaded.forward(&z).unwrap(), net.forward(&z).unwrap());

        let bytes = fs::read(&payload).unwrap();
        fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_generator(&header), Err(Error::PayloadSizeMismatch { .. })));
        fs::write(&payload, &bytes).unwrap();

        let text = fs::read_to_string(&header).unwrap();
        fs::write(&header, text.replacen("\"tanh\"", "\"gelu\"", 1)).unwrap();
        match load_generator(&header) {
            Err(Error::UnsupportedActivation { layer, name }) => {
                assert_eq!(layer, 0);
                assert_eq!(name, "gelu");
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&header, text.replacen("\"format_version\": 1", "\"format_version\": 2", 1)).unwrap();
        assert!(matches!(load_generator(&header), Err(Error::VersionMismatch { found: 2, .. })));
        fs::write(&header, text.replacen("\"dense\"", "\"conv2d\"", 1)).unwrap();
        assert!(matches!(load_generator(&header), Err(Error::UnsupportedLayer { layer: 0, .. })));
    }

    #[test]
    fn shape_chain_is_checked() {
        let grid = small_grid();
        let bad = DenseNetwork::new(
            LatentPrior::new(LatentPriorKind::StandardNormal, 2).unwrap(),
            grid,
            vec![DenseLayer {
                inputs: 2,
                outputs: 5,
                activation: Activation::Identity,
                weights: vec![0.0; 10],
                bias: vec![0.0; 5],
            }],
            1.0,
            0.0,
        );
        assert!(bad.is_err());
    }
}
