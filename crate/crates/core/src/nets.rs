//! Encoder and decoder MLPs.
//!
//! Hidden layers use `tanh`, the output layer is linear. The encoder emits
//! `2n` columns per row: the posterior mean followed by the log-variance.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{DiffError, Gradients, Matrix, Tape, Value};
use crate::gaussian::{GaussianError, PosteriorBatch, VAR_FLOOR};
use crate::rng;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} columns, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("encoder output has {got} columns, expected 2 x latent = {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            seed,
        }
    }

    /// `(fan_in, fan_out)` for each layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let dims: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NetError::InvalidSpec(format!("all dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Matrix,
    /// `1 x fan_out`
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    layers: Vec<Layer>,
}

impl NetParams {
    /// Glorot-uniform weights drawn from the spec's seed, zero biases.
    pub fn init(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(spec.seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
                Layer {
                    weight,
                    bias: Array2::zeros((1, fan_out)),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer {
                weight: Array2::zeros((i, o)),
                bias: Array2::zeros((1, o)),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Weight and bias of each layer, in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Places the parameters on `tape`; as leaves when `trainable`, otherwise
    /// as constants so no gradient is ever computed for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNet {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundNet {
            input_dim: self.spec.input_dim,
            output_dim: self.spec.output_dim,
            layers,
        }
    }

    /// Forward pass without recording gradients.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let out = bound.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Network parameters living on a tape for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct BoundNet {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<(Value, Value)>,
}

impl BoundNet {
    pub fn forward(&self, tape: &mut Tape, x: Value) -> Result<Value> {
        let cols = tape.shape(x).1;
        if cols != self.input_dim {
            return Err(NetError::InputDim {
                expected: self.input_dim,
                got: cols,
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add(lin, b)?;
            if i < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Parameter handles in [`NetParams::tensors`] order.
    pub fn handles(&self) -> impl Iterator<Item = Value> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Gradients in [`NetParams::tensors`] order; zeros for unreachable tensors.
    pub fn grads(&self, grads: &Gradients) -> Vec<Matrix> {
        self.handles().map(|v| grads.wrt(v)).collect()
    }
}

/// Runs the encoder and splits its output into a posterior batch with
/// `var = max(exp(log_var), VAR_FLOOR)`.
pub fn encode(tape: &mut Tape, encoder: &BoundNet, x: Value, latent_dim: usize) -> Result<PosteriorBatch> {
    if encoder.output_dim != 2 * latent_dim {
        return Err(NetError::LatentDim {
            expected: 2 * latent_dim,
            got: encoder.output_dim,
        });
    }
    let out = encoder.forward(tape, x)?;
    let mean = tape.slice_cols(out, 0, latent_dim)?;
    let log_var = tape.slice_cols(out, latent_dim, 2 * latent_dim)?;
    let var = tape.exp(log_var)?;
    let var = tape.clamp(var, VAR_FLOOR, f64::INFINITY)?;
    Ok(PosteriorBatch::new(tape, mean, var)?)
}

/// Decoder mean `x_hat` for each latent row. The observation model is a
/// unit-variance Gaussian around it.
pub fn decode(tape: &mut Tape, decoder: &BoundNet, z: Value) -> Result<Value> {
    decoder.forward(tape, z)
}

const CHECKPOINT_FORMAT: &str = "introlab-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    nets: Vec<NetHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    spec: NetSpec,
    layers: Vec<(usize, usize)>,
}

/// Named networks stored together.
///
/// On disk: one line of JSON (format tag, version, per-net spec and layer
/// shapes) followed by every weight and bias as little-endian `f64`, layer
/// by layer, row-major, weight before bias. Loading reproduces the
/// parameters bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nets: Vec<(String, NetParams)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self { nets: Vec::new() }
    }

    pub fn with(mut self, name: &str, params: &NetParams) -> Self {
        self.nets.push((name.to_string(), params.clone()));
        self
    }

    pub fn get(&self, name: &str) -> Option<&NetParams> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            nets: self
                .nets
                .iter()
                .map(|(name, p)| NetHeader {
                    name: name.clone(),
                    spec: p.spec.clone(),
                    layers: p.spec.layer_shapes(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, p) in &self.nets {
            for t in p.tensors() {
                for v in t.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| NetError::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != 1 {
            return Err(NetError::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut nets = Vec::new();
        let mut buf = [0u8; 8];
        for net in header.nets {
            if net.layers != net.spec.layer_shapes() {
                return Err(NetError::Checkpoint(format!("layer shapes of '{}' disagree with its spec", net.name)));
            }
            let mut params = NetParams::zeros(net.spec)?;
            for t in params.tensors_mut() {
                for v in t.iter_mut() {
                    r.read_exact(&mut buf)
                        .map_err(|e| NetError::Checkpoint(format!("truncated data: {e}")))?;
                    *v = f64::from_le_bytes(buf);
                }
            }
            nets.push((net.name, params));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NetError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { nets })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn small_spec(seed: u64) -> NetSpec {
        NetSpec::new(2, vec![5, 4], 6, seed)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = NetParams::init(small_spec(3)).unwrap();
        let b = NetParams::init(small_spec(3)).unwrap();
        let c = NetParams::init(small_spec(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        for l in a.layers() {
            let (i, o) = l.weight.dim();
            let lim = (6.0 / (i + o) as f64).sqrt();
            assert!(l.weight.iter().all(|v| v.abs() <= lim));
        }
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(NetParams::init(NetSpec::new(2, vec![0], 2, 0)).is_err());
        assert!(NetParams::init(NetSpec::new(0, vec![], 2, 0)).is_err());
    }

    #[test]
    fn zero_weights_give_standard_posterior_and_zero_decode() {
        let enc = NetParams::zeros(NetSpec::new(2, vec![8], 4, 0)).unwrap();
        let dec = NetParams::zeros(NetSpec::new(2, vec![8], 2, 0)).unwrap();
        let mut tape = Tape::new();
        let be = enc.bind(&mut tape, true);
        let bd = dec.bind(&mut tape, true);
        let x = tape.constant(arr2(&[[1.0, -2.0], [3.0, 0.5], [0.0, 0.0]]));
        let post = encode(&mut tape, &be, x, 2).unwrap();
        assert_eq!(post.len(&tape), 3);
        assert_eq!(post.dim(&tape), 2);
        assert!(tape.value(post.mean).iter().all(|&v| v == 0.0));
        assert!(tape.value(post.var).iter().all(|&v| v == 1.0));
        let xr = decode(&mut tape, &bd, post.mean).unwrap();
        assert_eq!(tape.value(xr), &Array2::<f64>::zeros((3, 2)));
    }

    #[test]
    fn dimension_errors() {
        let enc = NetParams::init(NetSpec::new(2, vec![4], 4, 0)).unwrap();
        let mut tape = Tape::new();
        let be = enc.bind(&mut tape, false);
        let x3 = tape.constant(Array2::zeros((2, 3)));
        assert!(matches!(encode(&mut tape, &be, x3, 2), Err(NetError::InputDim { .. })));
        let x2 = tape.constant(Array2::zeros((2, 2)));
        assert!(matches!(encode(&mut tape, &be, x2, 3), Err(NetError::LatentDim { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let enc = NetParams::init(small_spec(11)).unwrap();
        let mut dec = NetParams::init(NetSpec::new(3, vec![7], 2, 12)).unwrap();
        dec.layers_mut()[0].bias[[0, 1]] = f64::MIN_POSITIVE / 3.0;
        let ckpt = Checkpoint::new().with("encoder", &enc).with("decoder", &dec);
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        for ((na, a), (nb, b)) in ckpt.nets.iter().zip(&back.nets) {
            assert_eq!(na, nb);
            assert_eq!(a.spec(), b.spec());
            for (x, y) in a.tensors().zip(b.tensors()) {
                assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
    }
}
