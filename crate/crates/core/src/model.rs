//! Fully convolutional encoder-decoder with skip connections.
//!
//! For an `n`x`n` input the encoder has `log2(n)` blocks of
//! `conv 4x4 / stride 2 / pad 1 -> leaky_relu(0.2)`, halving the spatial size
//! down to a 1x1 latent. The decoder mirrors it with transposed convolutions;
//! each decoder block consumes the previous decoder output concatenated with
//! the encoder activation of the same size. The last block emits one channel
//! through a sigmoid, and the border ring of the output is then overwritten
//! with the input border.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{TemperatureField, TEMPERATURE_RANGE};

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const LEAK: f32 = 0.2;
const INIT_STD: f64 = 0.02;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_size: usize, seed: u64) -> Self {
        Self {
            input_size,
            base_channels: 16,
            max_channels: 512,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 32 || !self.input_size.is_power_of_two() {
            return Err(Error::InvalidDimension(format!(
                "input size must be a power of two >= 32, got {}",
                self.input_size
            )));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::InvalidArgument(format!(
                "invalid channel schedule: base {} max {}",
                self.base_channels, self.max_channels
            )));
        }
        Ok(())
    }

    /// Encoder depth, `log2(input_size)`.
    pub fn depth(&self) -> usize {
        self.input_size.trailing_zeros() as usize
    }

    /// Output channels of encoder block `k` (0-based).
    pub fn encoder_channels(&self, k: usize) -> usize {
        (self.base_channels << k.min(30)).min(self.max_channels)
    }
}

/// Free-form training metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub lambda_progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub metadata: Option<TrainingMetadata>,
}

/// Graph handles produced by [`UNet::forward`].
pub struct ForwardPass {
    /// `[n, 1, size, size]` prediction with the input border imposed.
    pub output: Var,
    /// One handle per parameter, in [`UNet::params`] order.
    pub params: Vec<Var>,
}

impl UNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, shape: &[usize], random: bool| {
            let t = if random {
                Tensor::from_fn(shape, |_| normal.sample(&mut rng) as f32)
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            params.push(t);
        };
        let depth = config.depth();
        let mut in_c = 1;
        for k in 0..depth {
            let out_c = config.encoder_channels(k);
            add(format!("enc{k}.weight"), &[out_c, in_c, KERNEL, KERNEL], true);
            add(format!("enc{k}.bias"), &[out_c], false);
            in_c = out_c;
        }
        for k in (0..depth).rev() {
            let in_c = if k == depth - 1 {
                config.encoder_channels(k)
            } else {
                2 * config.encoder_channels(k)
            };
            let out_c = if k == 0 { 1 } else { config.encoder_channels(k - 1) };
            add(format!("dec{k}.weight"), &[in_c, out_c, KERNEL, KERNEL], true);
            add(format!("dec{k}.bias"), &[out_c], false);
        }
        Ok(Self {
            config,
            names,
            params,
            metadata: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Number of encoder and decoder blocks.
    pub fn layer_counts(&self) -> (usize, usize) {
        let enc = self.names.iter().filter(|n| n.starts_with("enc") && n.ends_with("weight")).count();
        let dec = self.names.iter().filter(|n| n.starts_with("dec") && n.ends_with("weight")).count();
        (enc, dec)
    }

    /// Records the forward pass for a normalized `[n, 1, size, size]` input.
    pub fn forward(&self, g: &mut Graph, input: Var, trainable: bool) -> Result<ForwardPass> {
        let shape = g.shape(input).to_vec();
        let size = self.config.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != size || shape[3] != size {
            return Err(Error::SizeMismatch(format!(
                "model expects [n, 1, {size}, {size}], got {shape:?}"
            )));
        }
        let params: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect();
        let depth = self.config.depth();
        let mut skips = Vec::with_capacity(depth);
        let mut x = input;
        for k in 0..depth {
            let y = g.conv2d(x, params[2 * k], Some(params[2 * k + 1]), STRIDE, PAD)?;
            x = g.leaky_relu(y, LEAK);
            skips.push(x);
        }
        for (j, k) in (0..depth).rev().enumerate() {
            let inp = if k == depth - 1 {
                x
            } else {
                g.concat(&[x, skips[k]])?
            };
            let (w, b) = (params[2 * depth + 2 * j], params[2 * depth + 2 * j + 1]);
            let y = g.conv2d_transposed(inp, w, Some(b), STRIDE, PAD)?;
            x = if k == 0 { g.sigmoid(y) } else { g.leaky_relu(y, LEAK) };
        }
        let interior = g.constant(interior_mask(shape[0], size));
        let masked = g.mul(x, interior)?;
        // the problem input is zero in the interior, so adding it restores the border
        let output = g.add(masked, input)?;
        Ok(ForwardPass { output, params })
    }

    /// Predicts steady-state fields (degrees) for a batch of problems.
    pub fn predict_batch(&self, problems: &[TemperatureField]) -> Result<Vec<TemperatureField>> {
        if problems.is_empty() {
            return Ok(Vec::new());
        }
        let input = problems_to_tensor(problems, self.config.input_size)?;
        let mut g = Graph::new();
        let x = g.constant(input);
        let pass = self.forward(&mut g, x, false)?;
        let out = g.value(pass.output);
        let plane = self.config.input_size * self.config.input_size;
        problems
            .iter()
            .enumerate()
            .map(|(b, p)| {
                let values = out.data()[b * plane..(b + 1) * plane]
                    .iter()
                    .map(|&v| v as f64 * TEMPERATURE_RANGE)
                    .collect();
                TemperatureField::new(p.height(), p.width(), values)?.with_border_of(p)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, t) in self.names.iter().zip(&self.params) {
            let length = 4 * t.numel() as u64;
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                length,
            });
            offset += length;
        }
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            model_config: self.config,
            metadata: self.metadata.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing LFCK magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Integrity("header length exceeds file size".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Format("header and preamble versions differ".into()));
        }
        let payload = &bytes[header_end..];
        let reference = UNet::new(header.model_config)?;
        if header.tensors.len() != reference.params.len() {
            return Err(Error::Integrity(format!(
                "expected {} tensors, directory lists {}",
                reference.params.len(),
                header.tensors.len()
            )));
        }
        let mut expected_end = 0u64;
        let mut params = Vec::with_capacity(header.tensors.len());
        for (entry, (name, proto)) in header.tensors.iter().zip(reference.names.iter().zip(&reference.params)) {
            if &entry.name != name || entry.shape != proto.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {:?} {:?} does not match architecture entry {name:?} {:?}",
                    entry.name,
                    entry.shape,
                    proto.shape()
                )));
            }
            let numel: u64 = entry.shape.iter().map(|&d| d as u64).product();
            if entry.length != 4 * numel {
                return Err(Error::Integrity(format!(
                    "tensor {:?}: shape {:?} needs {} bytes, directory says {}",
                    entry.name,
                    entry.shape,
                    4 * numel,
                    entry.length
                )));
            }
            if entry.offset != expected_end {
                return Err(Error::Integrity(format!("tensor {:?} has offset {}", entry.name, entry.offset)));
            }
            let end = entry.offset + entry.length;
            if end as usize > payload.len() {
                return Err(Error::Integrity(format!(
                    "tensor {:?} extends past the payload ({} > {})",
                    entry.name,
                    end,
                    payload.len()
                )));
            }
            let data = payload[entry.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Tensor::new(entry.shape.clone(), data)?);
            expected_end = end;
        }
        if expected_end as usize != payload.len() {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, directory accounts for {}",
                payload.len(),
                expected_end
            )));
        }
        Ok(Self {
            config: header.model_config,
            names: reference.names,
            params,
            metadata: header.metadata,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    model_config: ModelConfig,
    metadata: Option<TrainingMetadata>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// `[n, 1, size, size]` with ones inside and zeros on the border ring.
pub fn interior_mask(n: usize, size: usize) -> Tensor {
    Tensor::from_fn(&[n, 1, size, size], |k| {
        let (r, c) = ((k / size) % size, k % size);
        if r == 0 || c == 0 || r + 1 == size || c + 1 == size {
            0.0
        } else {
            1.0
        }
    })
}

/// Stacks problems into a normalized `[n, 1, size, size]` tensor.
pub fn problems_to_tensor(problems: &[TemperatureField], size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(problems.len() * size * size);
    for p in problems {
        if p.height() != size || p.width() != size {
            return Err(Error::SizeMismatch(format!(
                "model input size is {size}, problem is {}x{}",
                p.height(),
                p.width()
            )));
        }
        data.extend(p.values().iter().map(|&v| (v / TEMPERATURE_RANGE) as f32));
    }
    Tensor::new(vec![problems.len(), 1, size, size], data)
}

/// Anything that maps a problem field to a predicted steady state.
pub trait FieldPredictor {
    fn predict(&self, problem: &TemperatureField) -> Result<TemperatureField>;

    fn input_size(&self) -> Option<usize> {
        None
    }
}

impl FieldPredictor for UNet {
    fn predict(&self, problem: &TemperatureField) -> Result<TemperatureField> {
        Ok(self.predict_batch(std::slice::from_ref(problem))?.remove(0))
    }

    fn input_size(&self) -> Option<usize> {
        Some(self.config.input_size)
    }
}

impl<F> FieldPredictor for F
where
    F: Fn(&TemperatureField) -> Result<TemperatureField>,
{
    fn predict(&self, problem: &TemperatureField) -> Result<TemperatureField> {
        self(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_problem, sample_boundary, BoundarySpec};

    #[test]
    fn layer_counts_follow_input_size() {
        for (size, depth) in [(32, 5), (64, 6), (256, 8), (1024, 10)] {
            let m = UNet::new(ModelConfig::new(size, 0)).unwrap();
            assert_eq!(m.layer_counts(), (depth, depth));
        }
    }

    #[test]
    fn invalid_sizes() {
        assert!(UNet::new(ModelConfig::new(16, 0)).is_err());
        assert!(UNet::new(ModelConfig::new(48, 0)).is_err());
    }

    #[test]
    fn shapes_halve_and_restore() {
        for size in [32usize, 64, 128, 256, 512, 1024] {
            let cfg = ModelConfig::new(size, 0);
            let mut s = size;
            for _ in 0..cfg.depth() {
                s = crate::autodiff::conv::conv_out_size(s, KERNEL, STRIDE, PAD).unwrap();
            }
            assert_eq!(s, 1);
            for _ in 0..cfg.depth() {
                s = crate::autodiff::conv::conv_transposed_out_size(s, KERNEL, STRIDE, PAD).unwrap();
            }
            assert_eq!(s, size);
            assert_eq!(cfg.encoder_channels(cfg.depth() - 1), 512.min(16 << (cfg.depth() - 1)));
        }
    }

    #[test]
    fn latent_is_one_by_one() {
        let m = UNet::new(ModelConfig::new(32, 1)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 32, 32]));
        let pass = m.forward(&mut g, x, false).unwrap();
        assert_eq!(g.shape(pass.output), &[1, 1, 32, 32]);
        let latent_w = &m.params()[2 * 4];
        assert_eq!(latent_w.shape(), &[256, 128, 4, 4]);
    }

    #[test]
    fn output_border_matches_input_and_range() {
        let m = UNet::new(ModelConfig::new(32, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs: Vec<_> = (0..2)
            .map(|_| make_problem(&sample_boundary(&mut rng, 32).unwrap()).unwrap())
            .collect();
        let input = problems_to_tensor(&probs, 32).unwrap();
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = m.forward(&mut g, x, false).unwrap().output;
        let out = g.value(out);
        assert_eq!(out.shape(), input.shape());
        for (k, (&o, &i)) in out.data().iter().zip(input.data()).enumerate() {
            let (r, c) = ((k / 32) % 32, k % 32);
            if r == 0 || c == 0 || r == 31 || c == 31 {
                assert_eq!(o.to_bits(), i.to_bits());
            } else {
                assert!((0.0..=1.0).contains(&o));
            }
        }
        let pred = m.predict(&probs[0]).unwrap();
        assert!(pred.border_values().eq(probs[0].border_values()));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = make_problem(&BoundarySpec {
            top: 80.0,
            bottom: 10.0,
            left: 30.0,
            right: 55.0,
            size: 32,
        })
        .unwrap();
        let a = UNet::new(ModelConfig::new(32, 9)).unwrap().predict(&p).unwrap();
        let b = UNet::new(ModelConfig::new(32, 9)).unwrap().predict(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let m = UNet::new(ModelConfig::new(32, 0)).unwrap();
        let p = make_problem(&BoundarySpec::uniform(5.0, 64)).unwrap();
        assert!(matches!(m.predict(&p), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lfck");
        let mut m = UNet::new(ModelConfig::new(32, 4)).unwrap();
        m.metadata = Some(TrainingMetadata {
            epochs: 3,
            seed: 4,
            lambda_progress: 1.0,
        });
        m.save(&path).unwrap();
        let back = UNet::load(&path).unwrap();
        assert_eq!(back, m);
        let p = make_problem(&BoundarySpec::uniform(60.0, 32)).unwrap();
        let a = m.predict(&p).unwrap();
        let b = back.predict(&p).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn checkpoint_corruption_is_detected() {
        let m = UNet::new(ModelConfig::new(32, 4)).unwrap();
        let bytes = m.to_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(UNet::from_bytes(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(UNet::from_bytes(&bad_version), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 8];
        assert!(matches!(UNet::from_bytes(truncated), Err(Error::Integrity(_))));

        // declare a wrong length for the first tensor
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + header_len]).unwrap();
        let tampered = header.replacen("\"length\":1024", "\"length\":1020", 1);
        assert_ne!(tampered, header);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[16 + header_len..]);
        assert!(matches!(UNet::from_bytes(&out), Err(Error::Integrity(_))));
    }
}
