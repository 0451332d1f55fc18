//! The two encoders: a frozen orthonormal projection for surface semantics and
//! a trainable `Linear -> GELU -> Linear` head for intent. Both emit unit vectors.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::vector::{dot_f64, norm_f64, normalize_or_e0};

pub const DEFAULT_SEMANTIC_DIM: usize = 256;
pub const DEFAULT_HIDDEN_DIM: usize = 512;
pub const DEFAULT_INTENT_DIM: usize = 128;

const HEAD_MAGIC: &[u8; 4] = b"TWGH";
const HEAD_VERSION: u32 = 1;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact Gaussian error linear unit.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn fingerprint(parts: &[&[f64]]) -> u64 {
    let mut h = crate::featurizer::FNV_OFFSET;
    for part in parts {
        for x in part.iter() {
            for b in x.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(crate::featurizer::FNV_PRIME);
            }
        }
    }
    h
}

/// Fixed random projection with orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    rows: usize,
    cols: usize,
    projection: Vec<f64>,
    seed: u64,
}

impl FrozenEncoder {
    /// Draws `out_dim x in_dim` standard Gaussians row-major from ChaCha8 seeded
    /// with `seed`, then orthonormalizes the rows by modified Gram-Schmidt.
    pub fn new(seed: u64, out_dim: usize, in_dim: usize) -> Result<Self> {
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::InvalidConfig(format!(
                "frozen projection needs 0 < out_dim <= in_dim, got {out_dim} x {in_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for i in 0..out_dim {
            let (done, rest) = p.split_at_mut(i * in_dim);
            let row = &mut rest[..in_dim];
            for j in 0..i {
                let prev = &done[j * in_dim..(j + 1) * in_dim];
                let c = dot_f64(row, prev);
                for (r, q) in row.iter_mut().zip(prev) {
                    *r -= c * q;
                }
            }
            let n = norm_f64(row);
            if n < 1e-9 {
                return Err(Error::Infeasible("degenerate frozen projection".into()));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(FrozenEncoder { rows: out_dim, cols: in_dim, projection: p, seed })
    }

    pub fn from_matrix(rows: usize, cols: usize, projection: Vec<f64>) -> Result<Self> {
        if projection.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: projection.len() });
        }
        Ok(FrozenEncoder { rows, cols, projection, seed: 0 })
    }

    pub fn identity(dim: usize) -> Self {
        let mut p = vec![0.0; dim * dim];
        for i in 0..dim {
            p[i * dim + i] = 1.0;
        }
        FrozenEncoder { rows: dim, cols: dim, projection: p, seed: 0 }
    }

    pub fn out_dim(&self) -> usize {
        self.rows
    }

    pub fn in_dim(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn encode(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        if f.dim() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: f.dim() });
        }
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(self.cols)
            .map(|row| f.entries().iter().map(|&(c, v)| row[c as usize] * v).sum())
            .collect();
        normalize_or_e0(&mut out);
        Ok(out)
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&[&self.projection])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for HeadDims {
    fn default() -> Self {
        HeadDims {
            input: crate::featurizer::DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN_DIM,
            output: DEFAULT_INTENT_DIM,
        }
    }
}

/// Weight initialization scheme for [`IntentHead`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Standard deviation `1/sqrt(fan_in)` for both layers.
    FanIn,
    /// Unit standard deviation for `W1`, `1/sqrt(hidden)` for `W2`. Inputs are
    /// unit-norm sparse vectors, so this keeps first-layer pre-activations at
    /// unit variance instead of `1/fan_in`.
    #[default]
    UnitInput,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadActivations {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub raw: Vec<f64>,
    pub raw_norm: f64,
    pub z: Vec<f64>,
}

/// Trainable projection head. `w1` is `hidden x input` and `w2` is
/// `output x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentHead {
    dims: HeadDims,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl IntentHead {
    pub fn zeros(dims: HeadDims) -> Self {
        IntentHead {
            dims,
            w1: vec![0.0; dims.hidden * dims.input],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.output * dims.hidden],
            b2: vec![0.0; dims.output],
        }
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn random(dims: HeadDims, seed: u64) -> Result<Self> {
        IntentHead::random_with(dims, seed, HeadInit::FanIn)
    }

    /// Gaussian weights drawn W1 first then W2 (row-major) from ChaCha8, zero biases.
    pub fn random_with(dims: HeadDims, seed: u64, init: HeadInit) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(Error::InvalidConfig(format!("bad head dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = IntentHead::zeros(dims);
        let std1 = match init {
            HeadInit::FanIn => 1.0 / (dims.input as f64).sqrt(),
            HeadInit::UnitInput => 1.0,
        };
        let n1 = Normal::new(0.0, std1).expect("finite std");
        let n2 = Normal::new(0.0, 1.0 / (dims.hidden as f64).sqrt()).expect("finite std");
        head.w1.iter_mut().for_each(|w| *w = n1.sample(&mut rng));
        head.w2.iter_mut().for_each(|w| *w = n2.sample(&mut rng));
        Ok(head)
    }

    pub fn dims(&self) -> HeadDims {
        self.dims
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, f: &FeatureVector) -> Result<HeadActivations> {
        let HeadDims { input, hidden, output } = self.dims;
        if f.dim() != input {
            return Err(Error::DimensionMismatch { expected: input, got: f.dim() });
        }
        let pre: Vec<f64> = (0..hidden)
            .map(|r| {
                let row = &self.w1[r * input..(r + 1) * input];
                self.b1[r] + f.entries().iter().map(|&(c, v)| row[c as usize] * v).sum::<f64>()
            })
            .collect();
        let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let raw: Vec<f64> = (0..output)
            .map(|o| self.b2[o] + dot_f64(&self.w2[o * hidden..(o + 1) * hidden], &act))
            .collect();
        let raw_norm = norm_f64(&raw);
        let mut z = raw.clone();
        normalize_or_e0(&mut z);
        Ok(HeadActivations { pre, hidden: act, raw, raw_norm, z })
    }

    pub fn encode(&self, f: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.forward(f)?.z)
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&[&self.w1, &self.b1, &self.w2, &self.b2])
    }

    /// Rounds every parameter to `f32` precision so that the in-memory head
    /// equals what a snapshot reload produces.
    pub fn round_to_f32(&mut self) {
        for p in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            p.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Writes `TWGH`, version, the three dims (u32), then W1, b1, W2, b2 as
    /// row-major little-endian `f32`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&HEAD_VERSION.to_le_bytes())?;
        for d in [self.dims.input, self.dims.hidden, self.dims.output] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.param_count() * 4);
        for p in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for x in p.iter() {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HEAD_MAGIC {
            return Err(Error::Format("bad head snapshot magic".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != HEAD_VERSION {
            return Err(Error::Format(format!("unsupported head snapshot version {version}")));
        }
        let dims = HeadDims {
            input: read_u32(&mut r)? as usize,
            hidden: read_u32(&mut r)? as usize,
            output: read_u32(&mut r)? as usize,
        };
        let mut head = IntentHead::zeros(dims);
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() != head.param_count() * 4 {
            return Err(Error::Format(format!(
                "head snapshot body has {} bytes, expected {}",
                rest.len(),
                head.param_count() * 4
            )));
        }
        let mut values = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for p in [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2] {
            p.iter_mut().for_each(|x| *x = values.next().expect("length checked"));
        }
        Ok(head)
    }
}
