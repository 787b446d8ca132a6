//! Binary persistence of a single network.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        6 bytes  "EGMMLP"
//! version      u16      1
//! dtype        u8       4 = f32, 8 = f64
//! n_sizes      u32      then n_sizes × u32 layer sizes
//! hidden act   u8       1 = leaky relu, followed by slope as f64
//! output act   u8       0 = linear, 1 = sigmoid
//! flags        u8       bit 0 = batch norm
//! per layer    weight (row-major, in_dim × out_dim), bias,
//!              then for normalized hidden layers gamma, beta,
//!              running mean, running variance
//! ```

use ndarray::{Array1, Array2};

use super::mlp::{Activation, BatchNorm, Dense, OutputActivation};
use super::{Mlp, MlpSpec, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"EGMMLP";
const VERSION: u16 = 1;

/// Cursor over a byte buffer that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated input: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let width = T::BYTES as usize;
        let bytes = self.take(n * width)?;
        Ok(bytes.chunks_exact(width).map(T::read_le).collect())
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn push_reals<T: Real>(out: &mut Vec<u8>, values: impl IntoIterator<Item = T>) {
    for v in values {
        v.write_le(out);
    }
}

impl<T: Real> Mlp<T> {
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        let spec = self.spec();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES);
        out.extend_from_slice(&(spec.layer_sizes.len() as u32).to_le_bytes());
        for &s in &spec.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        let Activation::LeakyRelu { slope } = spec.hidden_activation;
        out.push(1);
        out.extend_from_slice(&slope.to_le_bytes());
        out.push(match spec.output_activation {
            OutputActivation::Linear => 0,
            OutputActivation::Sigmoid => 1,
        });
        out.push(u8::from(spec.batch_norm));
        for layer in self.layers() {
            push_reals(out, layer.weight.iter().copied());
            push_reals(out, layer.bias.iter().copied());
            if let Some(bn) = &layer.norm {
                for a in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    push_reals(out, a.iter().copied());
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("bad network magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported network format version {version}"
            )));
        }
        let dtype = r.u8()?;
        if dtype != T::BYTES {
            return Err(Error::Format(format!(
                "stored element width {dtype} bytes, reader expects {}",
                T::BYTES
            )));
        }
        let n_sizes = r.u32()? as usize;
        if n_sizes > 1024 {
            return Err(Error::Format(format!("implausible layer count {n_sizes}")));
        }
        let layer_sizes = (0..n_sizes)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let hidden_activation = match r.u8()? {
            1 => Activation::LeakyRelu { slope: r.f64()? },
            tag => {
                return Err(Error::Format(format!(
                    "unknown hidden activation tag {tag}"
                )))
            }
        };
        let output_activation = match r.u8()? {
            0 => OutputActivation::Linear,
            1 => OutputActivation::Sigmoid,
            tag => {
                return Err(Error::Format(format!(
                    "unknown output activation tag {tag}"
                )))
            }
        };
        let flags = r.u8()?;
        let spec = MlpSpec {
            layer_sizes,
            hidden_activation,
            output_activation,
            batch_norm: flags & 1 == 1,
        };
        spec.validate()
            .map_err(|e| Error::Format(format!("stored network spec invalid: {e}")))?;
        let n = spec.n_layers();
        let mut layers = Vec::with_capacity(n);
        for (k, w) in spec.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = Array2::from_shape_vec((fan_in, fan_out), r.reals(fan_in * fan_out)?)
                .expect("sized read");
            let bias = Array1::from(r.reals(fan_out)?);
            let norm = if spec.batch_norm && k + 1 < n {
                Some(BatchNorm {
                    gamma: Array1::from(r.reals(fan_out)?),
                    beta: Array1::from(r.reals(fan_out)?),
                    running_mean: Array1::from(r.reals(fan_out)?),
                    running_var: Array1::from(r.reals(fan_out)?),
                })
            } else {
                None
            };
            layers.push(Dense { weight, bias, norm });
        }
        Mlp::from_layers(spec, layers)
            .map_err(|e| Error::Format(format!("stored network inconsistent: {e}")))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let net = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after network".into()));
        }
        Ok(net)
    }
}
