//! Model files: header, configuration block, presence mask, then each present
//! network in the order E, G, F, H, D_z, D_v using the single-network layout.

use std::fs;
use std::path::Path;

use super::{CausalEgm, LatentPartition, ModelConfig, TreatmentKind};
use crate::error::{Error, Result};
use crate::nn::io::Reader;
use crate::nn::{Mlp, Real};

const MAGIC: &[u8; 6] = b"EGMMOD";
const VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_widths(out: &mut Vec<u8>, widths: &[usize]) {
    put_u32(out, widths.len());
    for &w in widths {
        put_u32(out, w);
    }
}

fn read_widths(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let n = r.u32()? as usize;
    if n > 1024 {
        return Err(Error::Format(format!("implausible hidden layer count {n}")));
    }
    (0..n).map(|_| Ok(r.u32()? as usize)).collect()
}

fn write_config(out: &mut Vec<u8>, c: &ModelConfig) {
    put_u32(out, c.p);
    for q in [
        c.partition.q0,
        c.partition.q1,
        c.partition.q2,
        c.partition.q3,
    ] {
        put_u32(out, q);
    }
    out.push(match c.treatment_kind {
        TreatmentKind::Continuous => 0,
        TreatmentKind::Binary => 1,
    });
    for widths in [
        &c.encoder_hidden,
        &c.decoder_hidden,
        &c.outcome_hidden,
        &c.treatment_hidden,
        &c.critic_hidden,
    ] {
        put_widths(out, widths);
    }
    out.push(c.critic_batch_norm as u8);
    for f in [c.leaky_slope, c.lambda, c.lr] {
        out.extend_from_slice(&f.to_le_bytes());
    }
    put_u32(out, c.batch_size);
    out.extend_from_slice(&(c.iterations as u64).to_le_bytes());
    put_u32(out, c.critic_steps);
    out.push(c.use_roundtrip as u8 | (c.use_v_gan as u8) << 1 | (c.use_z_rec as u8) << 2);
    out.extend_from_slice(&c.seed.to_le_bytes());
}

fn read_config(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let p = r.u32()? as usize;
    let partition = LatentPartition {
        q0: r.u32()? as usize,
        q1: r.u32()? as usize,
        q2: r.u32()? as usize,
        q3: r.u32()? as usize,
    };
    let treatment_kind = match r.u8()? {
        0 => TreatmentKind::Continuous,
        1 => TreatmentKind::Binary,
        t => return Err(Error::Format(format!("unknown treatment kind tag {t}"))),
    };
    let encoder_hidden = read_widths(r)?;
    let decoder_hidden = read_widths(r)?;
    let outcome_hidden = read_widths(r)?;
    let treatment_hidden = read_widths(r)?;
    let critic_hidden = read_widths(r)?;
    let critic_batch_norm = r.u8()? != 0;
    let leaky_slope = r.f64()?;
    let lambda = r.f64()?;
    let lr = r.f64()?;
    let batch_size = r.u32()? as usize;
    let iterations = r.u64()? as usize;
    let critic_steps = r.u32()? as usize;
    let flags = r.u8()?;
    let seed = r.u64()?;
    Ok(ModelConfig {
        p,
        partition,
        treatment_kind,
        encoder_hidden,
        decoder_hidden,
        outcome_hidden,
        treatment_hidden,
        critic_hidden,
        critic_batch_norm,
        leaky_slope,
        lambda,
        lr,
        batch_size,
        iterations,
        critic_steps,
        use_roundtrip: flags & 1 != 0,
        use_v_gan: flags & 2 != 0,
        use_z_rec: flags & 4 != 0,
        seed,
    })
}

impl<T: Real> CausalEgm<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES);
        write_config(&mut out, &self.config);
        let optional = [&self.decoder, &self.latent_critic, &self.covariate_critic];
        let mask = optional
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, net)| m | (net.is_some() as u8) << i);
        out.push(mask);
        self.encoder.write_bytes(&mut out);
        if let Some(g) = &self.decoder {
            g.write_bytes(&mut out);
        }
        self.outcome.write_bytes(&mut out);
        self.treatment.write_bytes(&mut out);
        for net in [&self.latent_critic, &self.covariate_critic]
            .into_iter()
            .flatten()
        {
            net.write_bytes(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let dtype = r.u8()?;
        if dtype != T::BYTES {
            return Err(Error::Format(format!(
                "model stores {dtype}-byte floats, reader expects {}",
                T::BYTES
            )));
        }
        let config = read_config(&mut r)?;
        let mask = r.u8()?;
        if mask & !0b111 != 0 {
            return Err(Error::Format(format!("invalid presence mask {mask:#b}")));
        }
        let encoder = Mlp::read_from(&mut r)?;
        let decoder = if mask & 1 != 0 {
            Some(Mlp::read_from(&mut r)?)
        } else {
            None
        };
        let outcome = Mlp::read_from(&mut r)?;
        let treatment = Mlp::read_from(&mut r)?;
        let latent_critic = if mask & 2 != 0 {
            Some(Mlp::read_from(&mut r)?)
        } else {
            None
        };
        let covariate_critic = if mask & 4 != 0 {
            Some(Mlp::read_from(&mut r)?)
        } else {
            None
        };
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        let model = Self::from_parts(
            config.clone(),
            encoder,
            decoder,
            outcome,
            treatment,
            latent_critic,
            covariate_critic,
        )
        .map_err(|e| Error::Format(format!("inconsistent model file: {e}")))?;
        if model.config != config {
            return Err(Error::Format("stored flags are not normalized".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
