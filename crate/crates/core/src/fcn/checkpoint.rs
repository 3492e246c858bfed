//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `DRCK` |
//! | 2 | version |
//! | 2 | reserved, zero |
//! | 7 × 4 | stages, first filter, inner filter, layers, classes, height, width (u32) |
//! | 6 × 8 | leaky slope, BN momentum, BN epsilon, k0, k1, λ (f64) |
//! | 4 × 8 | Adam learning rate, β1, β2, ε (f64) |
//! | 8 | Adam step (u64) |
//!
//! followed, for each stage in order, by f32 blocks: conv weights, conv
//! bias, then for normalized stages γ, β, running mean and running variance,
//! then the Adam first and second moments of each of the stage's trainable
//! blocks in the same order.

use std::io::Write;
use std::path::Path;

use super::config::FcnConfig;
use super::model::Network;
use super::train::FcnModel;
use crate::error::{Error, Result};
use crate::layout::GridDims;
use crate::nn::{AdamConfig, AdamState, LossConfig};

pub const MAGIC: [u8; 4] = *b"DRCK";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 7 * 4 + 10 * 8 + 8;

pub fn to_bytes(model: &FcnModel) -> Vec<u8> {
    let cfg = model.net.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * 3 * model.net.parameter_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    for v in [
        cfg.n_stages,
        cfg.first_filter,
        cfg.inner_filter,
        cfg.layers,
        cfg.classes,
        cfg.dims.height,
        cfg.dims.width,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let a = &model.adam.config;
    for v in [
        cfg.leaky_slope,
        cfg.bn_momentum,
        cfg.bn_epsilon,
        cfg.loss.class_weights[0],
        cfg.loss.class_weights[1],
        cfg.loss.l2,
        a.learning_rate,
        a.beta1,
        a.beta2,
        a.epsilon,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.adam.step.to_le_bytes());

    let put = |out: &mut Vec<u8>, vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    let mut block = 0;
    for stage in model.net.stages() {
        put(&mut out, stage.conv.weights.as_slice());
        put(&mut out, &stage.conv.bias);
        let trainable = if let Some(bn) = &stage.norm {
            put(&mut out, &bn.gamma);
            put(&mut out, &bn.beta);
            put(&mut out, &bn.running_mean);
            put(&mut out, &bn.running_var);
            4
        } else {
            2
        };
        for b in block..block + trainable {
            put(&mut out, &model.adam.first[b]);
            put(&mut out, &model.adam.second[b]);
        }
        block += trainable;
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f32], what: &str) -> Result<()> {
        let src = self.take(4 * dst.len(), what)?;
        for (d, c) in dst.iter_mut().zip(src.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<FcnModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    c.take(2, "reserved bytes")?;
    let n_stages = c.u32("stage count")?;
    let first_filter = c.u32("first filter")?;
    let inner_filter = c.u32("inner filter")?;
    let layers = c.u32("layer count")?;
    let classes = c.u32("class count")?;
    let height = c.u32("height")?;
    let width = c.u32("width")?;
    let leaky_slope = c.f64("leaky slope")?;
    let bn_momentum = c.f64("momentum")?;
    let bn_epsilon = c.f64("epsilon")?;
    let k0 = c.f64("k0")?;
    let k1 = c.f64("k1")?;
    let l2 = c.f64("lambda")?;
    let adam = AdamConfig {
        learning_rate: c.f64("learning rate")?,
        beta1: c.f64("beta1")?,
        beta2: c.f64("beta2")?,
        epsilon: c.f64("Adam epsilon")?,
    };
    let step = u64::from_le_bytes(c.take(8, "Adam step")?.try_into().unwrap());

    let config_at = 8;
    let bad_config = |e: Error| Error::format(config_at, format!("invalid configuration block: {e}"));
    let config = FcnConfig {
        n_stages,
        first_filter,
        inner_filter,
        layers,
        classes,
        dims: GridDims::new(height, width).map_err(bad_config)?,
        leaky_slope,
        bn_momentum,
        bn_epsilon,
        loss: LossConfig::new(k0, k1, l2).map_err(bad_config)?,
    };
    let mut net = Network::<f32>::build(config, 0).map_err(bad_config)?;
    let mut state = AdamState::<f32>::new(adam, &net.block_sizes());
    state.step = step;

    let mut block = 0;
    for (i, stage) in net.stages_mut().iter_mut().enumerate() {
        let k = i + 1;
        c.fill(stage.conv.weights.as_mut_slice(), &format!("stage{k}.weights"))?;
        c.fill(&mut stage.conv.bias, &format!("stage{k}.bias"))?;
        let trainable = if let Some(bn) = &mut stage.norm {
            c.fill(&mut bn.gamma, &format!("stage{k}.gamma"))?;
            c.fill(&mut bn.beta, &format!("stage{k}.beta"))?;
            c.fill(&mut bn.running_mean, &format!("stage{k}.running_mean"))?;
            c.fill(&mut bn.running_var, &format!("stage{k}.running_var"))?;
            4
        } else {
            2
        };
        for b in block..block + trainable {
            c.fill(&mut state.first[b], &format!("stage{k} Adam moments"))?;
            c.fill(&mut state.second[b], &format!("stage{k} Adam moments"))?;
        }
        block += trainable;
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            c.pos as u64,
            format!("{} trailing bytes after the last block", bytes.len() - c.pos),
        ));
    }
    Ok(FcnModel { net, adam: state })
}

/// Writes atomically: the file is either the old content or the new one.
pub fn save(model: &FcnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&to_bytes(model))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FcnModel> {
    from_bytes(&std::fs::read(path)?)
}
