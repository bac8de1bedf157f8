//! Retriever checkpoints.
//!
//! Layout, little-endian: magic `MVPSCKPT`, `u32` format version, the config
//! block (`u32` d_in, d_model, n_heads, n_encoder, n_decoder, d_ff,
//! max_support, max_query, `f64` init_std, `u8` identity_init), `u32`
//! parameter count, per parameter `u32` name length, UTF-8 name, `u32` rank,
//! rank x `u32` dims and the `f64` values, then the `u64` step counter.

use std::fs;
use std::path::Path;

use mvps_core::numerics::{ParamSet, Tensor};
use mvps_core::retriever::{Retriever, RetrieverConfig};

use crate::binio::{u32_field, Cursor};
use crate::error::FormatError;

pub const CKPT_MAGIC: &str = "MVPSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Retriever,
    /// Optimizer steps taken when the parameters were saved.
    pub step: u64,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let c = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC.as_bytes());
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (v, what) in [
            (c.d_in, "d_in"),
            (c.d_model, "d_model"),
            (c.n_heads, "n_heads"),
            (c.n_encoder, "n_encoder"),
            (c.n_decoder, "n_decoder"),
            (c.d_ff, "d_ff"),
            (c.max_support, "max_support"),
            (c.max_query, "max_query"),
        ] {
            out.extend_from_slice(&u32_field(v, what)?);
        }
        out.extend_from_slice(&c.init_std.to_le_bytes());
        out.push(c.identity_init as u8);
        let params = self.model.params();
        out.extend_from_slice(&u32_field(params.len(), "parameter count")?);
        for p in params.iter() {
            out.extend_from_slice(&u32_field(p.name.len(), "name length")?);
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&u32_field(p.value.shape().len(), "rank")?);
            for &dim in p.value.shape() {
                out.extend_from_slice(&u32_field(dim, "dimension")?);
            }
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut cur = Cursor::new(bytes);
        cur.magic(CKPT_MAGIC)?;
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(FormatError::Header(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = cur.u32("config")? as usize;
        }
        let init_std = cur.f64("init_std")?;
        let identity_init = match cur.u8("identity_init")? {
            0 => false,
            1 => true,
            b => return Err(FormatError::Header(format!("identity_init flag {b}"))),
        };
        let [d_in, d_model, n_heads, n_encoder, n_decoder, d_ff, max_support, max_query] = dims;
        let config = RetrieverConfig {
            d_in,
            d_model,
            n_heads,
            n_encoder,
            n_decoder,
            d_ff,
            max_support,
            max_query,
            init_std,
            identity_init,
        };
        let count = cur.u32("parameter count")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = cur.u32("name length")? as usize;
            let name = std::str::from_utf8(cur.take(len, "name")?)
                .map_err(|_| FormatError::Checkpoint("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = cur.u32("rank")? as usize;
            let shape = (0..rank).map(|_| cur.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n
                .filter(|&n| n.saturating_mul(8) <= cur.remaining())
                .ok_or_else(|| FormatError::Truncated(format!("parameter `{name}` of shape {shape:?}")))?;
            let data = (0..n).map(|_| cur.f64("value")).collect::<Result<Vec<_>, _>>()?;
            let value = Tensor::new(shape, data).map_err(|e| FormatError::Checkpoint(e.to_string()))?;
            params.add(name, value).map_err(|e| FormatError::Checkpoint(e.to_string()))?;
        }
        let step = cur.u64("step")?;
        cur.finish()?;
        let model = Retriever::from_params(config, &params).map_err(|e| FormatError::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { model, step })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.encode()?).map_err(FormatError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Checkpoint::decode(&fs::read(path).map_err(FormatError::io(path))?)
    }
}
