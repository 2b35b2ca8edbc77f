//! Binary serialization of model parameters.
//!
//! Layout, all integers little-endian u64: the five config fields, a section
//! count, then one section per parameter tensor in canonical order. Each
//! section is `name_len, name bytes, rank, dims.., f64 data..`. Floats are
//! raw little-endian bits, so a write/read round trip is exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nets::{AffineParams, ExtractorParams, GruParams, ModelConfig, ModelParams};
use crate::numcore::Tensor;

const MAX_NAME_LEN: usize = 256;

pub fn write_model<W: Write>(w: &mut W, params: &ModelParams) -> Result<()> {
    let c = &params.config;
    for v in [c.feature_dim, c.hidden_dim, c.classes, c.views, c.mlp_width] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let sections = params.tensors();
    w.write_all(&(sections.len() as u64).to_le_bytes())?;
    for (name, t) in sections {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<ModelParams> {
    let config = ModelConfig {
        feature_dim: read_u64(r)? as usize,
        hidden_dim: read_u64(r)? as usize,
        classes: read_u64(r)? as usize,
        views: read_u64(r)? as usize,
        mlp_width: read_u64(r)? as usize,
    };
    config.validate()?;
    let mut params = zeroed(config);

    let count = read_u64(r)? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(Error::Schema(format!(
            "model has {count} sections, config implies {expected}"
        )));
    }
    for (expect_name, slot) in params.tensors_mut() {
        let name = read_name(r)?;
        if name != expect_name {
            return Err(Error::Schema(format!(
                "section {name:?} where {expect_name:?} was expected"
            )));
        }
        let rank = read_u64(r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(r)? as usize);
        }
        if dims != slot.shape() {
            return Err(Error::Schema(format!(
                "section {name:?} has shape {dims:?}, expected {:?}",
                slot.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for x in slot.data_mut() {
            r.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    Ok(params)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > MAX_NAME_LEN {
        return Err(Error::Schema(format!("section name of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Schema("section name is not UTF-8".into()))
}

fn zeroed_affine(out_dim: usize, in_dim: usize) -> AffineParams {
    AffineParams { w: Tensor::zeros(&[out_dim, in_dim]), b: Tensor::zeros(&[out_dim]) }
}

fn zeroed_gru(hidden: usize, input: usize) -> GruParams {
    GruParams {
        wz: Tensor::zeros(&[hidden, input]),
        uz: Tensor::zeros(&[hidden, hidden]),
        bz: Tensor::zeros(&[hidden]),
        wr: Tensor::zeros(&[hidden, input]),
        ur: Tensor::zeros(&[hidden, hidden]),
        br: Tensor::zeros(&[hidden]),
        wn: Tensor::zeros(&[hidden, input]),
        un: Tensor::zeros(&[hidden, hidden]),
        bn: Tensor::zeros(&[hidden]),
    }
}

/// Correctly shaped parameters with every entry zero, filled in by the
/// section loop.
fn zeroed(config: ModelConfig) -> ModelParams {
    let d = config.feature_dim;
    let extractor = if config.mlp_width == 0 {
        ExtractorParams::Identity
    } else {
        ExtractorParams::Mlp {
            hidden: zeroed_affine(config.mlp_width, d),
            out: zeroed_affine(d, config.mlp_width),
        }
    };
    ModelParams {
        extractor,
        gru_e: zeroed_gru(config.hidden_dim, d),
        gru_s: zeroed_gru(config.hidden_dim, d),
        classifier: zeroed_affine(config.classes, config.hidden_dim),
        actor: zeroed_affine(config.views, config.hidden_dim),
        value_head: zeroed_affine(1, config.hidden_dim),
        config,
    }
}
