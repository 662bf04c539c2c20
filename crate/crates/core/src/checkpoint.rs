//! Model checkpoint file.
//!
//! Layout (little-endian): magic `OCDM`, u32 format version, u32 block count,
//! then per block a u16 name length, the UTF-8 name, u32 rows, u32 cols and
//! `rows·cols` f32 values; finally a u32 length and the UTF-8 `key = value`
//! echo of the training configuration. Parameter blocks are written in name
//! order, followed by `centers` and `centers.present` (1 × C of 0/1).

use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::dataset::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::models::{Architecture, Centers, Networks};
use crate::numgrad::{ParamStore, Tensor2};
use crate::train::TrainedModel;

pub const MAGIC: &[u8; 4] = b"OCDM";
pub const VERSION: u32 = 1;
const CENTERS: &str = "centers";
const PRESENT: &str = "centers.present";

fn put_block(out: &mut Vec<u8>, name: &str, m: &Tensor2) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, m.rows());
    put_u32(out, m.cols());
    put_f32s(out, m.data());
}

/// Serializes a model; identical models give identical bytes.
pub fn checkpoint_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, model.nets.params.len() + 2);
    for (name, p) in model.nets.params.iter() {
        put_block(&mut out, name, &p.value);
    }
    put_block(&mut out, CENTERS, model.centers.values());
    let present: Vec<f64> = model.centers.present().iter().map(|&b| f64::from(u8::from(b))).collect();
    let present = Tensor2::from_vec(1, present.len(), present).expect("length matches");
    put_block(&mut out, PRESENT, &present);
    let echo = model.config.to_text();
    put_u32(&mut out, echo.len());
    out.extend_from_slice(echo.as_bytes());
    out
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn parse_checkpoint(path: &Path, bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    let mut centers = None;
    let mut present = None;
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err("block name is not UTF-8"))?
            .to_owned();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| r.err("block size overflows"))?;
        let at = r.pos();
        let data = r.f32s(n)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                file: path.to_path_buf(),
                offset: at as u64,
                message: format!("non-finite value in block `{name}`"),
            });
        }
        let m = Tensor2::from_vec(rows, cols, data)?;
        match name.as_str() {
            CENTERS => centers = Some(m),
            PRESENT => present = Some(m),
            _ if params.contains(&name) => return Err(r.err(format!("duplicate block `{name}`"))),
            _ => params.insert(name, m),
        }
    }
    let len = r.u32()? as usize;
    let echo = std::str::from_utf8(r.take(len)?).map_err(|_| r.err("config echo is not UTF-8"))?;
    let config = TrainConfig::from_text(echo).map_err(|e| r.err(format!("config echo: {e}")))?;
    r.finish()?;

    let (Some(centers), Some(present)) = (centers, present) else {
        return Err(r.err("missing center blocks"));
    };
    if present.rows() != 1 || present.cols() != centers.rows() {
        return Err(r.err("center presence block does not match centers"));
    }
    let shape = |name: &str| params.value(name).map(Tensor2::shape).map_err(|_| r.err(format!("missing block `{name}`")));
    let arch = Architecture {
        d_x: shape("encoder.hidden.w")?.0,
        attr_dim: shape("regressor.out.w")?.1,
        latent_dim: config.hyper.latent_dim,
        hidden: config.hyper.hidden,
    };
    let nets = Networks::from_params(arch, params).map_err(|e| r.err(e.to_string()))?;
    let present: Vec<bool> = present.data().iter().map(|&v| v != 0.0).collect();
    Ok(TrainedModel {
        nets,
        centers: Centers::from_parts(centers, present, config.hyper.center_lr)?,
        config,
        history: Vec::new(),
        cvae_ready: true,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &bytes)
}
