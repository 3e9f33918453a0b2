//! Model checkpoint file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "STRMCK1\0"
//! version      u32      currently 1
//! in_channels  u32
//! levels       u32
//! filters      u32 per level
//! grid         lat0, lon0, dlat, dlon as f64; height, width as u32
//! temperature  f64
//! params       f32 values of every tensor in canonical order
//! crc32        u32 over every preceding byte
//! ```
//!
//! The canonical order is the one documented on [`crate::unet`]. With four
//! levels and filters `[f0, f1, f2, f3]` the bottleneck (`enc3`) has `f3`
//! channels and the decoder stages `dec2`, `dec1`, `dec0` have `f2`, `f1`,
//! `f0`.

use std::fs;
use std::path::Path;

use crate::error::{PackError, Result};
use crate::pack::{put_grid, verify_envelope, write_atomic, Cursor};
use crate::tensor::Tensor;
use crate::unet::{layer_plan, ModelConfig, ModelState};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"STRMCK1\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const GRID_LEN: usize = 4 * 8 + 2 * 4;

pub fn encode_checkpoint(model: &ModelState) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(64 + 4 * model.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.levels as u32).to_le_bytes());
    for &f in &cfg.encoder_filters {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    put_grid(&mut out, &cfg.grid);
    out.extend_from_slice(&model.temperature.to_le_bytes());
    for p in &model.params {
        for &x in p.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let crc = crate::crc::crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn malformed(e: impl ToString) -> PackError {
    PackError::Malformed(e.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut config = None;
    let body = verify_envelope(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, |b| {
        let mut c = Cursor::new(&b[12..]);
        let in_channels = c.u32()? as usize;
        let levels = c.u32()? as usize;
        if levels == 0 || levels > 16 {
            return Err(malformed(format!("implausible level count {levels}")));
        }
        let mut encoder_filters = Vec::with_capacity(levels);
        for _ in 0..levels {
            encoder_filters.push(c.u32()? as usize);
        }
        let grid = c.grid()?;
        let cfg = ModelConfig { in_channels, levels, encoder_filters, grid };
        cfg.validate().map_err(malformed)?;
        let n: usize = layer_plan(&cfg).iter().map(|k| k.cout * k.cin * 9 + k.cout).sum();
        let header = 12 + 8 + 4 * levels + GRID_LEN + 8;
        config = Some(cfg);
        Ok(header + 4 * n + 4)
    })?;
    let config = config.expect("length callback ran");
    let mut c = Cursor::new(body);
    c.take(8 + 4 * config.levels + GRID_LEN)?;
    let temperature = c.f64()?;
    let mut params = Vec::new();
    for conv in layer_plan(&config) {
        let w = c.f32s(conv.cout * conv.cin * 9)?;
        params.push(Tensor::from_vec(&[conv.cout, conv.cin, 3, 3], w)?);
        params.push(Tensor::from_vec(&[conv.cout], c.f32s(conv.cout)?)?);
    }
    ModelState::from_parts(config, temperature, params)
}

/// Parameters are stored as f32, so a save/load cycle rounds them once; a
/// second cycle is the identity.
pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    decode_checkpoint(&fs::read(path)?)
}

/// Rounds every parameter to f32 precision, i.e. what a checkpoint stores.
pub fn quantize_params(model: &mut ModelState) {
    for p in &mut model.params {
        for x in p.data_mut() {
            *x = *x as f32 as f64;
        }
    }
}
