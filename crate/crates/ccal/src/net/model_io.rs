//! Versioned binary model files.
//!
//! # Layout (`CCALNET1`, little-endian)
//!
//! ```text
//! magic "CCALNET1" (8 bytes)
//! u8  head            0 = dcca (trace norm), 1 = learned, 2 = ccal
//! u64 seed
//! tower f:
//!   u32 n_widths, then n_widths x u32 widths
//!   per layer: in*out f64 weights (row-major), out f64 biases
//! tower g: same
//! u8  has_cca
//! if 1: u32 d_x, u32 d_y, u32 k, f64 reg,
//!       d_x f64 mean_x, d_y f64 mean_y,
//!       d_x*k f64 proj_x (row-major), d_y*k f64 proj_y, k f64 corr
//! u32 config_len, config_len bytes of UTF-8 (training config echo)
//! ```
//!
//! Round trips are byte-exact.

use super::mlp::{DenseLayer, Tower};
use super::{DualNet, HeadMode};
use crate::bytesfmt::Cursor;
use crate::cca::CcaState;
use crate::error::{Error, Result};
use crate::mat::Mat;
use std::path::Path;

const MAGIC: &[u8; 8] = b"CCALNET1";

/// Widths beyond this are rejected as corrupt rather than allocated.
const MAX_WIDTH: u64 = 1 << 20;

fn head_byte(head: HeadMode) -> u8 {
    match head {
        HeadMode::Tno => 0,
        HeadMode::LearnedRank => 1,
        HeadMode::CcalRank => 2,
    }
}

fn head_from_byte(b: u8, at: usize) -> Result<HeadMode> {
    match b {
        0 => Ok(HeadMode::Tno),
        1 => Ok(HeadMode::LearnedRank),
        2 => Ok(HeadMode::CcalRank),
        other => Err(Error::format(at, format!("unknown head byte {other}"))),
    }
}

fn write_tower(out: &mut Vec<u8>, tower: &Tower) {
    let spec = tower.spec();
    out.extend_from_slice(&(spec.widths().len() as u32).to_le_bytes());
    for &w in spec.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for layer in tower.layers() {
        for v in layer.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &layer.bias {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_tower(c: &mut Cursor<'_>, which: &str) -> Result<Tower> {
    let at = c.pos();
    let n_widths = c.u32(&format!("{which} width count"))? as usize;
    if n_widths < 2 {
        return Err(Error::format(
            at,
            format!("{which} needs at least 2 widths, got {n_widths}"),
        ));
    }
    if n_widths as u64 > 64 {
        return Err(Error::format(at, format!("{which} width count {n_widths} is implausible")));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for i in 0..n_widths {
        let at = c.pos();
        let w = c.u32(&format!("{which} width {i}"))? as u64;
        if w == 0 || w > MAX_WIDTH {
            return Err(Error::format(at, format!("{which} width {i} = {w} out of range")));
        }
        widths.push(w as usize);
    }
    let mut layers = Vec::with_capacity(n_widths - 1);
    for l in 0..n_widths - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let weights = c.f64_vec(fan_in * fan_out, &format!("{which} layer {l} weights"))?;
        let bias = c.f64_vec(fan_out, &format!("{which} layer {l} bias"))?;
        layers.push(DenseLayer {
            weights: Mat::from_raw(fan_in, fan_out, weights),
            bias,
        });
    }
    Tower::from_layers(layers).map_err(|e| Error::format(c.pos(), e.to_string()))
}

fn write_cca(out: &mut Vec<u8>, state: &CcaState) {
    out.extend_from_slice(&(state.proj_x.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(state.proj_y.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(state.k as u32).to_le_bytes());
    out.extend_from_slice(&state.reg.to_le_bytes());
    for v in state
        .mean_x
        .iter()
        .chain(&state.mean_y)
        .chain(state.proj_x.data())
        .chain(state.proj_y.data())
        .chain(&state.corr)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_cca(c: &mut Cursor<'_>) -> Result<CcaState> {
    let at = c.pos();
    let dx = c.u32("cca d_x")? as u64;
    let dy = c.u32("cca d_y")? as u64;
    let k = c.u32("cca k")? as u64;
    if dx == 0 || dy == 0 || k == 0 || dx > MAX_WIDTH || dy > MAX_WIDTH || k > MAX_WIDTH {
        return Err(Error::format(at, "cca dimensions out of range"));
    }
    if k > dx.min(dy) {
        return Err(Error::format(at, format!("cca k = {k} exceeds min(d_x, d_y)")));
    }
    let (dx, dy, k) = (dx as usize, dy as usize, k as usize);
    let at = c.pos();
    let reg = c.f64_finite("cca reg")?;
    if reg < 0.0 {
        return Err(Error::format(at, "cca reg must be >= 0"));
    }
    let mean_x = c.f64_vec(dx, "cca mean_x")?;
    let mean_y = c.f64_vec(dy, "cca mean_y")?;
    let proj_x = Mat::from_raw(dx, k, c.f64_vec(dx * k, "cca proj_x")?);
    let proj_y = Mat::from_raw(dy, k, c.f64_vec(dy * k, "cca proj_y")?);
    let corr = c.f64_vec(k, "cca corr")?;
    Ok(CcaState {
        mean_x,
        mean_y,
        proj_x,
        proj_y,
        corr,
        reg,
        k,
    })
}

/// Serialize a model to the `CCALNET1` layout.
pub fn model_to_bytes(model: &DualNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(head_byte(model.head));
    out.extend_from_slice(&model.seed.to_le_bytes());
    write_tower(&mut out, &model.tower_f);
    write_tower(&mut out, &model.tower_g);
    match &model.cca {
        Some(state) => {
            out.push(1);
            write_cca(&mut out, state);
        }
        None => out.push(0),
    }
    let echo = model.config_echo.as_bytes();
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo);
    out
}

/// Parse a `CCALNET1` model file.
pub fn model_from_bytes(bytes: &[u8]) -> Result<DualNet> {
    let mut c = Cursor::new(bytes);
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected 'CCALNET1'"));
    }
    let at = c.pos();
    let head = head_from_byte(c.u8("head")?, at)?;
    let seed = c.u64("seed")?;
    let tower_f = read_tower(&mut c, "tower f")?;
    let tower_g = read_tower(&mut c, "tower g")?;
    if tower_f.output_dim() != tower_g.output_dim() {
        return Err(Error::format(
            c.pos(),
            "towers disagree on the embedding width",
        ));
    }
    let at = c.pos();
    let cca = match c.u8("has_cca")? {
        0 => None,
        1 => {
            let state = read_cca(&mut c)?;
            if state.proj_x.rows() != tower_f.output_dim()
                || state.proj_y.rows() != tower_g.output_dim()
            {
                return Err(Error::format(
                    at,
                    "cca projection dims do not match tower outputs",
                ));
            }
            Some(state)
        }
        other => {
            return Err(Error::format(at, format!("has_cca must be 0 or 1, got {other}")));
        }
    };
    let at = c.pos();
    let echo_len = c.u32("config length")? as usize;
    let echo_bytes = c.take(echo_len, "config echo")?;
    let config_echo = std::str::from_utf8(echo_bytes)
        .map_err(|_| Error::format(at + 4, "config echo is not valid UTF-8"))?
        .to_string();
    c.finish("model file")?;
    Ok(DualNet {
        tower_f,
        tower_g,
        head,
        cca,
        seed,
        config_echo,
    })
}

/// Write a model file.
pub fn save_model(model: &DualNet, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

/// Read a model file.
pub fn load_model(path: &Path) -> Result<DualNet> {
    model_from_bytes(&std::fs::read(path)?)
}
