//! Model checkpoints and memory-bank snapshots.
//!
//! A checkpoint stores the grid layout, the channel contract, the engine
//! settings and the parameters as an f32 blob. A bank snapshot keeps every
//! value in f64 so that replaying a stream from it is bit-exact.

use std::path::Path;

use int_core::engine::{EngineConfig, FusionConfig, MemoryBank};
use int_core::geometry::{GridSpec, Mat4, Pose};
use int_core::grid::ImageGrid;
use int_core::image_fusion::FusionMode;
use int_core::model::REG_CHANNELS;
use int_core::point_fusion::{LidarPoint, PointMB};
use int_core::voxelize::C_IN;
use int_core::ToyModel;

use crate::bytes::{self, Cursor};
use crate::format::FormatError;

pub const MODEL_MAGIC: u32 = 0x494E_544D;
pub const BANK_MAGIC: u32 = 0x494E_5442;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub engine: EngineConfig,
    pub model: ToyModel,
}

fn mode_code(m: Option<FusionMode>) -> u8 {
    match m {
        None => 0,
        Some(FusionMode::Add) => 1,
        Some(FusionMode::Max) => 2,
        Some(FusionMode::Concat) => 3,
        Some(FusionMode::Gru) => 4,
    }
}

fn mode_from(code: u8) -> Option<Option<FusionMode>> {
    Some(match code {
        0 => None,
        1 => Some(FusionMode::Add),
        2 => Some(FusionMode::Max),
        3 => Some(FusionMode::Concat),
        4 => Some(FusionMode::Gru),
        _ => return None,
    })
}

fn put_spec(buf: &mut Vec<u8>, s: &GridSpec) {
    bytes::put_f64(buf, s.x_min);
    bytes::put_f64(buf, s.y_min);
    bytes::put_f64(buf, s.cell_size);
    bytes::put_u32(buf, s.width as u32);
    bytes::put_u32(buf, s.height as u32);
    bytes::put_u32(buf, s.channels as u32);
}

fn invalid(reason: impl Into<String>) -> FormatError {
    FormatError::Invalid { index: 0, reason: reason.into() }
}

const SHORT: FormatError = FormatError::Truncated { index: 0 };

fn get_spec(c: &mut Cursor) -> Result<GridSpec, FormatError> {
    let (x, y, cell) = (c.f64().ok_or(SHORT)?, c.f64().ok_or(SHORT)?, c.f64().ok_or(SHORT)?);
    let (w, h, ch) = (c.u32().ok_or(SHORT)?, c.u32().ok_or(SHORT)?, c.u32().ok_or(SHORT)?);
    GridSpec::new(x, y, cell, w as usize, h as usize, ch as usize).map_err(|e| invalid(e.to_string()))
}

/// Appends the CRC and writes the file.
fn finish(path: &Path, mut buf: Vec<u8>) -> Result<(), FormatError> {
    let crc = crc32fast::hash(&buf);
    bytes::put_u32(&mut buf, crc);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a file, checks the CRC, magic and version, and returns the body
/// after the version word.
fn open(path: &Path, magic: u32) -> Result<Vec<u8>, FormatError> {
    let blob = std::fs::read(path)?;
    if blob.len() < 12 {
        return Err(SHORT);
    }
    let body = blob.len() - 4;
    let found = u32::from_le_bytes(blob[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(FormatError::BadMagic { index: 0, found });
    }
    let version = u32::from_le_bytes(blob[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version { index: 0, found: version });
    }
    if crc32fast::hash(&blob[..body]) != u32::from_le_bytes(blob[body..].try_into().expect("4 bytes")) {
        return Err(FormatError::Crc { index: 0 });
    }
    Ok(blob[8..body].to_vec())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    bytes::put_u32(&mut buf, MODEL_MAGIC);
    bytes::put_u32(&mut buf, CHECKPOINT_VERSION);
    put_spec(&mut buf, &ck.engine.spec);
    bytes::put_u32(&mut buf, ck.model.c_in as u32);
    bytes::put_u32(&mut buf, ck.model.c_mid as u32);
    bytes::put_u32(&mut buf, REG_CHANNELS as u32);
    let f = ck.engine.fusion;
    bytes::put_u8(&mut buf, f.pc as u8);
    bytes::put_u8(&mut buf, mode_code(f.fm));
    bytes::put_u8(&mut buf, mode_code(f.pm));
    let e = &ck.engine;
    bytes::put_u32(&mut buf, e.point_capacity as u32);
    bytes::put_f64(&mut buf, e.point_max_age.unwrap_or(f64::NAN));
    for v in [e.score_min, e.nms_radius, e.fg_score_min, e.fg_margin] {
        bytes::put_f64(&mut buf, v);
    }
    let flat = ck.model.to_flat();
    bytes::put_u32(&mut buf, flat.len() as u32);
    for v in flat {
        bytes::put_f32(&mut buf, v as f32);
    }
    finish(path, buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let body = open(path, MODEL_MAGIC)?;
    let mut c = Cursor::new(&body);
    let spec = get_spec(&mut c)?;
    let c_in = c.u32().ok_or(SHORT)? as usize;
    let c_mid = c.u32().ok_or(SHORT)? as usize;
    let reg = c.u32().ok_or(SHORT)? as usize;
    if c_in != C_IN || reg != REG_CHANNELS {
        return Err(invalid(format!("channel contract {c_in}/{reg}, expected {C_IN}/{REG_CHANNELS}")));
    }
    if c_mid == 0 || c_mid > 4096 {
        return Err(invalid(format!("implausible c_mid {c_mid}")));
    }
    let pc = c.u8().ok_or(SHORT)? != 0;
    let fm = mode_from(c.u8().ok_or(SHORT)?).ok_or_else(|| invalid("unknown fm mode"))?;
    let pm = mode_from(c.u8().ok_or(SHORT)?).ok_or_else(|| invalid("unknown pm mode"))?;
    let mut engine = EngineConfig::new(spec, FusionConfig { pc, fm, pm });
    engine.point_capacity = c.u32().ok_or(SHORT)? as usize;
    let age = c.f64().ok_or(SHORT)?;
    engine.point_max_age = (!age.is_nan()).then_some(age);
    engine.score_min = c.f64().ok_or(SHORT)?;
    engine.nms_radius = c.f64().ok_or(SHORT)?;
    engine.fg_score_min = c.f64().ok_or(SHORT)?;
    engine.fg_margin = c.f64().ok_or(SHORT)?;
    let n = c.u32().ok_or(SHORT)? as usize;
    let mut model = ToyModel::zeros(c_mid);
    model.set_fusion(fm, pm);
    if n != model.num_params() || n * 4 != c.remaining() {
        return Err(invalid(format!("parameter blob holds {n}, model needs {}", model.num_params())));
    }
    let flat: Vec<f64> = (0..n).map(|_| c.f32().map(f64::from)).collect::<Option<_>>().ok_or(SHORT)?;
    model.load_flat(&flat).map_err(|e| invalid(e.to_string()))?;
    if !model.is_finite() {
        return Err(invalid("non-finite parameters"));
    }
    engine.check_model(&model).map_err(|e| invalid(e.to_string()))?;
    Ok(Checkpoint { engine, model })
}

fn put_pose(buf: &mut Vec<u8>, p: Option<&Pose>) {
    bytes::put_u8(buf, p.is_some() as u8);
    for v in p.map_or([0.0; 16], |p| p.matrix().0) {
        bytes::put_f64(buf, v);
    }
}

fn get_pose(c: &mut Cursor) -> Result<Option<Pose>, FormatError> {
    let present = c.u8().ok_or(SHORT)? != 0;
    let mut m = [0.0; 16];
    for v in &mut m {
        *v = c.f64().ok_or(SHORT)?;
    }
    if !present {
        return Ok(None);
    }
    Pose::from_matrix(Mat4(m)).map(Some).map_err(|e| invalid(e.to_string()))
}

fn put_grid(buf: &mut Vec<u8>, g: &ImageGrid) {
    put_spec(buf, &g.spec);
    g.data.iter().for_each(|v| bytes::put_f64(buf, *v));
    g.mask.iter().for_each(|v| bytes::put_u8(buf, *v));
    g.count.iter().for_each(|v| bytes::put_u32(buf, *v));
}

fn get_grid(c: &mut Cursor) -> Result<ImageGrid, FormatError> {
    let spec = get_spec(c)?;
    let cells = spec.cells();
    if cells.saturating_mul(spec.channels * 8 + 5) > c.remaining() {
        return Err(SHORT);
    }
    let mut g = ImageGrid::zeros(spec);
    for v in &mut g.data {
        *v = c.f64().ok_or(SHORT)?;
    }
    for v in &mut g.mask {
        *v = c.u8().ok_or(SHORT)?;
    }
    for v in &mut g.count {
        *v = c.u32().ok_or(SHORT)?;
    }
    Ok(g)
}

pub fn save_bank(path: &Path, bank: &MemoryBank) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    bytes::put_u32(&mut buf, BANK_MAGIC);
    bytes::put_u32(&mut buf, CHECKPOINT_VERSION);
    let pt = &bank.point;
    bytes::put_u64(&mut buf, pt.capacity() as u64);
    bytes::put_f64(&mut buf, pt.max_age());
    put_pose(&mut buf, pt.last_pose());
    bytes::put_f64(&mut buf, pt.last_time());
    bytes::put_u64(&mut buf, pt.len() as u64);
    for (p, t) in pt.entries() {
        for v in [p.x, p.y, p.z, p.intensity, p.dt, t] {
            bytes::put_f64(&mut buf, v);
        }
    }
    put_grid(&mut buf, &bank.fm);
    put_grid(&mut buf, &bank.pm);
    put_pose(&mut buf, bank.last.as_ref().map(|(p, _)| p));
    bytes::put_f64(&mut buf, bank.last.map_or(f64::NAN, |(_, t)| t));
    bytes::put_u64(&mut buf, bank.frames_seen);
    finish(path, buf)
}

pub fn load_bank(path: &Path) -> Result<MemoryBank, FormatError> {
    let body = open(path, BANK_MAGIC)?;
    let mut c = Cursor::new(&body);
    let capacity = c.u64().ok_or(SHORT)? as usize;
    let max_age = c.f64().ok_or(SHORT)?;
    let last_pose = get_pose(&mut c)?;
    let last_time = c.f64().ok_or(SHORT)?;
    let n = c.u64().ok_or(SHORT)? as usize;
    if n.saturating_mul(48) > c.remaining() || n > capacity {
        return Err(invalid("point count exceeds payload or capacity"));
    }
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = [0.0; 6];
        for x in &mut v {
            *x = c.f64().ok_or(SHORT)?;
        }
        entries.push((LidarPoint { x: v[0], y: v[1], z: v[2], intensity: v[3], dt: v[4] }, v[5]));
    }
    let point = PointMB::restore(capacity, max_age, &entries, last_pose, last_time);
    let fm = get_grid(&mut c)?;
    let pm = get_grid(&mut c)?;
    let last_pose = get_pose(&mut c)?;
    let last_t = c.f64().ok_or(SHORT)?;
    let frames_seen = c.u64().ok_or(SHORT)?;
    if c.remaining() != 0 {
        return Err(invalid("trailing bytes"));
    }
    Ok(MemoryBank { point, fm, pm, last: last_pose.map(|p| (p, last_t)), frames_seen })
}
