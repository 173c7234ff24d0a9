//! On-disk dataset: a JSON manifest plus one binary file per sequence.
//!
//! Each frame record is little-endian:
//!
//! ```text
//! u32 magic "INTF" | u32 version | f64 timestamp | 16 x f64 pose (row-major)
//! u32 n_points | u32 n_boxes
//! n_points x (5 x f32: x y z intensity dt)
//! n_boxes  x (8 x f32: x y z w l h yaw class, u32 track id)
//! u32 CRC32 of everything above
//! ```
//!
//! Points and boxes are stored as f32 and `dt` is always written as zero, so
//! a round trip equals [`quantize`] of the input. The labeled flag is not
//! part of the record; it comes from the manifest's labeling interval.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use int_core::detection::BevBox;
use int_core::frame::{Frame, GtBox};
use int_core::geometry::{Mat4, Pose};
use int_core::point_fusion::LidarPoint;

use crate::bytes::{self, Cursor};

pub const FRAME_MAGIC: u32 = 0x494E_5446;
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 8 + 16 * 8 + 4 + 4;
const POINT_BYTES: usize = 5 * 4;
const BOX_BYTES: usize = 8 * 4 + 4;
/// Refuse records claiming more than this many points or boxes.
const MAX_ITEMS: u32 = 1 << 24;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("record {index}: bad magic {found:#010x}")]
    BadMagic { index: usize, found: u32 },
    #[error("record {index}: unsupported version {found} (expected {FORMAT_VERSION})")]
    Version { index: usize, found: u32 },
    #[error("record {index}: truncated")]
    Truncated { index: usize },
    #[error("record {index}: CRC mismatch")]
    Crc { index: usize },
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl FormatError {
    /// Record index the error refers to, if any.
    pub fn record_index(&self) -> Option<usize> {
        match self {
            FormatError::BadMagic { index, .. }
            | FormatError::Version { index, .. }
            | FormatError::Truncated { index }
            | FormatError::Crc { index }
            | FormatError::Invalid { index, .. } => Some(*index),
            FormatError::Io(_) | FormatError::Manifest(_) => None,
        }
    }
}

/// Appends one frame record to `buf`.
pub fn encode_frame(frame: &Frame, buf: &mut Vec<u8>) {
    let start = buf.len();
    bytes::put_u32(buf, FRAME_MAGIC);
    bytes::put_u32(buf, FORMAT_VERSION);
    bytes::put_f64(buf, frame.timestamp);
    for v in frame.pose.matrix().0 {
        bytes::put_f64(buf, v);
    }
    bytes::put_u32(buf, frame.points.len() as u32);
    bytes::put_u32(buf, frame.boxes.len() as u32);
    for p in &frame.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes::put_f32(buf, v as f32);
        }
        bytes::put_f32(buf, 0.0);
    }
    for b in &frame.boxes {
        let bb = b.bbox;
        for v in [bb.x, bb.y, b.z, bb.w, bb.l, b.h, bb.yaw, b.class as f64] {
            bytes::put_f32(buf, v as f32);
        }
        bytes::put_u32(buf, b.track_id);
    }
    let crc = crc32fast::hash(&buf[start..]);
    bytes::put_u32(buf, crc);
}

/// What a write/read round trip makes of `frame`.
pub fn quantize(frame: &Frame) -> Frame {
    let q = |v: f64| v as f32 as f64;
    Frame {
        timestamp: frame.timestamp,
        pose: frame.pose,
        points: frame
            .points
            .iter()
            .map(|p| LidarPoint { x: q(p.x), y: q(p.y), z: q(p.z), intensity: q(p.intensity), dt: 0.0 })
            .collect(),
        boxes: frame
            .boxes
            .iter()
            .map(|b| GtBox {
                bbox: BevBox { x: q(b.bbox.x), y: q(b.bbox.y), w: q(b.bbox.w), l: q(b.bbox.l), yaw: q(b.bbox.yaw) },
                z: q(b.z),
                h: q(b.h),
                class: b.class,
                track_id: b.track_id,
            })
            .collect(),
        labeled: frame.labeled,
        aug: None,
    }
}

/// Fills `buf` from `r`, returning how many bytes arrived before EOF.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Streaming reader over one sequence file. Holds a single record buffer;
/// every call to `next` hands out a freshly decoded frame.
pub struct SequenceReader<R> {
    inner: R,
    index: usize,
    label_interval: usize,
    last_time: f64,
    buf: Vec<u8>,
    done: bool,
}

impl SequenceReader<BufReader<File>> {
    pub fn open(path: &Path, label_interval: usize) -> Result<Self, FormatError> {
        Ok(SequenceReader::new(BufReader::new(File::open(path)?), label_interval))
    }
}

impl<R: Read> SequenceReader<R> {
    pub fn new(inner: R, label_interval: usize) -> Self {
        SequenceReader {
            inner,
            index: 0,
            label_interval: label_interval.max(1),
            last_time: f64::NEG_INFINITY,
            buf: Vec::new(),
            done: false,
        }
    }

    /// Index of the next record.
    pub fn position(&self) -> usize {
        self.index
    }

    /// Reads the next frame into `out`, reusing its allocations. Returns
    /// `false` at a clean end of file.
    pub fn read_into(&mut self, out: &mut Frame) -> Result<bool, FormatError> {
        if self.done {
            return Ok(false);
        }
        let index = self.index;
        self.buf.resize(HEADER_BYTES, 0);
        let got = read_full(&mut self.inner, &mut self.buf[..HEADER_BYTES])?;
        if got == 0 {
            self.done = true;
            return Ok(false);
        }
        if got < HEADER_BYTES {
            self.done = true;
            return Err(FormatError::Truncated { index });
        }
        let mut c = Cursor::new(&self.buf);
        let magic = c.u32().unwrap_or_default();
        if magic != FRAME_MAGIC {
            self.done = true;
            return Err(FormatError::BadMagic { index, found: magic });
        }
        let version = c.u32().unwrap_or_default();
        if version != FORMAT_VERSION {
            self.done = true;
            return Err(FormatError::Version { index, found: version });
        }
        c.f64();
        for _ in 0..16 {
            c.f64();
        }
        let n_points = c.u32().unwrap_or_default();
        let n_boxes = c.u32().unwrap_or_default();
        if n_points > MAX_ITEMS || n_boxes > MAX_ITEMS {
            self.done = true;
            return Err(FormatError::Invalid { index, reason: format!("implausible counts {n_points}/{n_boxes}") });
        }
        let body = n_points as usize * POINT_BYTES + n_boxes as usize * BOX_BYTES + 4;
        self.buf.resize(HEADER_BYTES + body, 0);
        let got = read_full(&mut self.inner, &mut self.buf[HEADER_BYTES..])?;
        if got < body {
            self.done = true;
            return Err(FormatError::Truncated { index });
        }
        let payload = self.buf.len() - 4;
        let stored = u32::from_le_bytes(self.buf[payload..].try_into().expect("4 bytes"));
        if crc32fast::hash(&self.buf[..payload]) != stored {
            self.done = true;
            return Err(FormatError::Crc { index });
        }
        decode_body(&self.buf, n_points, n_boxes, out).map_err(|reason| FormatError::Invalid { index, reason })?;
        if !(out.timestamp > self.last_time) {
            self.done = true;
            return Err(FormatError::Invalid { index, reason: "timestamps not strictly increasing".into() });
        }
        self.last_time = out.timestamp;
        out.labeled = index % self.label_interval == 0;
        self.index += 1;
        Ok(true)
    }
}

fn decode_body(buf: &[u8], n_points: u32, n_boxes: u32, out: &mut Frame) -> Result<(), String> {
    let mut c = Cursor::new(&buf[8..]);
    let short = || "record shorter than its counts".to_string();
    out.timestamp = c.f64().ok_or_else(short)?;
    let mut m = [0.0; 16];
    for v in &mut m {
        *v = c.f64().ok_or_else(short)?;
    }
    out.pose = Pose::from_matrix(Mat4(m)).map_err(|e| format!("pose: {e}"))?;
    c.u32();
    c.u32();
    out.points.clear();
    out.points.reserve(n_points as usize);
    for _ in 0..n_points {
        let mut v = [0.0f64; 5];
        for x in &mut v {
            *x = c.f32().ok_or_else(short)? as f64;
        }
        out.points.push(LidarPoint { x: v[0], y: v[1], z: v[2], intensity: v[3], dt: v[4] });
    }
    out.boxes.clear();
    out.boxes.reserve(n_boxes as usize);
    for _ in 0..n_boxes {
        let mut v = [0.0f64; 8];
        for x in &mut v {
            *x = c.f32().ok_or_else(short)? as f64;
        }
        let track_id = c.u32().ok_or_else(short)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err("non-finite box".into());
        }
        out.boxes.push(GtBox {
            bbox: BevBox { x: v[0], y: v[1], w: v[3], l: v[4], yaw: v[6] },
            z: v[2],
            h: v[5],
            class: v[7] as u32,
            track_id,
        });
    }
    out.aug = None;
    Ok(())
}

impl<R: Read> Iterator for SequenceReader<R> {
    type Item = Result<Frame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut f = Frame::new(0.0, Pose::IDENTITY);
        match self.read_into(&mut f) {
            Ok(true) => Some(Ok(f)),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

/// Writes frame records to any sink, enforcing increasing timestamps.
pub struct SequenceWriter<W: Write> {
    inner: W,
    buf: Vec<u8>,
    index: usize,
    last_time: f64,
}

impl SequenceWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, FormatError> {
        Ok(SequenceWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> SequenceWriter<W> {
    pub fn new(inner: W) -> Self {
        SequenceWriter { inner, buf: Vec::new(), index: 0, last_time: f64::NEG_INFINITY }
    }

    pub fn write(&mut self, frame: &Frame) -> Result<(), FormatError> {
        if !(frame.timestamp > self.last_time) {
            return Err(FormatError::Invalid {
                index: self.index,
                reason: "timestamps not strictly increasing".into(),
            });
        }
        if frame.boxes.iter().any(|b| ![b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.l, b.bbox.yaw, b.z, b.h].iter().all(|v| v.is_finite())) {
            return Err(FormatError::Invalid { index: self.index, reason: "non-finite box".into() });
        }
        self.buf.clear();
        encode_frame(frame, &mut self.buf);
        self.inner.write_all(&self.buf)?;
        self.last_time = frame.timestamp;
        self.index += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.index
    }

    pub fn finish(mut self) -> Result<W, FormatError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: u32,
    pub file: String,
    pub frames: usize,
    /// Generator seed, when the sequence is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Every `label_interval`-th frame of a sequence is labeled.
    pub label_interval: usize,
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    pub fn new(label_interval: usize) -> Manifest {
        Manifest { format: "intf".into(), version: FORMAT_VERSION, label_interval, sequences: Vec::new() }
    }

    pub fn load(dir: &Path) -> Result<Manifest, FormatError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| FormatError::Manifest(e.to_string()))?;
        if m.format != "intf" || m.version != FORMAT_VERSION {
            return Err(FormatError::Manifest(format!("unsupported format {} v{}", m.format, m.version)));
        }
        if m.label_interval == 0 {
            return Err(FormatError::Manifest("label_interval must be positive".into()));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<(), FormatError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| FormatError::Manifest(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames).sum()
    }
}

pub fn sequence_file_name(id: u32) -> String {
    format!("seq_{id:05}.intf")
}

/// Writes sequences (with optional generator seeds) and their manifest.
pub fn write_dataset(
    dir: &Path,
    sequences: &[(Option<u64>, Vec<Frame>)],
    label_interval: usize,
) -> Result<Manifest, FormatError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new(label_interval.max(1));
    for (id, (seed, frames)) in sequences.iter().enumerate() {
        let id = id as u32;
        let file = sequence_file_name(id);
        let mut w = SequenceWriter::create(&dir.join(&file))?;
        for f in frames {
            w.write(f)?;
        }
        w.finish()?;
        manifest.sequences.push(SequenceEntry { id, file, frames: frames.len(), seed: *seed });
    }
    manifest.save(dir)?;
    Ok(manifest)
}

/// A dataset directory opened for streaming.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset, FormatError> {
        Ok(Dataset { dir: dir.to_path_buf(), manifest: Manifest::load(dir)? })
    }

    pub fn reader(&self, seq: usize) -> Result<SequenceReader<BufReader<File>>, FormatError> {
        let entry = self
            .manifest
            .sequences
            .get(seq)
            .ok_or_else(|| FormatError::Manifest(format!("no sequence {seq}")))?;
        SequenceReader::open(&self.dir.join(&entry.file), self.manifest.label_interval)
    }

    /// Reads sequence `seq` fully, checking the manifest frame count.
    pub fn load_sequence(&self, seq: usize) -> Result<Vec<Frame>, FormatError> {
        let frames: Vec<Frame> = self.reader(seq)?.collect::<Result<_, _>>()?;
        let expected = self.manifest.sequences[seq].frames;
        if frames.len() != expected {
            return Err(FormatError::Manifest(format!(
                "sequence {seq}: manifest lists {expected} frames, file holds {}",
                frames.len()
            )));
        }
        Ok(frames)
    }

    pub fn load_all(&self) -> Result<Vec<Vec<Frame>>, FormatError> {
        (0..self.manifest.sequences.len()).map(|s| self.load_sequence(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64) -> Frame {
        let mut f = Frame::new(t, Pose::planar(1.0 + t, -2.0, 0.0, 0.3));
        f.points.push(LidarPoint { x: 1.1, y: 2.2, z: 0.3, intensity: 0.7, dt: -0.5 });
        f.points.push(LidarPoint::new(-4.0, 0.5, 1.5, 0.1));
        f.boxes.push(GtBox { bbox: BevBox::new(3.0, 1.0, 1.8, 4.2, 0.4), z: 0.8, h: 1.6, class: 2, track_id: 9 });
        f
    }

    #[test]
    fn record_layout_sizes() {
        let mut buf = Vec::new();
        encode_frame(&frame(0.0), &mut buf);
        assert_eq!(buf.len(), HEADER_BYTES + 2 * POINT_BYTES + BOX_BYTES + 4);
        assert_eq!(&buf[..4], &FRAME_MAGIC.to_le_bytes());
        assert_eq!(&buf[..4], b"FTNI");
    }

    #[test]
    fn round_trip_is_quantization() {
        let frames: Vec<Frame> = (0..3).map(|i| frame(i as f64 * 0.1)).collect();
        let mut w = SequenceWriter::new(Vec::new());
        for f in &frames {
            w.write(f).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back: Vec<Frame> = SequenceReader::new(&bytes[..], 1).collect::<Result<_, _>>().unwrap();
        let expected: Vec<Frame> = frames.iter().map(quantize).collect();
        assert_eq!(back, expected);
        // a second trip is byte-identical
        let mut w = SequenceWriter::new(Vec::new());
        for f in &back {
            w.write(f).unwrap();
        }
        assert_eq!(w.finish().unwrap(), bytes);
    }

    #[test]
    fn label_interval_applies() {
        let mut w = SequenceWriter::new(Vec::new());
        for i in 0..7 {
            w.write(&frame(i as f64)).unwrap();
        }
        let bytes = w.finish().unwrap();
        let labels: Vec<bool> = SequenceReader::new(&bytes[..], 3).map(|f| f.unwrap().labeled).collect();
        assert_eq!(labels, [true, false, false, true, false, false, true]);
    }

    #[test]
    fn writer_rejects_time_going_backwards() {
        let mut w = SequenceWriter::new(Vec::new());
        w.write(&frame(1.0)).unwrap();
        assert!(matches!(w.write(&frame(1.0)), Err(FormatError::Invalid { index: 1, .. })));
    }
}
