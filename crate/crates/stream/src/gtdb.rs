//! GT database directory: `index.json` describing every object and
//! `snippets.bin` holding per-frame poses and object-frame points (f64,
//! lossless) followed by a CRC32 of the whole blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use int_core::geometry::{Mat4, Pose};
use int_core::point_fusion::LidarPoint;
use int_core::seq_aug::{GtDatabase, GtObject};

use crate::bytes::{self, Cursor};
use crate::format::FormatError;

pub const INDEX_FILE: &str = "index.json";
pub const SNIPPET_FILE: &str = "snippets.bin";
const GTDB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub sequence: u32,
    pub track_id: u32,
    pub class: u32,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub frames: usize,
    pub points: usize,
    /// Byte offset of the object's first record in the snippet file.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtIndex {
    pub version: u32,
    pub objects: Vec<IndexEntry>,
}

pub fn save(db: &GtDatabase, dir: &Path) -> Result<GtIndex, FormatError> {
    std::fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut objects = Vec::with_capacity(db.objects.len());
    for o in &db.objects {
        let offset = blob.len() as u64;
        for (pose, snip) in o.poses.iter().zip(&o.snippets) {
            for v in pose.matrix().0 {
                bytes::put_f64(&mut blob, v);
            }
            bytes::put_u32(&mut blob, snip.len() as u32);
            for p in snip {
                for v in [p.x, p.y, p.z, p.intensity] {
                    bytes::put_f64(&mut blob, v);
                }
            }
        }
        objects.push(IndexEntry {
            sequence: o.sequence,
            track_id: o.track_id,
            class: o.class,
            w: o.w,
            l: o.l,
            h: o.h,
            frames: o.frames(),
            points: o.snippets.iter().map(Vec::len).sum(),
            offset,
        });
    }
    let crc = crc32fast::hash(&blob);
    bytes::put_u32(&mut blob, crc);
    std::fs::write(dir.join(SNIPPET_FILE), &blob)?;
    let index = GtIndex { version: GTDB_VERSION, objects };
    let text = serde_json::to_string_pretty(&index).map_err(|e| FormatError::Manifest(e.to_string()))?;
    std::fs::write(dir.join(INDEX_FILE), text + "\n")?;
    Ok(index)
}

pub fn load(dir: &Path) -> Result<GtDatabase, FormatError> {
    let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
    let index: GtIndex = serde_json::from_str(&text).map_err(|e| FormatError::Manifest(e.to_string()))?;
    if index.version != GTDB_VERSION {
        return Err(FormatError::Version { index: 0, found: index.version });
    }
    let blob = std::fs::read(dir.join(SNIPPET_FILE))?;
    if blob.len() < 4 {
        return Err(FormatError::Truncated { index: 0 });
    }
    let body = &blob[..blob.len() - 4];
    let stored = u32::from_le_bytes(blob[blob.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(FormatError::Crc { index: 0 });
    }
    let mut objects = Vec::with_capacity(index.objects.len());
    for (i, e) in index.objects.iter().enumerate() {
        let start = usize::try_from(e.offset).ok().filter(|&s| s <= body.len()).ok_or(FormatError::Truncated { index: i })?;
        let mut c = Cursor::new(&body[start..]);
        let mut poses = Vec::with_capacity(e.frames);
        let mut snippets = Vec::with_capacity(e.frames);
        for _ in 0..e.frames {
            let mut m = [0.0; 16];
            for v in &mut m {
                *v = c.f64().ok_or(FormatError::Truncated { index: i })?;
            }
            poses.push(Pose::from_matrix(Mat4(m)).map_err(|err| FormatError::Invalid { index: i, reason: err.to_string() })?);
            let n = c.u32().ok_or(FormatError::Truncated { index: i })? as usize;
            if n.saturating_mul(32) > c.remaining() {
                return Err(FormatError::Truncated { index: i });
            }
            let mut snip = Vec::with_capacity(n);
            for _ in 0..n {
                let mut v = [0.0; 4];
                for x in &mut v {
                    *x = c.f64().ok_or(FormatError::Truncated { index: i })?;
                }
                snip.push(LidarPoint::new(v[0], v[1], v[2], v[3]));
            }
            snippets.push(snip);
        }
        objects.push(GtObject {
            sequence: e.sequence,
            track_id: e.track_id,
            class: e.class,
            w: e.w,
            l: e.l,
            h: e.h,
            poses,
            snippets,
        });
    }
    Ok(GtDatabase { objects })
}
