//! Stream-consistent augmentation. One random state per stream, keyed by
//! `(base_seed, sequence_id, epoch)`: every frame of the stream gets the
//! same flip/rotation/scale/translation, and ground-truth objects pasted
//! from the database follow their recorded motion frame after frame.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::BevBox;
use crate::frame::{Frame, GtBox};
use crate::geometry::{AugTransform, Flip, Pose};
use crate::math;
use crate::point_fusion::LidarPoint;
use crate::rng::keyed_rng;

/// Sampling ranges of the stream state. Zero-width ranges give the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugRanges {
    /// Probability of mirroring across the x axis.
    pub flip_prob: f64,
    /// Rotation is uniform in `[-rotation_max, rotation_max]`.
    pub rotation_max: f64,
    pub scale: (f64, f64),
    /// Per-axis standard deviation of the translation, meters.
    pub translation_sigma: f64,
    /// Objects pasted per stream.
    pub paste_count: usize,
    /// Placements are uniform in `[-paste_extent, paste_extent]^2` around
    /// the stream's first ego pose, at least `paste_min_range` away from it.
    pub paste_extent: f64,
    pub paste_min_range: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        AugRanges {
            flip_prob: 0.5,
            rotation_max: PI / 4.0,
            scale: (0.95, 1.05),
            translation_sigma: 0.2,
            paste_count: 0,
            paste_extent: 25.0,
            paste_min_range: 4.0,
        }
    }
}

impl AugRanges {
    pub const NONE: AugRanges = AugRanges {
        flip_prob: 0.0,
        rotation_max: 0.0,
        scale: (1.0, 1.0),
        translation_sigma: 0.0,
        paste_count: 0,
        paste_extent: 0.0,
        paste_min_range: 0.0,
    };
}

/// A database object placed into a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPick {
    /// Index into [`GtDatabase::objects`].
    pub object: usize,
    /// Pose of the object's first recorded frame, relative to the stream anchor.
    pub placement: Pose,
    /// Frame offset (within the stream) at which the object appears.
    pub start_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamAugState {
    pub key: (u64, u64, u64),
    pub aug: AugTransform,
    pub gt_picks: Vec<GtPick>,
}

const TAG_AUG: u64 = 0x6175_67;

/// Pure function of the key (and the ranges / database size).
pub fn derive_state(base_seed: u64, sequence_id: u64, epoch: u64, ranges: &AugRanges, db_len: usize) -> StreamAugState {
    let mut rng = keyed_rng(&[base_seed, sequence_id, epoch, TAG_AUG]);
    // Fixed draw order; every draw is consumed even when its range is empty.
    let u_flip: f64 = rng.random_range(0.0..1.0);
    let u_rot: f64 = rng.random_range(-1.0..1.0);
    let u_scale: f64 = rng.random_range(0.0..1.0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n: [f64; 3] = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];

    let aug = AugTransform {
        flip: if u_flip < ranges.flip_prob { Flip::X } else { Flip::None },
        rotation_z: u_rot * ranges.rotation_max,
        scale: ranges.scale.0 + u_scale * (ranges.scale.1 - ranges.scale.0),
        translation: n.map(|v| v * ranges.translation_sigma),
    };

    let mut gt_picks = Vec::new();
    if db_len > 0 {
        for _ in 0..ranges.paste_count {
            let object = rng.random_range(0..db_len);
            let (mut x, mut y);
            let mut tries = 0;
            loop {
                x = rng.random_range(-1.0..=1.0) * ranges.paste_extent;
                y = rng.random_range(-1.0..=1.0) * ranges.paste_extent;
                tries += 1;
                if math::sqrt(x * x + y * y) >= ranges.paste_min_range || tries > 64 {
                    break;
                }
            }
            let yaw = rng.random_range(-PI..PI);
            gt_picks.push(GtPick { object, placement: Pose::planar(x, y, 0.0, yaw), start_frame: 0 });
        }
    }
    StreamAugState { key: (base_seed, sequence_id, epoch), aug, gt_picks }
}

/// Applies the stream transform to points and boxes and tags the frame.
pub fn augment_frame(frame: &Frame, state: &StreamAugState) -> Frame {
    let mut out = frame.clone();
    augment_in_place(&mut out, &state.aug);
    out
}

pub fn augment_in_place(frame: &mut Frame, aug: &AugTransform) {
    let m = aug.matrix();
    for p in &mut frame.points {
        let [x, y, z] = m.apply([p.x, p.y, p.z]);
        p.x = x;
        p.y = y;
        p.z = z;
    }
    for b in &mut frame.boxes {
        let [x, y, z] = m.apply([b.bbox.x, b.bbox.y, b.z]);
        b.bbox = BevBox::new(x, y, b.bbox.w * aug.scale, b.bbox.l * aug.scale, aug.apply_yaw(b.bbox.yaw));
        b.z = z;
        b.h *= aug.scale;
    }
    frame.aug = Some(*aug);
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GtDbError {
    #[error("dataset contains no labeled frames")]
    Unlabeled,
}

/// Points lower than this are treated as ground and left out of snippets.
pub const GROUND_CLEARANCE: f64 = 0.15;
/// Slack around a box when collecting its points.
pub const SNIPPET_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub sequence: u32,
    pub track_id: u32,
    pub class: u32,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    /// World pose of the box base centre at each recorded frame.
    pub poses: Vec<Pose>,
    /// Points in the object frame (origin at the base centre, x along heading).
    pub snippets: Vec<Vec<LidarPoint>>,
}

impl GtObject {
    pub fn frames(&self) -> usize {
        self.poses.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GtDatabase {
    /// Sorted by `(sequence, track_id)`.
    pub objects: Vec<GtObject>,
}

impl GtDatabase {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// Collects per-track snippets from the labeled frames of every sequence.
pub fn build_gt_database(sequences: &[Vec<Frame>]) -> Result<GtDatabase, GtDbError> {
    let mut objects: Vec<GtObject> = Vec::new();
    let mut any_labeled = false;
    for (s, frames) in sequences.iter().enumerate() {
        let first = objects.len();
        for f in frames.iter().filter(|f| f.labeled) {
            any_labeled = true;
            for b in &f.boxes {
                let in_ego = Pose::planar(b.bbox.x, b.bbox.y, 0.0, b.bbox.yaw);
                let to_obj = in_ego.invert();
                let snippet: Vec<LidarPoint> = f
                    .points
                    .iter()
                    .filter(|p| {
                        b.bbox.contains(p.x, p.y, SNIPPET_MARGIN)
                            && p.z >= GROUND_CLEARANCE
                            && p.z <= b.z + 0.5 * b.h + SNIPPET_MARGIN
                    })
                    .map(|p| {
                        let [x, y, z] = to_obj.matrix().apply([p.x, p.y, p.z]);
                        LidarPoint { x, y, z, intensity: p.intensity, dt: 0.0 }
                    })
                    .collect();
                let world = f.pose.compose(&in_ego);
                let slot = objects[first..].iter().position(|o| o.track_id == b.track_id);
                match slot {
                    Some(i) => {
                        let o = &mut objects[first + i];
                        o.poses.push(world);
                        o.snippets.push(snippet);
                    }
                    None => objects.push(GtObject {
                        sequence: s as u32,
                        track_id: b.track_id,
                        class: b.class,
                        w: b.bbox.w,
                        l: b.bbox.l,
                        h: b.h,
                        poses: alloc::vec![world],
                        snippets: alloc::vec![snippet],
                    }),
                }
            }
        }
        objects[first..].sort_by_key(|o| o.track_id);
    }
    if !any_labeled {
        return Err(GtDbError::Unlabeled);
    }
    Ok(GtDatabase { objects })
}

/// Track ids given to pasted boxes start here.
pub const PASTE_TRACK_BASE: u32 = 1 << 24;

/// Pastes the stream's picks into `frame` (raw, unaugmented ego frame).
/// `anchor` is the ego pose of the stream's first frame and `frame_offset`
/// the frame's position in the stream. A pick whose box overlaps an
/// existing box (IoU > 0.05) is skipped for this frame.
pub fn gt_paste(frame: &Frame, db: &GtDatabase, state: &StreamAugState, frame_offset: usize, anchor: &Pose) -> Frame {
    let mut out = frame.clone();
    let to_ego = frame.pose.invert();
    for (i, pick) in state.gt_picks.iter().enumerate() {
        if frame_offset < pick.start_frame {
            continue;
        }
        let Some(obj) = db.objects.get(pick.object) else {
            continue;
        };
        let k = (frame_offset - pick.start_frame).min(obj.frames() - 1);
        let motion = obj.poses[0].invert().compose(&obj.poses[k]);
        let world = anchor.compose(&pick.placement).compose(&motion);
        let in_ego = to_ego.compose(&world);
        let [x, y, _] = in_ego.translation_part();
        let bbox = BevBox::new(x, y, obj.w, obj.l, math::wrap_angle(in_ego.yaw()));
        if out.boxes.iter().any(|b| b.bbox.iou(&bbox) > 0.05) {
            continue;
        }
        let m = in_ego.matrix();
        out.points.extend(obj.snippets[k].iter().map(|p| {
            let [x, y, z] = m.apply([p.x, p.y, p.z]);
            LidarPoint { x, y, z, intensity: p.intensity, dt: 0.0 }
        }));
        out.boxes.push(GtBox { bbox, z: 0.5 * obj.h, h: obj.h, class: obj.class, track_id: PASTE_TRACK_BASE + i as u32 });
    }
    out
}
