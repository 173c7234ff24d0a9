//! Point-style memory bank: a bounded FIFO of foreground points kept in the
//! coordinate frame of the most recent sweep.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::detection::Detection;
use crate::geometry::{self, AugTransform, Mat4, Pose};

/// Default bank capacity in points.
pub const DEFAULT_CAPACITY: usize = 50_000;
/// Relative timestamps are clamped to this floor (seconds).
pub const DT_FLOOR: f64 = -10.0;
/// Default enlargement of detection boxes for foreground selection (meters).
pub const DEFAULT_FG_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    /// Seconds relative to the frame the point is expressed in; `<= 0`.
    pub dt: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> LidarPoint {
        LidarPoint { x, y, z, intensity, dt: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stored {
    point: LidarPoint,
    source_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMB {
    capacity: usize,
    max_age: f64,
    queue: VecDeque<Stored>,
    last_pose: Option<Pose>,
    last_time: f64,
}

impl Default for PointMB {
    fn default() -> Self {
        PointMB::new(DEFAULT_CAPACITY)
    }
}

impl PointMB {
    pub fn new(capacity: usize) -> PointMB {
        PointMB {
            capacity,
            max_age: f64::INFINITY,
            queue: VecDeque::with_capacity(capacity),
            last_pose: None,
            last_time: f64::NEG_INFINITY,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Points older than `seconds` are evicted at the next alignment, on top
    /// of the capacity limit.
    pub fn with_max_age(mut self, seconds: f64) -> PointMB {
        self.max_age = seconds;
        self
    }

    pub fn max_age(&self) -> f64 {
        self.max_age
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn last_pose(&self) -> Option<&Pose> {
        self.last_pose.as_ref()
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    /// Empties the queue and forgets the reference frame.
    pub fn clear(&mut self) {
        self.queue.clear();
        self.last_pose = None;
        self.last_time = f64::NEG_INFINITY;
    }

    /// Stored points in insertion order (oldest first).
    pub fn points(&self) -> impl ExactSizeIterator<Item = &LidarPoint> + '_ {
        self.queue.iter().map(|s| &s.point)
    }

    /// Absolute source timestamps in insertion order.
    pub fn source_times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.queue.iter().map(|s| s.source_time)
    }

    /// Stored points with their source timestamps, oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = (LidarPoint, f64)> + '_ {
        self.queue.iter().map(|s| (s.point, s.source_time))
    }

    /// Rebuilds a bank from a snapshot of [`entries`](Self::entries) and its
    /// reference frame. Entries beyond capacity keep the newest.
    pub fn restore(
        capacity: usize,
        max_age: f64,
        entries: &[(LidarPoint, f64)],
        last_pose: Option<Pose>,
        last_time: f64,
    ) -> PointMB {
        let mut mb = PointMB::new(capacity).with_max_age(max_age);
        let skip = entries.len().saturating_sub(capacity);
        mb.queue.extend(entries[skip..].iter().map(|&(point, source_time)| Stored { point, source_time }));
        mb.last_pose = last_pose;
        mb.last_time = last_time;
        mb
    }

    /// Re-expresses the bank in the frame of `pose_cur` at `time_cur`.
    pub fn align_to(&mut self, pose_cur: &Pose, time_cur: f64) {
        let rel = self.last_pose.as_ref().map(|last| geometry::relative_pose(pose_cur, last));
        self.align_with(rel.as_ref().map(Pose::matrix), pose_cur, time_cur);
    }

    /// Like [`align_to`](Self::align_to) for a stream whose frames carry the
    /// augmentation `aug`.
    pub fn align_to_augmented(&mut self, pose_cur: &Pose, time_cur: f64, aug: &AugTransform) {
        let rel = self
            .last_pose
            .as_ref()
            .map(|last| geometry::augmented_relative_pose(pose_cur, last, aug));
        self.align_with(rel.as_ref().map(Pose::matrix), pose_cur, time_cur);
    }

    fn align_with(&mut self, rel: Option<&Mat4>, pose_cur: &Pose, time_cur: f64) {
        debug_assert!(time_cur >= self.last_time, "bank aligned backwards in time");
        // pushes are chronological, so the oldest points sit at the front
        while self.queue.front().is_some_and(|s| time_cur - s.source_time > self.max_age) {
            self.queue.pop_front();
        }
        if let Some(m) = rel {
            for s in self.queue.iter_mut() {
                let [x, y, z] = m.apply([s.point.x, s.point.y, s.point.z]);
                s.point.x = x;
                s.point.y = y;
                s.point.z = z;
            }
        }
        for s in self.queue.iter_mut() {
            s.point.dt = (s.source_time - time_cur).max(DT_FLOOR);
        }
        self.last_pose = Some(*pose_cur);
        self.last_time = time_cur;
    }

    /// Appends points captured at `source_time` (already in the bank frame),
    /// evicting the oldest beyond capacity.
    pub fn push_foreground(&mut self, pts: &[LidarPoint], source_time: f64) {
        if self.capacity == 0 {
            return;
        }
        // Only the newest `capacity` of the incoming points can survive.
        let skip = pts.len().saturating_sub(self.capacity);
        for p in &pts[skip..] {
            if self.queue.len() == self.capacity {
                self.queue.pop_front();
            }
            let dt = (source_time - self.last_time).min(0.0).max(DT_FLOOR);
            self.queue.push_back(Stored { point: LidarPoint { dt, ..*p }, source_time });
        }
    }

    /// Bytes reserved by the queue.
    pub fn reserved_bytes(&self) -> usize {
        self.queue.capacity() * core::mem::size_of::<Stored>()
    }
}

/// `PointConcat(P_cur, T_rel * P_last)`: current points first with `dt = 0`,
/// followed by the (already aligned) bank contents.
pub fn fuse_points(p_cur: &[LidarPoint], mb: &PointMB) -> Vec<LidarPoint> {
    let mut out = Vec::with_capacity(p_cur.len() + mb.len());
    fuse_points_into(p_cur, mb, &mut out);
    out
}

/// Allocation-free variant of [`fuse_points`] that reuses `out`.
pub fn fuse_points_into(p_cur: &[LidarPoint], mb: &PointMB, out: &mut Vec<LidarPoint>) {
    out.clear();
    out.extend(p_cur.iter().map(|p| LidarPoint { dt: 0.0, ..*p }));
    out.extend(mb.points().copied());
}

/// Points whose BEV position falls inside any detection with
/// `score >= score_min`, boxes grown by `margin`.
pub fn select_foreground(
    pts: &[LidarPoint],
    dets: &[Detection],
    score_min: f64,
    margin: f64,
) -> Vec<LidarPoint> {
    let boxes: Vec<_> = dets.iter().filter(|d| d.score >= score_min).map(|d| d.bbox).collect();
    if boxes.is_empty() {
        return Vec::new();
    }
    pts.iter()
        .filter(|p| boxes.iter().any(|b| b.contains(p.x, p.y, margin)))
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BevBox;

    fn pt(i: usize) -> LidarPoint {
        LidarPoint::new(i as f64, 0.0, 0.0, 0.5)
    }

    #[test]
    fn align_empty_bank_updates_reference() {
        let mut mb = PointMB::new(10);
        mb.align_to(&Pose::translation(1.0, 0.0, 0.0), 0.5);
        assert!(mb.is_empty());
        assert_eq!(mb.last_pose(), Some(&Pose::translation(1.0, 0.0, 0.0)));
        assert_eq!(mb.last_time(), 0.5);
    }

    #[test]
    fn align_stationary_updates_dt() {
        let mut mb = PointMB::new(10);
        mb.align_to(&Pose::IDENTITY, 0.0);
        mb.push_foreground(&[LidarPoint::new(1.0, 2.0, 3.0, 0.1)], 0.0);
        mb.align_to(&Pose::IDENTITY, 0.1);
        let p = mb.points().next().unwrap();
        assert_eq!((p.x, p.y, p.z), (1.0, 2.0, 3.0));
        assert!((p.dt + 0.1).abs() < 1e-15);
    }

    #[test]
    fn align_compensates_ego_motion() {
        let mut mb = PointMB::new(10);
        mb.align_to(&Pose::IDENTITY, 0.0);
        mb.push_foreground(&[LidarPoint::new(5.0, 0.0, 0.0, 0.0)], 0.0);
        mb.align_to(&Pose::translation(1.0, 0.0, 0.0), 0.1);
        let p = mb.points().next().unwrap();
        assert!((p.x - 4.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn dt_is_clamped() {
        let mut mb = PointMB::new(10);
        mb.align_to(&Pose::IDENTITY, 0.0);
        mb.push_foreground(&[pt(0)], 0.0);
        mb.align_to(&Pose::IDENTITY, 25.0);
        assert_eq!(mb.points().next().unwrap().dt, DT_FLOOR);
    }

    #[test]
    fn fuse_examples() {
        let cur = [LidarPoint { dt: -3.0, ..pt(1) }, pt(2)];
        let mut mb = PointMB::new(10);
        let out = fuse_points(&cur, &mb);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|p| p.dt == 0.0));

        mb.align_to(&Pose::IDENTITY, 0.0);
        mb.push_foreground(&[pt(9)], 0.0);
        mb.align_to(&Pose::IDENTITY, 0.1);
        let out = fuse_points(&cur, &mb);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].x, 1.0);
        assert_eq!(out[1].x, 2.0);
        assert_eq!(out[2].x, 9.0);
        assert!((out[2].dt + 0.1).abs() < 1e-15);
        assert_eq!(mb.len(), 1);
    }

    #[test]
    fn ten_static_frames_fill_bank() {
        // 100 static points per frame, whole frame pushed as foreground.
        for capacity in [50_000, 450] {
            let mut mb = PointMB::new(capacity);
            let frame: Vec<_> = (0..100).map(pt).collect();
            let mut fused = Vec::new();
            for k in 0..10 {
                let t = k as f64 * 0.1;
                mb.align_to(&Pose::IDENTITY, t);
                fused = fuse_points(&frame, &mb);
                mb.push_foreground(&frame, t);
            }
            assert_eq!(fused.len(), 100 + 900.min(capacity));
            let dts: Vec<i64> = fused.iter().map(|p| (p.dt * 10.0).round() as i64).collect();
            let expected_oldest = -(((900.min(capacity) + 99) / 100) as i64);
            assert_eq!(*dts.iter().min().unwrap(), expected_oldest);
            assert!(dts.iter().all(|d| (-9..=0).contains(d)));
        }
    }

    #[test]
    fn max_age_evicts_old_points() {
        let mut mb = PointMB::new(1000).with_max_age(0.25);
        for k in 0..10 {
            let t = k as f64 * 0.1;
            mb.align_to(&Pose::IDENTITY, t);
            assert!(mb.points().all(|p| p.dt >= -0.25 - 1e-12));
            // only the pushes from t-0.2 and t-0.1 remain
            assert!(mb.len() <= 20);
            mb.push_foreground(&(0..10).map(pt).collect::<Vec<_>>(), t);
        }
        mb.align_to(&Pose::IDENTITY, 1.03);
        let kept: Vec<i64> = mb.source_times().map(|t| (t * 10.0).round() as i64).collect();
        assert_eq!(kept, [[8; 10], [9; 10]].concat());
    }

    #[test]
    fn push_fifo_semantics() {
        let mut mb = PointMB::new(5);
        mb.align_to(&Pose::IDENTITY, 0.0);
        mb.push_foreground(&[pt(1), pt(2), pt(3)], 0.0);
        mb.push_foreground(&[pt(4), pt(5), pt(6)], 0.0);
        let xs: Vec<f64> = mb.points().map(|p| p.x).collect();
        assert_eq!(xs, [2.0, 3.0, 4.0, 5.0, 6.0]);
        mb.push_foreground(&[], 0.0);
        assert_eq!(mb.len(), 5);
    }

    #[test]
    fn push_over_capacity_keeps_newest() {
        let mut mb = PointMB::default();
        mb.align_to(&Pose::IDENTITY, 0.0);
        let pts: Vec<_> = (0..60_000).map(pt).collect();
        mb.push_foreground(&pts, 0.0);
        assert_eq!(mb.len(), 50_000);
        assert_eq!(mb.points().next().unwrap().x, 10_000.0);
        assert_eq!(mb.points().last().unwrap().x, 59_999.0);
    }

    #[test]
    fn select_foreground_examples() {
        let pts = [LidarPoint::new(0.0, 0.0, 0.0, 0.0), LidarPoint::new(5.0, 5.0, 0.0, 0.0)];
        assert!(select_foreground(&pts, &[], 0.0, DEFAULT_FG_MARGIN).is_empty());
        let det = Detection::new(BevBox::new(0.0, 0.0, 2.0, 2.0, 0.0), 0.9, 0);
        let sel = select_foreground(&pts, &[det], 0.5, DEFAULT_FG_MARGIN);
        assert_eq!(sel, [pts[0]]);
        assert!(select_foreground(&pts, &[det], 0.95, DEFAULT_FG_MARGIN).is_empty());
        let rot = Detection::new(BevBox::new(0.0, 0.0, 1.0, 2.0, core::f64::consts::FRAC_PI_4), 0.9, 0);
        assert!(select_foreground(&[LidarPoint::new(0.9, 0.9, 0.0, 0.0)], &[rot], 0.5, 0.0).is_empty());
    }
}
