//! Synthetic LiDAR world: boxes on a ground plane, an ego vehicle on a
//! parametric trajectory and a sensor with a fixed per-frame point budget
//! whose returns thin out with range.
//!
//! Every object carries a fixed set of surface sample points in its own
//! frame (the spots the beam pattern hits); each sweep keeps the ones on
//! faces turned towards the sensor, drops each with a range-dependent
//! probability and adds Gaussian noise. Remaining budget goes to transient
//! clutter and then to ground returns.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::BevBox;
use crate::frame::{Frame, GtBox};
use crate::geometry::Pose;
use crate::math;
use crate::point_fusion::LidarPoint;
use crate::rng::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgoTrajectory {
    Straight,
    /// Constant yaw rate (rad/s).
    Arc { yaw_rate: f64 },
    /// Sinusoidal lateral offset of amplitude `offset` (m) over `period` (s).
    LaneChange { offset: f64, period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarConfig {
    /// Maximum return range (m).
    pub range: f64,
    /// Exact number of points every sweep contains.
    pub points_per_frame: usize,
    /// Surface sample points per object before visibility and dropout.
    pub object_points: usize,
    /// Transient clutter returns per sweep (random position and height).
    pub clutter_points: usize,
    /// Dropout probability at zero range and at `range`, linear in between.
    pub dropout_near: f64,
    pub dropout_far: f64,
    /// Angular resolution of the ground beam pattern (rad).
    pub angular_resolution: f64,
    /// Range noise, meters.
    pub noise_sigma: f64,
}

impl LidarConfig {
    pub fn dropout(&self, r: f64) -> f64 {
        let t = (r / self.range).clamp(0.0, 1.0);
        (self.dropout_near + (self.dropout_far - self.dropout_near) * t).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    pub n_static: usize,
    pub n_moving: usize,
    pub speed_range: (f64, f64),
    pub width_range: (f64, f64),
    pub length_range: (f64, f64),
    pub height_range: (f64, f64),
    /// Objects are placed at lateral offsets in this range (m) from the ego path.
    pub lateral_range: (f64, f64),
    pub lidar: LidarConfig,
    pub frame_rate: f64,
    pub duration: usize,
    pub ego: EgoTrajectory,
    pub ego_speed: f64,
    /// Every `label_interval`-th frame is labeled.
    pub label_interval: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_static: 12,
            n_moving: 4,
            speed_range: (1.0, 6.0),
            width_range: (1.6, 2.2),
            length_range: (3.5, 5.0),
            height_range: (1.4, 2.0),
            lateral_range: (3.0, 30.0),
            lidar: LidarConfig {
                range: 40.0,
                points_per_frame: 4000,
                object_points: 60,
                clutter_points: 150,
                dropout_near: 0.0,
                dropout_far: 0.95,
                angular_resolution: 0.2f64.to_radians(),
                noise_sigma: 0.02,
            },
            frame_rate: 10.0,
            duration: 100,
            ego: EgoTrajectory::Straight,
            ego_speed: 5.0,
            label_interval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Invalid(&'static str),
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let pos = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0 && r.1.is_finite();
        if !(self.frame_rate > 0.0) {
            return Err(SimError::Invalid("frame_rate must be positive"));
        }
        if !pos(self.width_range) || !pos(self.length_range) || !pos(self.height_range) {
            return Err(SimError::Invalid("object size ranges must be positive"));
        }
        if !(self.speed_range.0 >= 0.0 && self.speed_range.1 >= self.speed_range.0) {
            return Err(SimError::Invalid("speed range must be non-negative"));
        }
        if !pos(self.lateral_range) {
            return Err(SimError::Invalid("lateral range must be positive"));
        }
        if !(self.lidar.range > 0.0) || !(self.lidar.angular_resolution > 0.0) {
            return Err(SimError::Invalid("lidar range and resolution must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lidar.dropout_near) || !(0.0..=1.0).contains(&self.lidar.dropout_far) {
            return Err(SimError::Invalid("dropout must be a probability"));
        }
        if !(self.lidar.noise_sigma >= 0.0) {
            return Err(SimError::Invalid("noise sigma must be non-negative"));
        }
        if self.label_interval == 0 {
            return Err(SimError::Invalid("label interval must be positive"));
        }
        Ok(())
    }

    pub fn ego_pose(&self, t: f64) -> Pose {
        let v = self.ego_speed;
        match self.ego {
            EgoTrajectory::Straight => Pose::planar(v * t, 0.0, 0.0, 0.0),
            EgoTrajectory::Arc { yaw_rate } if yaw_rate.abs() > 1e-12 => {
                let th = yaw_rate * t;
                let r = v / yaw_rate;
                Pose::planar(r * math::sin(th), r * (1.0 - math::cos(th)), 0.0, th)
            }
            EgoTrajectory::Arc { .. } => Pose::planar(v * t, 0.0, 0.0, 0.0),
            EgoTrajectory::LaneChange { offset, period } => {
                let w = 2.0 * PI / period;
                let y = 0.5 * offset * (1.0 - math::cos(w * t));
                let dy = 0.5 * offset * w * math::sin(w * t);
                Pose::planar(v * t, y, 0.0, math::atan2(dy, v.max(1e-9)))
            }
        }
    }
}

/// Ground-truth object with constant-velocity world motion.
#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub track_id: u32,
    pub class: u32,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    /// World pose at t = 0 (planar).
    pub x0: f64,
    pub y0: f64,
    pub yaw: f64,
    pub speed: f64,
    /// Surface samples in the object frame (origin at box centre, z from ground).
    pub surface: Vec<[f64; 3]>,
}

impl SimObject {
    pub fn world_pose(&self, t: f64) -> Pose {
        let (c, s) = (math::cos(self.yaw), math::sin(self.yaw));
        Pose::planar(self.x0 + self.speed * t * c, self.y0 + self.speed * t * s, 0.0, self.yaw)
    }
}

const TAG_OBJECTS: u64 = 0x6f62_6a73;
const TAG_FRAME: u64 = 0x6672_616d;

/// Uniform sample of the side faces and roof of a box, in the object frame.
fn sample_surface<R: Rng>(rng: &mut R, w: f64, l: f64, h: f64, n: usize) -> Vec<[f64; 3]> {
    let faces = [l * h, l * h, w * h, w * h, w * l];
    let total: f64 = faces.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= faces[face] {
                pick -= faces[face];
                face += 1;
            }
            let (u, v) = (rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0));
            match face {
                0 => [u * l, 0.5 * w, v * h],
                1 => [u * l, -0.5 * w, v * h],
                2 => [0.5 * l, u * w, v * h],
                3 => [-0.5 * l, u * w, v * h],
                _ => [u * l, (v - 0.5) * w, h],
            }
        })
        .collect()
}

/// Outward normal (object frame) of the face a surface sample lies on.
fn face_normal(p: &[f64; 3], w: f64, l: f64, h: f64) -> [f64; 3] {
    let eps = 1e-9;
    if (p[2] - h).abs() < eps {
        [0.0, 0.0, 1.0]
    } else if (p[1] - 0.5 * w).abs() < eps {
        [0.0, 1.0, 0.0]
    } else if (p[1] + 0.5 * w).abs() < eps {
        [0.0, -1.0, 0.0]
    } else if (p[0] - 0.5 * l).abs() < eps {
        [1.0, 0.0, 0.0]
    } else {
        [-1.0, 0.0, 0.0]
    }
}

/// Places the objects of a sequence along the ego path.
pub fn spawn_objects(cfg: &WorldConfig, seed: u64) -> Vec<SimObject> {
    let mut rng = keyed_rng(&[seed, TAG_OBJECTS]);
    let duration_s = cfg.duration as f64 / cfg.frame_rate;
    let path_len = cfg.ego_speed * duration_s;
    let mut objects: Vec<SimObject> = Vec::new();
    let n_total = cfg.n_static + cfg.n_moving;
    let mut attempts = 0;
    while objects.len() < n_total && attempts < 200 * (n_total + 1) {
        attempts += 1;
        let idx = objects.len();
        let moving = idx >= cfg.n_static;
        let w = rng.random_range(cfg.width_range.0..=cfg.width_range.1);
        let l = rng.random_range(cfg.length_range.0..=cfg.length_range.1);
        let h = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
        let s = rng.random_range(0.0..1.0);
        let along = -0.5 * cfg.lidar.range + s * (path_len + cfg.lidar.range);
        let lat = rng.random_range(cfg.lateral_range.0..=cfg.lateral_range.1);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        // Path-relative placement mapped through the ego pose at the matching time.
        let t_along = (along / cfg.ego_speed.max(1e-9)).clamp(0.0, duration_s);
        let ego = cfg.ego_pose(t_along);
        let extra = along - cfg.ego_speed * t_along;
        let [x0, y0, _] = ego.matrix().apply([extra, side * lat, 0.0]);
        let yaw = if moving {
            ego.yaw() + if rng.random_bool(0.5) { 0.0 } else { PI } + rng.random_range(-0.2..0.2)
        } else {
            ego.yaw() + rng.random_range(-0.5..0.5)
        };
        let speed = if moving { rng.random_range(cfg.speed_range.0..=cfg.speed_range.1) } else { 0.0 };
        let surface = sample_surface(&mut rng, w, l, h, cfg.lidar.object_points);
        let candidate = SimObject { track_id: idx as u32 + 1, class: 0, w, l, h, x0, y0, yaw, speed, surface };
        // Static objects must not overlap each other at t = 0.
        let clear = objects.iter().all(|o| {
            let (dx, dy) = (o.x0 - x0, o.y0 - y0);
            math::sqrt(dx * dx + dy * dy) > 0.5 * (o.l + l) + 1.0
        });
        if clear {
            objects.push(candidate);
        }
    }
    objects
}

/// Generates `cfg.duration` sweeps. Deterministic in `(cfg, seed)`.
pub fn generate_sequence(cfg: &WorldConfig, seed: u64) -> Vec<Frame> {
    let objects = spawn_objects(cfg, seed);
    (0..cfg.duration).map(|i| render_frame(cfg, &objects, seed, i)).collect()
}

/// One sweep of the world at frame index `i`.
pub fn render_frame(cfg: &WorldConfig, objects: &[SimObject], seed: u64, i: usize) -> Frame {
    let lidar = &cfg.lidar;
    let t = i as f64 / cfg.frame_rate;
    let ego = cfg.ego_pose(t);
    let ego_inv = ego.invert();
    let mut rng = keyed_rng(&[seed, TAG_FRAME, i as u64]);
    let noise = Normal::new(0.0, lidar.noise_sigma.max(0.0)).expect("finite sigma");
    let budget = lidar.points_per_frame;
    let mut frame = Frame::new(t, ego);
    frame.labeled = i % cfg.label_interval == 0;
    frame.points.reserve_exact(budget);

    for obj in objects {
        let to_ego = ego_inv.compose(&obj.world_pose(t));
        let [cx, cy, _] = to_ego.translation_part();
        let range = math::sqrt(cx * cx + cy * cy);
        if range > lidar.range {
            continue;
        }
        let yaw = to_ego.yaw();
        frame.boxes.push(GtBox {
            bbox: BevBox::new(cx, cy, obj.w, obj.l, math::wrap_angle(yaw)),
            z: 0.5 * obj.h,
            h: obj.h,
            class: obj.class,
            track_id: obj.track_id,
        });
        let p_drop = lidar.dropout(range);
        // Sensor position in the object frame decides which faces are visible.
        let [sx, sy, sz] = to_ego.invert().translation_part();
        for s in &obj.surface {
            let nrm = face_normal(s, obj.w, obj.l, obj.h);
            let view = [sx - s[0], sy - s[1], sz + 1.8 - s[2]];
            if nrm[0] * view[0] + nrm[1] * view[1] + nrm[2] * view[2] <= 0.0 {
                continue;
            }
            if p_drop > 0.0 && rng.random_bool(p_drop) {
                continue;
            }
            if frame.points.len() >= budget {
                break;
            }
            let [x, y, z] = to_ego.matrix().apply(*s);
            let jitter = |v: f64, rng: &mut _| if lidar.noise_sigma > 0.0 { v + noise.sample(rng) } else { v };
            let (x, y, z) = (jitter(x, &mut rng), jitter(y, &mut rng), jitter(z, &mut rng));
            let intensity = 0.6 + 0.3 * ((s[0] + s[1]).abs() % 1.0);
            frame.points.push(LidarPoint::new(x, y, z, intensity));
        }
    }

    for _ in 0..lidar.clutter_points {
        if frame.points.len() >= budget {
            break;
        }
        let r = lidar.range * math::sqrt(rng.random_range(0.0..1.0));
        let az = rng.random_range(-PI..PI);
        let z = rng.random_range(0.2..2.0);
        let intensity = rng.random_range(0.0..1.0);
        frame.points.push(LidarPoint::new(r * math::cos(az), r * math::sin(az), z, intensity));
    }

    // Ground returns on a fixed beam pattern (rings x azimuth steps).
    let remaining = budget - frame.points.len();
    let az_steps = ((2.0 * PI / lidar.angular_resolution) as usize).max(1);
    for k in 0..remaining {
        let ring = k / az_steps;
        let step = k % az_steps;
        // Golden-ratio ring radii spread returns over the disc.
        let frac = ((ring as f64 + 1.0) * 0.618_033_988_749_895) % 1.0;
        let r = 2.0 + (lidar.range - 2.0) * frac;
        let az = -PI + (step as f64 + 0.5) * (2.0 * PI / az_steps as f64) + 0.37 * ring as f64;
        let z = if lidar.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        frame.points.push(LidarPoint::new(r * math::cos(az), r * math::sin(az), z, 0.15));
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(cfg: &mut WorldConfig) {
        cfg.lidar.noise_sigma = 0.0;
        cfg.lidar.clutter_points = 0;
        cfg.lidar.dropout_near = 0.0;
        cfg.lidar.dropout_far = 0.0;
    }

    #[test]
    fn zero_duration_is_empty() {
        let cfg = WorldConfig { duration: 0, ..WorldConfig::default() };
        assert!(generate_sequence(&cfg, 1).is_empty());
    }

    #[test]
    fn deterministic_and_budgeted() {
        let cfg = WorldConfig { duration: 5, ..WorldConfig::default() };
        let a = generate_sequence(&cfg, 42);
        assert_eq!(a, generate_sequence(&cfg, 42));
        assert_ne!(a, generate_sequence(&cfg, 43));
        assert!(a.iter().all(|f| f.points.len() == cfg.lidar.points_per_frame));
        assert!(a.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn static_cube_stationary_ego_repeats() {
        let mut cfg = WorldConfig { duration: 4, ego_speed: 0.0, n_moving: 0, n_static: 0, ..WorldConfig::default() };
        quiet(&mut cfg);
        let mut rng = keyed_rng(&[5]);
        let cube = SimObject {
            track_id: 1,
            class: 0,
            w: 1.0,
            l: 1.0,
            h: 1.0,
            x0: 2.0,
            y0: 0.0,
            yaw: 0.0,
            speed: 0.0,
            surface: sample_surface(&mut rng, 1.0, 1.0, 1.0, 50),
        };
        let frames: Vec<_> = (0..4).map(|i| render_frame(&cfg, core::slice::from_ref(&cube), 9, i)).collect();
        for f in &frames[1..] {
            assert_eq!(f.points, frames[0].points);
        }
        assert_eq!(frames[0].boxes.len(), 1);
    }

    #[test]
    fn label_interval() {
        let cfg = WorldConfig { duration: 7, label_interval: 3, ..WorldConfig::default() };
        let labeled: Vec<bool> = generate_sequence(&cfg, 1).iter().map(|f| f.labeled).collect();
        assert_eq!(labeled, [true, false, false, true, false, false, true]);
    }

    #[test]
    fn validate_rejects_bad_config() {
        assert!(WorldConfig::default().validate().is_ok());
        assert!(WorldConfig { frame_rate: 0.0, ..WorldConfig::default() }.validate().is_err());
        assert!(WorldConfig { width_range: (0.0, 1.0), ..WorldConfig::default() }.validate().is_err());
    }

    #[test]
    fn dropout_is_linear_in_range() {
        let l = WorldConfig::default().lidar;
        assert_eq!(l.dropout(0.0), 0.0);
        assert!((l.dropout(20.0) - 0.475).abs() < 1e-12);
        assert_eq!(l.dropout(100.0), 0.95);
    }

    #[test]
    fn ego_trajectories_are_planar_and_continuous() {
        for ego in [
            EgoTrajectory::Straight,
            EgoTrajectory::Arc { yaw_rate: 0.2 },
            EgoTrajectory::LaneChange { offset: 3.5, period: 4.0 },
        ] {
            let cfg = WorldConfig { ego, ..WorldConfig::default() };
            let a = cfg.ego_pose(1.0);
            let b = cfg.ego_pose(1.1);
            let [ax, ay, _] = a.translation_part();
            let [bx, by, _] = b.translation_part();
            let step = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            assert!(step < 0.1 * cfg.ego_speed * 1.2 && step > 0.1 * cfg.ego_speed * 0.8);
            assert!(a.rigidity_error() < 1e-12);
        }
    }
}
