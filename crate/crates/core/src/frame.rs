//! A single LiDAR sweep with its ego pose and labels.

use alloc::vec::Vec;

use crate::detection::{BevBox, Detection};
use crate::geometry::{AugTransform, Pose};
use crate::point_fusion::LidarPoint;

/// Ground-truth object in ego coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BevBox,
    /// Height of the box centre above the ground plane.
    pub z: f64,
    /// Vertical extent.
    pub h: f64,
    pub class: u32,
    pub track_id: u32,
}

impl GtBox {
    pub fn as_detection(&self) -> Detection {
        Detection::new(self.bbox, 1.0, self.class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Seconds.
    pub timestamp: f64,
    /// Ego pose in the world frame.
    pub pose: Pose,
    pub points: Vec<LidarPoint>,
    pub boxes: Vec<GtBox>,
    pub labeled: bool,
    /// Stream augmentation applied to `points` and `boxes`, if any. Poses
    /// stay raw; consumers use the augmented relative pose when this is set.
    pub aug: Option<AugTransform>,
}

impl Frame {
    pub fn new(timestamp: f64, pose: Pose) -> Frame {
        Frame {
            timestamp,
            pose,
            points: Vec::new(),
            boxes: Vec::new(),
            labeled: true,
            aug: None,
        }
    }

    pub fn gt_detections(&self) -> Vec<Detection> {
        self.boxes.iter().map(GtBox::as_detection).collect()
    }
}
