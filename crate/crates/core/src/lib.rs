//! Streaming multi-frame BEV object detection built around a recursively
//! updated memory bank.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece:
//! rigid-motion algebra, point-style and image-style fusion, the sequence
//! sampler and curriculum, stream-consistent augmentation, a small BEV
//! detector with hand-written gradients, the streaming engine, a synthetic
//! LiDAR world and the evaluation metrics. File formats, timing and the
//! command line live in the `int-stream` companion crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod decode;
pub mod detection;
pub mod engine;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod grid;
pub mod image_fusion;
pub mod math;
pub mod model;
pub mod point_fusion;
pub mod rng;
pub mod seq_aug;
pub mod seq_sampler;
pub mod sim;
pub mod train;
pub mod voxelize;

pub use detection::{BevBox, Detection};
pub use engine::{Engine, EngineConfig, FusionConfig, MemoryBank, StepCounters};
pub use frame::Frame;
pub use geometry::{AugTransform, Flip, GridSpec, Mat4, Pose, Se2};
pub use grid::ImageGrid;
pub use image_fusion::{ConcatParams, FusionMode, FusionParams, GruFusionParams};
pub use model::ToyModel;
pub use point_fusion::{LidarPoint, PointMB};
