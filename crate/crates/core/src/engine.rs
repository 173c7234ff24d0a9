//! The streaming engine: a single-frame detector wrapped with a memory bank
//! at three fusion points.
//!
//! Per frame: (1) align the point bank and concatenate it with the sweep
//! (PC fusion), (2) voxelize, (3) warp and fuse the feature-map history
//! (FM fusion) and store the result back, (4) run the trunk, (5) warp and
//! fuse the head-input history (PM fusion) and store it back, (6) decode,
//! (7) push the sweep's foreground points into the point bank. Each past
//! frame contributes through the bank only; nothing is recomputed.

use alloc::vec;
use alloc::vec::Vec;

use crate::decode::decode_detections;
use crate::detection::Detection;
use crate::frame::Frame;
use crate::geometry::{self, GridSpec, Pose};
use crate::grid::ImageGrid;
use crate::image_fusion::{self, FusionError, FusionMode, FusionParams};
use crate::math;
use crate::model::{ModelError, ToyModel, REG_CHANNELS};
use crate::point_fusion::{self, LidarPoint, PointMB};
use crate::voxelize::{self, VoxelScratch, C_IN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("frame timestamp {got} does not follow {last}")]
    NonMonotonic { last: f64, got: f64 },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model fusion parameters do not match the fusion configuration")]
    FusionParamsMismatch,
}

/// Which fusion points are active and how the image-style ones fuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub pc: bool,
    pub fm: Option<FusionMode>,
    pub pm: Option<FusionMode>,
}

impl FusionConfig {
    pub const NONE: FusionConfig = FusionConfig { pc: false, fm: None, pm: None };
    pub const ALL_CONCAT: FusionConfig =
        FusionConfig { pc: true, fm: Some(FusionMode::Concat), pm: Some(FusionMode::Concat) };

    pub fn is_single_frame(&self) -> bool {
        !self.pc && self.fm.is_none() && self.pm.is_none()
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::ALL_CONCAT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Layout of the BEV grids (channel count is ignored).
    pub spec: GridSpec,
    pub fusion: FusionConfig,
    pub point_capacity: usize,
    /// Optional age limit of bank points in seconds.
    pub point_max_age: Option<f64>,
    /// Decoding threshold for reported detections.
    pub score_min: f64,
    pub nms_radius: f64,
    /// Detections at or above this score feed the point bank.
    pub fg_score_min: f64,
    pub fg_margin: f64,
}

impl EngineConfig {
    pub fn new(spec: GridSpec, fusion: FusionConfig) -> EngineConfig {
        EngineConfig {
            spec,
            fusion,
            point_capacity: point_fusion::DEFAULT_CAPACITY,
            point_max_age: None,
            score_min: 0.05,
            nms_radius: 2.0,
            fg_score_min: 0.3,
            fg_margin: point_fusion::DEFAULT_FG_MARGIN,
        }
    }

    /// Checks the model carries parameters for exactly the active
    /// parameterised fusion modes.
    pub fn check_model(&self, model: &ToyModel) -> Result<(), EngineError> {
        let ok = |mode: Option<FusionMode>, p: &Option<FusionParams>| match (mode, p) {
            (Some(FusionMode::Concat), Some(FusionParams::Concat(_))) => true,
            (Some(FusionMode::Concat), None) => true,
            (Some(FusionMode::Gru), Some(FusionParams::Gru(_))) => true,
            (Some(FusionMode::Add | FusionMode::Max), None) | (None, None) => true,
            _ => false,
        };
        if model.c_in == C_IN && ok(self.fusion.fm, &model.fm_fusion) && ok(self.fusion.pm, &model.pm_fusion) {
            Ok(())
        } else {
            Err(EngineError::FusionParamsMismatch)
        }
    }
}

/// Recursively updated history: foreground points plus the two image-style
/// grids, all expressed in the frame of the last processed sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub point: PointMB,
    pub fm: ImageGrid,
    pub pm: ImageGrid,
    /// Pose and timestamp of the last processed sweep.
    pub last: Option<(Pose, f64)>,
    pub frames_seen: u64,
}

impl MemoryBank {
    pub fn new(cfg: &EngineConfig, c_mid: usize) -> MemoryBank {
        let spec = cfg.spec;
        let mut point = PointMB::new(cfg.point_capacity);
        if let Some(age) = cfg.point_max_age {
            point = point.with_max_age(age);
        }
        MemoryBank {
            point,
            fm: ImageGrid::zeros(spec.with_channels(C_IN)),
            pm: ImageGrid::zeros(spec.with_channels(c_mid)),
            last: None,
            frames_seen: 0,
        }
    }

    /// Empties the point queue and zeroes both grids.
    pub fn clear(&mut self) {
        self.point.clear();
        self.fm.clear();
        self.pm.clear();
        self.last = None;
        self.frames_seen = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_none()
    }

    pub fn reserved_bytes(&self) -> usize {
        self.point.reserved_bytes() + self.fm.reserved_bytes() + self.pm.reserved_bytes()
    }
}

/// Work performed by one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCounters {
    /// Points handed to voxelization (current sweep plus bank).
    pub points_voxelized: usize,
    pub bank_points: usize,
    /// Grid cells touched by warps, fusions and the trunk.
    pub grid_cell_ops: usize,
}

/// Every intermediate of one frame's forward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub fused_points: Vec<LidarPoint>,
    pub x0: ImageGrid,
    pub hist_fm: ImageGrid,
    pub f1: ImageGrid,
    pub pre: ImageGrid,
    pub hidden: ImageGrid,
    pub hist_pm: ImageGrid,
    pub f2: ImageGrid,
    pub logits: Vec<f64>,
    pub reg: Vec<f64>,
    pub heat: Vec<f64>,
    pub counters: StepCounters,
    voxel: VoxelScratch,
}

impl Workspace {
    pub fn new(spec: &GridSpec, c_mid: usize) -> Workspace {
        let inp = spec.with_channels(C_IN);
        let mid = spec.with_channels(c_mid);
        let n = spec.cells();
        Workspace {
            fused_points: Vec::new(),
            x0: ImageGrid::zeros(inp),
            hist_fm: ImageGrid::zeros(inp),
            f1: ImageGrid::zeros(inp),
            pre: ImageGrid::zeros(mid),
            hidden: ImageGrid::zeros(mid),
            hist_pm: ImageGrid::zeros(mid),
            f2: ImageGrid::zeros(mid),
            logits: vec![0.0; n],
            reg: vec![0.0; REG_CHANNELS * n],
            heat: vec![0.0; n],
            counters: StepCounters::default(),
            voxel: VoxelScratch::default(),
        }
    }

    pub fn reserved_bytes(&self) -> usize {
        self.fused_points.capacity() * core::mem::size_of::<LidarPoint>()
            + [&self.x0, &self.hist_fm, &self.f1, &self.pre, &self.hidden, &self.hist_pm, &self.f2]
                .iter()
                .map(|g| g.reserved_bytes())
                .sum::<usize>()
            + (self.logits.capacity() + self.reg.capacity() + self.heat.capacity()) * 8
    }
}

/// Relative transform from the bank's frame to `frame`, if the bank holds one.
fn bank_to_frame(bank: &MemoryBank, frame: &Frame) -> Option<Pose> {
    bank.last.as_ref().map(|(last_pose, _)| match &frame.aug {
        Some(aug) => geometry::augmented_relative_pose(&frame.pose, last_pose, aug),
        None => geometry::relative_pose(&frame.pose, last_pose),
    })
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    PointFusion,
    Voxelize,
    FeatureFusion,
    Trunk,
    PredictionFusion,
    Head,
    Decode,
    Commit,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::PointFusion,
        Stage::Voxelize,
        Stage::FeatureFusion,
        Stage::Trunk,
        Stage::PredictionFusion,
        Stage::Head,
        Stage::Decode,
        Stage::Commit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PointFusion => "point_fusion",
            Stage::Voxelize => "voxelize",
            Stage::FeatureFusion => "fm_fusion",
            Stage::Trunk => "trunk",
            Stage::PredictionFusion => "pm_fusion",
            Stage::Head => "head",
            Stage::Decode => "decode",
            Stage::Commit => "commit",
        }
    }
}

/// Notified as each stage finishes; lets a std caller time stages.
pub trait StageHook {
    fn done(&mut self, stage: Stage);
}

impl StageHook for () {
    fn done(&mut self, _: Stage) {}
}

/// Forward pass of one frame against the bank. Aligns the point bank (the
/// only bank mutation); grids are written back by [`commit`].
pub fn forward_frame(
    model: &ToyModel,
    cfg: &EngineConfig,
    bank: &mut MemoryBank,
    frame: &Frame,
    ws: &mut Workspace,
) -> Result<(), EngineError> {
    forward_frame_hooked(model, cfg, bank, frame, ws, &mut ())
}

pub fn forward_frame_hooked<H: StageHook>(
    model: &ToyModel,
    cfg: &EngineConfig,
    bank: &mut MemoryBank,
    frame: &Frame,
    ws: &mut Workspace,
    hook: &mut H,
) -> Result<(), EngineError> {
    if let Some((_, last_t)) = bank.last {
        if !(frame.timestamp > last_t) {
            return Err(EngineError::NonMonotonic { last: last_t, got: frame.timestamp });
        }
    }
    let fusion = cfg.fusion;
    let rel = bank_to_frame(bank, frame);
    let n = cfg.spec.cells();
    let mut ops = 0;

    // (1) PC fusion
    if fusion.pc {
        match &frame.aug {
            Some(aug) => bank.point.align_to_augmented(&frame.pose, frame.timestamp, aug),
            None => bank.point.align_to(&frame.pose, frame.timestamp),
        }
        point_fusion::fuse_points_into(&frame.points, &bank.point, &mut ws.fused_points);
    } else {
        ws.fused_points.clear();
        ws.fused_points.extend(frame.points.iter().map(|p| LidarPoint { dt: 0.0, ..*p }));
    }
    hook.done(Stage::PointFusion);

    // (2) voxelize
    voxelize::voxelize_into(&ws.fused_points, &mut ws.x0, &mut ws.voxel);
    hook.done(Stage::Voxelize);

    // (3) FM fusion
    match fusion.fm {
        Some(mode) => {
            history_into(&bank.fm, rel.as_ref(), &mut ws.hist_fm)?;
            image_fusion::fuse_into(mode, &ws.x0, &ws.hist_fm, model.fm_fusion.as_ref(), &mut ws.f1)?;
            ops += 2 * n;
        }
        None => ws.f1.copy_from(&ws.x0),
    }
    hook.done(Stage::FeatureFusion);

    // (4) trunk
    model.trunk(&ws.f1, &mut ws.pre, &mut ws.hidden)?;
    ops += n;
    hook.done(Stage::Trunk);

    // (5) PM fusion
    match fusion.pm {
        Some(mode) => {
            history_into(&bank.pm, rel.as_ref(), &mut ws.hist_pm)?;
            image_fusion::fuse_into(mode, &ws.hidden, &ws.hist_pm, model.pm_fusion.as_ref(), &mut ws.f2)?;
            ops += 2 * n;
        }
        None => ws.f2.copy_from(&ws.hidden),
    }
    hook.done(Stage::PredictionFusion);

    // heads
    model.heads(&ws.f2, &mut ws.logits, &mut ws.reg);
    for (p, l) in ws.heat.iter_mut().zip(&ws.logits) {
        *p = math::sigmoid(*l);
    }
    ops += n;
    hook.done(Stage::Head);

    ws.counters = StepCounters {
        points_voxelized: ws.fused_points.len(),
        bank_points: bank.point.len(),
        grid_cell_ops: ops,
    };
    Ok(())
}

/// Warped history, or zeros when the bank is empty.
fn history_into(hist: &ImageGrid, rel: Option<&Pose>, out: &mut ImageGrid) -> Result<(), EngineError> {
    match rel {
        Some(rel) => image_fusion::warp_into(hist, rel.matrix(), out)?,
        None => out.clear(),
    }
    Ok(())
}

/// (6) decode using the engine thresholds.
pub fn decode(cfg: &EngineConfig, ws: &Workspace) -> Vec<Detection> {
    decode_detections(&cfg.spec, &ws.heat, &ws.reg, cfg.score_min, cfg.nms_radius)
}

/// Writes the fused grids back into the bank and pushes the sweep's
/// foreground points (selected by `fg_boxes`). Values are copied, so the
/// bank never aliases anything a gradient is computed through.
pub fn commit(cfg: &EngineConfig, bank: &mut MemoryBank, frame: &Frame, ws: &Workspace, fg_boxes: &[Detection]) {
    if cfg.fusion.fm.is_some() {
        bank.fm.copy_from(&ws.f1);
    }
    if cfg.fusion.pm.is_some() {
        bank.pm.copy_from(&ws.f2);
    }
    if cfg.fusion.pc {
        let fg = point_fusion::select_foreground(&frame.points, fg_boxes, cfg.fg_score_min, cfg.fg_margin);
        bank.point.push_foreground(&fg, frame.timestamp);
    }
    bank.last = Some((frame.pose, frame.timestamp));
    bank.frames_seen += 1;
}

/// Streaming inference engine for one lane.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: ToyModel,
    pub cfg: EngineConfig,
    pub bank: MemoryBank,
    pub ws: Workspace,
}

impl Engine {
    pub fn new(model: ToyModel, cfg: EngineConfig) -> Result<Engine, EngineError> {
        cfg.check_model(&model)?;
        let bank = MemoryBank::new(&cfg, model.c_mid);
        let ws = Workspace::new(&cfg.spec, model.c_mid);
        Ok(Engine { model, cfg, bank, ws })
    }

    /// Processes the next sweep of the stream. `reset` clears the bank first.
    pub fn step(&mut self, frame: &Frame, reset: bool) -> Result<Vec<Detection>, EngineError> {
        self.step_hooked(frame, reset, &mut ())
    }

    /// [`step`](Self::step) reporting each finished stage to `hook`.
    pub fn step_hooked<H: StageHook>(
        &mut self,
        frame: &Frame,
        reset: bool,
        hook: &mut H,
    ) -> Result<Vec<Detection>, EngineError> {
        if reset {
            self.bank.clear();
        }
        forward_frame_hooked(&self.model, &self.cfg, &mut self.bank, frame, &mut self.ws, hook)?;
        let dets = decode(&self.cfg, &self.ws);
        hook.done(Stage::Decode);
        commit(&self.cfg, &mut self.bank, frame, &self.ws, &dets);
        hook.done(Stage::Commit);
        Ok(dets)
    }

    pub fn counters(&self) -> StepCounters {
        self.ws.counters
    }

    /// Bytes held by the bank and the per-frame workspace.
    pub fn resident_bytes(&self) -> usize {
        self.bank.reserved_bytes() + self.ws.reserved_bytes()
    }
}

/// Reference single-frame detector: the same network run once on a sweep
/// with nothing remembered. Image fusion points see an all-zero history.
pub fn single_frame_detect(
    model: &ToyModel,
    cfg: &EngineConfig,
    frame: &Frame,
) -> Result<Vec<Detection>, EngineError> {
    let spec = cfg.spec;
    let pts: Vec<LidarPoint> = frame.points.iter().map(|p| LidarPoint { dt: 0.0, ..*p }).collect();
    let x0 = voxelize::voxelize_bev(&pts, &spec);
    let f1 = match cfg.fusion.fm {
        Some(mode) => {
            image_fusion::fuse(mode, &x0, &ImageGrid::zeros(x0.spec), model.fm_fusion.as_ref())?
        }
        None => x0,
    };
    let mid = spec.with_channels(model.c_mid);
    let (mut pre, mut hidden) = (ImageGrid::zeros(mid), ImageGrid::zeros(mid));
    model.trunk(&f1, &mut pre, &mut hidden)?;
    let f2 = match cfg.fusion.pm {
        Some(mode) => image_fusion::fuse(mode, &hidden, &ImageGrid::zeros(mid), model.pm_fusion.as_ref())?,
        None => hidden,
    };
    let n = spec.cells();
    let mut logits = vec![0.0; n];
    let mut reg = vec![0.0; REG_CHANNELS * n];
    model.heads(&f2, &mut logits, &mut reg);
    let heat: Vec<f64> = logits.iter().map(|l| math::sigmoid(*l)).collect();
    Ok(decode_detections(&spec, &heat, &reg, cfg.score_min, cfg.nms_radius))
}
