//! Detection AP with centre-distance matching, and the concat-k baseline
//! that re-transforms and re-voxelizes the last k sweeps every frame.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::decode::decode_detections;
use crate::detection::Detection;
use crate::engine::{EngineConfig, EngineError, StepCounters};
use crate::frame::Frame;
use crate::geometry::relative_pose;
use crate::grid::ImageGrid;
use crate::image_fusion;
use crate::math;
use crate::model::{ToyModel, REG_CHANNELS};
use crate::point_fusion::{LidarPoint, DT_FLOOR};
use crate::voxelize::{self, VoxelScratch, C_IN};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub class: u32,
    /// `(threshold, ap, counts over all predictions)`.
    pub per_threshold: Vec<(f64, f64, Counts)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub classes: Vec<ClassResult>,
    /// Mean over classes and thresholds; 0 when there is no ground truth.
    pub map: f64,
}

impl EvalResult {
    pub fn ap(&self, class: u32, threshold: f64) -> Option<f64> {
        let c = self.classes.iter().find(|c| c.class == class)?;
        c.per_threshold.iter().find(|t| t.0 == threshold).map(|t| t.1)
    }
}

/// 101-point interpolated AP of a score-ordered TP/FP sequence.
pub fn interpolated_ap(is_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut prec = Vec::with_capacity(is_tp.len());
    let mut rec = Vec::with_capacity(is_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &t in is_tp {
        if t {
            tp += 1;
        } else {
            fp += 1;
        }
        prec.push(tp as f64 / (tp + fp) as f64);
        rec.push(tp as f64 / n_gt as f64);
    }
    // Monotone envelope from the right.
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        while j < rec.len() && rec[j] < r - 1e-12 {
            j += 1;
        }
        if j < rec.len() {
            sum += prec[j];
        }
    }
    sum / 101.0
}

/// Greedy score-ordered matching: each prediction takes the nearest
/// unmatched ground truth of its class within `threshold` meters.
/// Returns the TP flags in score order and the ground-truth count.
pub fn match_class(preds: &[Vec<Detection>], gts: &[Vec<Detection>], class: u32, threshold: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (f, ps) in preds.iter().enumerate() {
        for (i, p) in ps.iter().enumerate() {
            if p.class == class {
                order.push((p.score, f, i));
            }
        }
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let n_gt = gts.iter().flatten().filter(|g| g.class == class).count();
    let mut flags = Vec::with_capacity(order.len());
    for (_, f, i) in order {
        let p = &preds[f][i];
        let mut best: Option<(f64, usize)> = None;
        if let Some(frame_gts) = gts.get(f) {
            for (j, g) in frame_gts.iter().enumerate() {
                if g.class != class || used[f][j] {
                    continue;
                }
                let d = p.bbox.center_distance(&g.bbox);
                if d <= threshold && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        match best {
            Some((_, j)) => {
                used[f][j] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    (flags, n_gt)
}

/// AP per class (classes present in the ground truth) and threshold.
pub fn evaluate(preds: &[Vec<Detection>], gts: &[Vec<Detection>], thresholds: &[f64]) -> EvalResult {
    let mut classes: Vec<u32> = gts.iter().flatten().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::with_capacity(classes.len());
    let mut total = 0.0;
    for &class in &classes {
        let mut per = Vec::with_capacity(thresholds.len());
        for &t in thresholds {
            let (flags, n_gt) = match_class(preds, gts, class, t);
            let tp = flags.iter().filter(|f| **f).count();
            let counts = Counts { tp, fp: flags.len() - tp, fn_: n_gt - tp };
            let ap = interpolated_ap(&flags, n_gt);
            total += ap;
            per.push((t, ap, counts));
        }
        out.push(ClassResult { class, per_threshold: per });
    }
    let denom = classes.len() * thresholds.len();
    EvalResult { classes: out, map: if denom == 0 { 0.0 } else { total / denom as f64 } }
}

/// Keeps only boxes whose centre lies within the grid.
pub fn in_grid(spec: &crate::geometry::GridSpec, dets: &[Detection]) -> Vec<Detection> {
    dets.iter().filter(|d| spec.cell_of(d.bbox.x, d.bbox.y).is_some()).copied().collect()
}

/// Multi-frame baseline: keeps the last `k` raw sweeps and, every frame,
/// transforms all of them into the current ego frame, concatenates them
/// with a dt channel, voxelizes and runs the detector once.
#[derive(Debug, Clone)]
pub struct ConcatBaseline {
    pub k: usize,
    window: VecDeque<Frame>,
    points: Vec<LidarPoint>,
    x0: ImageGrid,
    zeros_in: ImageGrid,
    f1: ImageGrid,
    pre: ImageGrid,
    hidden: ImageGrid,
    zeros_mid: ImageGrid,
    f2: ImageGrid,
    logits: Vec<f64>,
    reg: Vec<f64>,
    heat: Vec<f64>,
    voxel: VoxelScratch,
    pub counters: StepCounters,
}

impl ConcatBaseline {
    pub fn new(k: usize, cfg: &EngineConfig, c_mid: usize) -> ConcatBaseline {
        let spec = cfg.spec;
        let inp = spec.with_channels(C_IN);
        let mid = spec.with_channels(c_mid);
        let n = spec.cells();
        ConcatBaseline {
            k: k.max(1),
            window: VecDeque::with_capacity(k.max(1)),
            points: Vec::new(),
            x0: ImageGrid::zeros(inp),
            zeros_in: ImageGrid::zeros(inp),
            f1: ImageGrid::zeros(inp),
            pre: ImageGrid::zeros(mid),
            hidden: ImageGrid::zeros(mid),
            zeros_mid: ImageGrid::zeros(mid),
            f2: ImageGrid::zeros(mid),
            logits: vec![0.0; n],
            reg: vec![0.0; REG_CHANNELS * n],
            heat: vec![0.0; n],
            voxel: VoxelScratch::default(),
            counters: StepCounters::default(),
        }
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Bytes held by the raw-sweep window.
    pub fn window_bytes(&self) -> usize {
        self.window.iter().map(|f| f.points.capacity() * core::mem::size_of::<LidarPoint>()).sum()
    }

    pub fn step(&mut self, model: &ToyModel, cfg: &EngineConfig, frame: &Frame) -> Result<Vec<Detection>, EngineError> {
        if let Some(last) = self.window.back() {
            if !(frame.timestamp > last.timestamp) {
                return Err(EngineError::NonMonotonic { last: last.timestamp, got: frame.timestamp });
            }
        }
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(frame.clone());

        self.points.clear();
        self.points.extend(frame.points.iter().map(|p| LidarPoint { dt: 0.0, ..*p }));
        for past in self.window.iter().rev().skip(1) {
            let m = *relative_pose(&frame.pose, &past.pose).matrix();
            let dt = (past.timestamp - frame.timestamp).max(DT_FLOOR);
            self.points.extend(past.points.iter().map(|p| {
                let [x, y, z] = m.apply([p.x, p.y, p.z]);
                LidarPoint { x, y, z, intensity: p.intensity, dt }
            }));
        }
        voxelize::voxelize_into(&self.points, &mut self.x0, &mut self.voxel);
        let n = cfg.spec.cells();
        match cfg.fusion.fm {
            Some(mode) => image_fusion::fuse_into(mode, &self.x0, &self.zeros_in, model.fm_fusion.as_ref(), &mut self.f1)?,
            None => self.f1.copy_from(&self.x0),
        }
        model.trunk(&self.f1, &mut self.pre, &mut self.hidden)?;
        match cfg.fusion.pm {
            Some(mode) => {
                image_fusion::fuse_into(mode, &self.hidden, &self.zeros_mid, model.pm_fusion.as_ref(), &mut self.f2)?
            }
            None => self.f2.copy_from(&self.hidden),
        }
        model.heads(&self.f2, &mut self.logits, &mut self.reg);
        for (p, l) in self.heat.iter_mut().zip(&self.logits) {
            *p = math::sigmoid(*l);
        }
        self.counters = StepCounters { points_voxelized: self.points.len(), bank_points: 0, grid_cell_ops: 2 * n };
        Ok(decode_detections(&cfg.spec, &self.heat, &self.reg, cfg.score_min, cfg.nms_radius))
    }
}
