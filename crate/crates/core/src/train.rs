//! Training: heat/regression targets, the loss, one truncated-gradient
//! frame step and SGD with momentum.
//!
//! The bank is read as a constant. Gradients reach the current sweep's
//! operations and the fusion parameters only; nothing is propagated into
//! the warped history, and the bank is written from plain copies.

use alloc::vec;
use alloc::vec::Vec;

use crate::detection::Detection;
use crate::engine::{self, EngineConfig, EngineError, MemoryBank, Workspace};
use crate::frame::Frame;
use crate::geometry::GridSpec;
use crate::image_fusion::{self, FusionMode, FusionParams};
use crate::math;
use crate::model::{ToyModel, REG_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Extra weight on cells with target `y`: `w = 1 + pos_weight * y`.
    pub pos_weight: f64,
    pub reg_weight: f64,
    /// Gaussian splat width, in cells.
    pub sigma_cells: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { pos_weight: 20.0, reg_weight: 1.0, sigma_cells: 1.0 }
    }
}

/// Dense supervision for one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub heat: Vec<f64>,
    /// `(cell index, [ln w, ln l, sin yaw, cos yaw])` at each box centre cell.
    pub reg: Vec<(usize, [f64; REG_CHANNELS])>,
}

/// Splats every box centre that falls inside the grid; overlapping splats
/// take the maximum. The centre cell itself is exactly 1.
pub fn build_targets(spec: &GridSpec, boxes: &[Detection], sigma_cells: f64) -> Targets {
    let (h, w) = (spec.height, spec.width);
    let mut heat = vec![0.0f64; h * w];
    let mut reg = Vec::new();
    let radius = math::ceil(3.0 * sigma_cells) as i64;
    let two_s2 = 2.0 * sigma_cells * sigma_cells;
    for b in boxes {
        let Some((r, c)) = spec.cell_of(b.bbox.x, b.bbox.y) else {
            continue;
        };
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                let v = math::exp(-((dr * dr + dc * dc) as f64) / two_s2);
                let i = rr as usize * w + cc as usize;
                heat[i] = heat[i].max(v);
            }
        }
        let bb = &b.bbox;
        reg.push((
            r * w + c,
            [math::ln(bb.w), math::ln(bb.l), math::sin(bb.yaw), math::cos(bb.yaw)],
        ));
    }
    Targets { heat, reg }
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Weighted BCE averaged over cells plus smooth-L1 on the regression at
/// the box centre cells (averaged over boxes). Writes gradients with
/// respect to the logits and the regression maps.
pub fn loss_and_grads(
    cfg: &LossConfig,
    logits: &[f64],
    reg: &[f64],
    targets: &Targets,
    d_logits: &mut [f64],
    d_reg: &mut [f64],
) -> f64 {
    let n = logits.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let (l, y) = (logits[i], targets.heat[i]);
        let w = 1.0 + cfg.pos_weight * y;
        // BCE(sigmoid(l), y) = softplus(l) - y * l
        loss += w * (math::softplus(l) - y * l) * inv_n;
        d_logits[i] = w * (math::sigmoid(l) - y) * inv_n;
    }
    d_reg.iter_mut().for_each(|g| *g = 0.0);
    if !targets.reg.is_empty() {
        let scale = cfg.reg_weight / targets.reg.len() as f64;
        for (cell, t) in &targets.reg {
            for j in 0..REG_CHANNELS {
                let (v, g) = smooth_l1(reg[j * n + cell] - t[j]);
                loss += scale * v;
                d_reg[j * n + cell] += scale * g;
            }
        }
    }
    loss
}

/// Loss of the forward pass currently held in `ws`.
pub fn workspace_loss(cfg: &LossConfig, spec: &GridSpec, frame: &Frame, ws: &Workspace) -> f64 {
    let targets = build_targets(spec, &frame.gt_detections(), cfg.sigma_cells);
    let mut dl = vec![0.0; ws.logits.len()];
    let mut dr = vec![0.0; ws.reg.len()];
    loss_and_grads(cfg, &ws.logits, &ws.reg, &targets, &mut dl, &mut dr)
}

/// Backward pass of the forward held in `ws`, given the output gradients.
/// Accumulates into `grads`. The history grids enter as constants.
pub fn backward(
    model: &ToyModel,
    cfg: &EngineConfig,
    ws: &Workspace,
    d_logits: &[f64],
    d_reg: &[f64],
    grads: &mut ToyModel,
) -> Result<(), EngineError> {
    let mut d_f2 = vec![0.0; ws.f2.data.len()];
    model.heads_backward(&ws.f2, d_logits, d_reg, grads, &mut d_f2);

    let mut d_hidden = match cfg.fusion.pm {
        Some(mode) => image_fusion::fuse_backward(
            mode,
            &ws.hidden,
            &ws.hist_pm,
            model.pm_fusion.as_ref(),
            &d_f2,
            grads.pm_fusion.as_mut(),
        )?,
        None => d_f2,
    };
    for (d, p) in d_hidden.iter_mut().zip(&ws.pre.data) {
        if *p <= 0.0 {
            *d = 0.0;
        }
    }

    let fm_has_params = matches!(
        (cfg.fusion.fm, &model.fm_fusion),
        (Some(FusionMode::Concat), Some(FusionParams::Concat(_))) | (Some(FusionMode::Gru), Some(FusionParams::Gru(_)))
    );
    if fm_has_params {
        let mode = cfg.fusion.fm.expect("checked above");
        let mut d_f1 = vec![0.0; ws.f1.data.len()];
        model.conv_backward(&ws.f1, &d_hidden, grads, Some(&mut d_f1));
        // The returned gradient w.r.t. the voxelized input has nowhere to go.
        image_fusion::fuse_backward(
            mode,
            &ws.x0,
            &ws.hist_fm,
            model.fm_fusion.as_ref(),
            &d_f1,
            grads.fm_fusion.as_mut(),
        )?;
    } else {
        model.conv_backward(&ws.f1, &d_hidden, grads, None);
    }
    Ok(())
}

/// Per-lane state carried across a segment.
#[derive(Debug, Clone)]
pub struct LaneState {
    pub bank: MemoryBank,
    pub ws: Workspace,
    d_logits: Vec<f64>,
    d_reg: Vec<f64>,
}

impl LaneState {
    pub fn new(cfg: &EngineConfig, c_mid: usize) -> LaneState {
        let n = cfg.spec.cells();
        LaneState {
            bank: MemoryBank::new(cfg, c_mid),
            ws: Workspace::new(&cfg.spec, c_mid),
            d_logits: vec![0.0; n],
            d_reg: vec![0.0; REG_CHANNELS * n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameStats {
    pub loss: f64,
    pub labeled: bool,
}

/// One training frame of one lane: forward against the bank, loss and
/// backward if the frame is labeled, then a detached bank update. With
/// `teacher_forcing` the point bank is fed from ground-truth boxes instead
/// of the current detections.
pub fn train_frame(
    model: &ToyModel,
    cfg: &EngineConfig,
    loss_cfg: &LossConfig,
    lane: &mut LaneState,
    frame: &Frame,
    reset: bool,
    teacher_forcing: bool,
    grads: &mut ToyModel,
) -> Result<FrameStats, EngineError> {
    if reset {
        lane.bank.clear();
    }
    engine::forward_frame(model, cfg, &mut lane.bank, frame, &mut lane.ws)?;
    let mut stats = FrameStats { loss: 0.0, labeled: frame.labeled };
    if frame.labeled {
        let targets = build_targets(&cfg.spec, &frame.gt_detections(), loss_cfg.sigma_cells);
        stats.loss =
            loss_and_grads(loss_cfg, &lane.ws.logits, &lane.ws.reg, &targets, &mut lane.d_logits, &mut lane.d_reg);
        backward(model, cfg, &lane.ws, &lane.d_logits, &lane.d_reg, grads)?;
    }
    if cfg.fusion.pc {
        let fg = if teacher_forcing { frame.gt_detections() } else { engine::decode(cfg, &lane.ws) };
        engine::commit(cfg, &mut lane.bank, frame, &lane.ws, &fg);
    } else {
        engine::commit(cfg, &mut lane.bank, frame, &lane.ws, &[]);
    }
    Ok(stats)
}

/// SGD with momentum, step learning-rate decay and optional global-norm
/// gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    /// Multiply the learning rate by `decay` every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub clip_norm: Option<f64>,
    velocity: ToyModel,
}

impl Sgd {
    pub fn new(model: &ToyModel, lr: f64, momentum: f64) -> Sgd {
        Sgd { lr, momentum, decay: 0.1, decay_every: usize::MAX, clip_norm: None, velocity: model.zeros_like() }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        let mut lr = self.lr;
        for _ in 0..steps {
            lr *= self.decay;
        }
        lr
    }

    /// `v = mu v + g; p -= lr v`.
    pub fn step(&mut self, model: &mut ToyModel, grads: &ToyModel, epoch: usize) {
        let mut g_scale = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = math::sqrt(grads.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum());
            if norm > max {
                g_scale = max / norm;
            }
        }
        self.velocity.scale(self.momentum);
        self.velocity.axpy(g_scale, grads);
        model.axpy(-self.lr_at(epoch), &self.velocity);
    }
}
