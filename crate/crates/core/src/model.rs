//! A deliberately small single-frame BEV detector with analytic gradients.
//!
//! trunk: `hidden = ReLU(conv3x3(x))`; heads: 1x1 heat logit and 1x1
//! regression of `(ln w, ln l, sin yaw, cos yaw)`. The fusion parameters of
//! the two image-style fusion points live alongside the detector weights.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::ImageGrid;
use crate::image_fusion::{FusionMode, FusionParams};
use crate::math;
use crate::rng::keyed_rng;
use crate::voxelize::C_IN;

pub const REG_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("expected {expected} input channels, got {got}")]
    Channels { expected: usize, got: usize },
    #[error("parameter blob has {got} values, model needs {expected}")]
    BlobSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub c_in: usize,
    pub c_mid: usize,
    /// `c_mid x c_in x 3 x 3`.
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub heat_w: Vec<f64>,
    pub heat_b: Vec<f64>,
    /// `4 x c_mid`.
    pub reg_w: Vec<f64>,
    pub reg_b: Vec<f64>,
    /// Parameters of the feature-map fusion point (input grid, `c_in` channels).
    pub fm_fusion: Option<FusionParams>,
    /// Parameters of the prediction-map fusion point (head input, `c_mid` channels).
    pub pm_fusion: Option<FusionParams>,
}

/// Prior probability the heat bias starts at.
const HEAT_PRIOR: f64 = 0.05;

impl ToyModel {
    /// All-zero detector with no fusion parameters.
    pub fn zeros(c_mid: usize) -> ToyModel {
        ToyModel {
            c_in: C_IN,
            c_mid,
            conv_w: vec![0.0; c_mid * C_IN * 9],
            conv_b: vec![0.0; c_mid],
            heat_w: vec![0.0; c_mid],
            heat_b: vec![0.0; 1],
            reg_w: vec![0.0; REG_CHANNELS * c_mid],
            reg_b: vec![0.0; REG_CHANNELS],
            fm_fusion: None,
            pm_fusion: None,
        }
    }

    /// He-initialised conv, small heads, heat bias at a low prior, fusion
    /// parameters at their defaults for the given modes.
    pub fn init(c_mid: usize, fm_mode: Option<FusionMode>, pm_mode: Option<FusionMode>, seed: u64) -> ToyModel {
        let mut m = ToyModel::zeros(c_mid);
        let mut rng = keyed_rng(&[seed, 0x6d6f_6465_6c]);
        let conv_std = math::sqrt(2.0 / (C_IN * 9) as f64);
        let normal = Normal::new(0.0, conv_std).expect("finite std");
        m.conv_w.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        m.conv_b.iter_mut().for_each(|b| *b = rng.random_range(0.0..0.05));
        let head_std = math::sqrt(1.0 / c_mid as f64);
        let normal = Normal::new(0.0, head_std).expect("finite std");
        m.heat_w.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        m.reg_w.iter_mut().for_each(|w| *w = 0.1 * normal.sample(&mut rng));
        m.heat_b[0] = math::ln(HEAT_PRIOR / (1.0 - HEAT_PRIOR));
        m.set_fusion(fm_mode, pm_mode);
        m
    }

    /// Replaces fusion parameters with the defaults for the given modes.
    pub fn set_fusion(&mut self, fm_mode: Option<FusionMode>, pm_mode: Option<FusionMode>) {
        self.fm_fusion = fm_mode.and_then(|m| FusionParams::for_mode(m, self.c_in));
        self.pm_fusion = pm_mode.and_then(|m| FusionParams::for_mode(m, self.c_mid));
    }

    pub fn zeros_like(&self) -> ToyModel {
        ToyModel {
            c_in: self.c_in,
            c_mid: self.c_mid,
            conv_w: vec![0.0; self.conv_w.len()],
            conv_b: vec![0.0; self.conv_b.len()],
            heat_w: vec![0.0; self.heat_w.len()],
            heat_b: vec![0.0; 1],
            reg_w: vec![0.0; self.reg_w.len()],
            reg_b: vec![0.0; self.reg_b.len()],
            fm_fusion: self.fm_fusion.as_ref().map(FusionParams::zeros_like),
            pm_fusion: self.pm_fusion.as_ref().map(FusionParams::zeros_like),
        }
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> =
            vec![&self.conv_w, &self.conv_b, &self.heat_w, &self.heat_b, &self.reg_w, &self.reg_b];
        if let Some(p) = &self.fm_fusion {
            out.extend(p.tensors());
        }
        if let Some(p) = &self.pm_fusion {
            out.extend(p.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.heat_w,
            &mut self.heat_b,
            &mut self.reg_w,
            &mut self.reg_b,
        ];
        if let Some(p) = &mut self.fm_fusion {
            out.extend(p.tensors_mut());
        }
        if let Some(p) = &mut self.pm_fusion {
            out.extend(p.tensors_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(ModelError::BlobSize { expected, got: flat.len() });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ToyModel) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Keeps the recursive image-style fusion states contractive.
    pub fn bound_recurrence(&mut self, max: f64) {
        for p in [&mut self.fm_fusion, &mut self.pm_fusion].into_iter().flatten() {
            p.bound_recurrence(max);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ImageGrid) -> Result<(), ModelError> {
        if x.channels() != self.c_in {
            return Err(ModelError::Channels { expected: self.c_in, got: x.channels() });
        }
        Ok(())
    }

    /// Pre-activation of the trunk convolution.
    pub fn conv_forward(&self, x: &ImageGrid, pre: &mut ImageGrid) -> Result<(), ModelError> {
        self.check_input(x)?;
        conv3x3_forward(&self.conv_w, &self.conv_b, self.c_in, self.c_mid, x, pre);
        pre.copy_aux_from(x);
        Ok(())
    }

    /// `hidden = ReLU(conv(x))`.
    pub fn trunk(&self, x: &ImageGrid, pre: &mut ImageGrid, hidden: &mut ImageGrid) -> Result<(), ModelError> {
        self.conv_forward(x, pre)?;
        for (h, p) in hidden.data.iter_mut().zip(&pre.data) {
            *h = p.max(0.0);
        }
        hidden.copy_aux_from(x);
        Ok(())
    }

    /// Heat logits (`n`) and regression maps (`4 x n`) from head input.
    pub fn heads(&self, hidden: &ImageGrid, logits: &mut [f64], reg: &mut [f64]) {
        let n = hidden.cells();
        logits.iter_mut().for_each(|v| *v = self.heat_b[0]);
        for j in 0..REG_CHANNELS {
            reg[j * n..(j + 1) * n].iter_mut().for_each(|v| *v = self.reg_b[j]);
        }
        for k in 0..self.c_mid {
            let h = hidden.channel(k);
            let w = self.heat_w[k];
            for (l, v) in logits.iter_mut().zip(h) {
                *l += w * v;
            }
            for j in 0..REG_CHANNELS {
                let w = self.reg_w[j * self.c_mid + k];
                for (r, v) in reg[j * n..(j + 1) * n].iter_mut().zip(h) {
                    *r += w * v;
                }
            }
        }
    }

    /// Backward of [`heads`](Self::heads); accumulates parameter gradients
    /// and writes the gradient of the head input into `d_hidden`.
    pub fn heads_backward(
        &self,
        hidden: &ImageGrid,
        d_logits: &[f64],
        d_reg: &[f64],
        grads: &mut ToyModel,
        d_hidden: &mut [f64],
    ) {
        let n = hidden.cells();
        grads.heat_b[0] += d_logits.iter().sum::<f64>();
        for j in 0..REG_CHANNELS {
            grads.reg_b[j] += d_reg[j * n..(j + 1) * n].iter().sum::<f64>();
        }
        for k in 0..self.c_mid {
            let h = hidden.channel(k);
            grads.heat_w[k] += d_logits.iter().zip(h).map(|(g, v)| g * v).sum::<f64>();
            let dh = &mut d_hidden[k * n..(k + 1) * n];
            let w = self.heat_w[k];
            for (d, g) in dh.iter_mut().zip(d_logits) {
                *d = w * g;
            }
            for j in 0..REG_CHANNELS {
                let gr = &d_reg[j * n..(j + 1) * n];
                grads.reg_w[j * self.c_mid + k] += gr.iter().zip(h).map(|(g, v)| g * v).sum::<f64>();
                let w = self.reg_w[j * self.c_mid + k];
                for (d, g) in dh.iter_mut().zip(gr) {
                    *d += w * g;
                }
            }
        }
    }

    /// Backward of the trunk conv given the pre-activation gradient.
    /// Accumulates weight gradients; writes the input gradient if requested.
    pub fn conv_backward(
        &self,
        x: &ImageGrid,
        d_pre: &[f64],
        grads: &mut ToyModel,
        d_x: Option<&mut [f64]>,
    ) {
        conv3x3_backward(&self.conv_w, self.c_in, self.c_mid, x, d_pre, &mut grads.conv_w, &mut grads.conv_b, d_x);
    }
}

/// Plain single-frame forward: `heat = sigmoid(heads(ReLU(conv(x))))`.
pub fn forward(model: &ToyModel, x: &ImageGrid) -> Result<(ImageGrid, ImageGrid), ModelError> {
    let mid = x.spec.with_channels(model.c_mid);
    let mut pre = ImageGrid::zeros(mid);
    let mut hidden = ImageGrid::zeros(mid);
    model.trunk(x, &mut pre, &mut hidden)?;
    let mut heat = ImageGrid::zeros(x.spec.with_channels(1));
    let mut reg = ImageGrid::zeros(x.spec.with_channels(REG_CHANNELS));
    model.heads(&hidden, &mut heat.data, &mut reg.data);
    heat.data.iter_mut().for_each(|v| *v = math::sigmoid(*v));
    heat.copy_aux_from(x);
    reg.copy_aux_from(x);
    Ok((heat, reg))
}

/// Visits `(out_row_range, in_row_offset, col shift)` blocks of a 3x3 "same"
/// convolution so the inner loops run over contiguous row slices.
#[inline]
fn tap_ranges(h: usize, w: usize, dr: usize, dc: usize) -> (usize, usize, usize, usize) {
    // output row r reads input row r + dr - 1; valid when 0 <= r + dr - 1 < h
    let r0 = if dr == 0 { 1 } else { 0 };
    let r1 = if dr == 2 { h - 1 } else { h };
    let c0 = if dc == 0 { 1 } else { 0 };
    let c1 = if dc == 2 { w - 1 } else { w };
    (r0, r1.max(r0), c0, c1.max(c0))
}

pub(crate) fn conv3x3_forward(
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    x: &ImageGrid,
    out: &mut ImageGrid,
) {
    let (h, wd) = (x.spec.height, x.spec.width);
    let n = h * wd;
    for o in 0..c_out {
        let dst = &mut out.data[o * n..(o + 1) * n];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..c_in {
            let src = x.channel(i);
            for dr in 0..3 {
                for dc in 0..3 {
                    let wt = w[((o * c_in + i) * 3 + dr) * 3 + dc];
                    if wt == 0.0 {
                        continue;
                    }
                    let (r0, r1, c0, c1) = tap_ranges(h, wd, dr, dc);
                    for r in r0..r1 {
                        let ir = r + dr - 1;
                        let drow = &mut dst[r * wd + c0..r * wd + c1];
                        let srow = &src[ir * wd + c0 + dc - 1..ir * wd + c1 + dc - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    w: &[f64],
    c_in: usize,
    c_out: usize,
    x: &ImageGrid,
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    mut d_x: Option<&mut [f64]>,
) {
    let (h, wd) = (x.spec.height, x.spec.width);
    let n = h * wd;
    if let Some(dx) = d_x.as_deref_mut() {
        dx.iter_mut().for_each(|v| *v = 0.0);
    }
    for o in 0..c_out {
        let g = &d_out[o * n..(o + 1) * n];
        d_b[o] += g.iter().sum::<f64>();
        for i in 0..c_in {
            let src = x.channel(i);
            for dr in 0..3 {
                for dc in 0..3 {
                    let wi = ((o * c_in + i) * 3 + dr) * 3 + dc;
                    let (r0, r1, c0, c1) = tap_ranges(h, wd, dr, dc);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let ir = r + dr - 1;
                        let grow = &g[r * wd + c0..r * wd + c1];
                        let srow = &src[ir * wd + c0 + dc - 1..ir * wd + c1 + dc - 1];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_w[wi] += acc;
                    if let Some(dx) = d_x.as_deref_mut() {
                        let wt = w[wi];
                        if wt == 0.0 {
                            continue;
                        }
                        let dxi = &mut dx[i * n..(i + 1) * n];
                        for r in r0..r1 {
                            let ir = r + dr - 1;
                            let grow = &g[r * wd + c0..r * wd + c1];
                            let drow = &mut dxi[ir * wd + c0 + dc - 1..ir * wd + c1 + dc - 1];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wt * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
