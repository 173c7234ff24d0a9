//! Image-style memory bank operations: ego-motion warping of BEV grids and
//! the four temporal fusion operators (Add, Max, Concat, GRU-like).
//!
//! Every backward pass here returns gradients for the current input and the
//! fusion parameters only. The history grid is treated as a constant; there
//! is no code path that produces a derivative with respect to it.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{self, GeometryError, Mat4, Se2};
use crate::grid::ImageGrid;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("grid layouts differ")]
    SpecMismatch,
    #[error("fusion mode {0:?} requires parameters")]
    MissingParams(FusionMode),
    #[error("parameters do not match the fusion mode or channel count")]
    BadParams,
    #[error("concat fusion needs an even channel count, got {0}")]
    OddChannels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    Add,
    Max,
    Concat,
    Gru,
}

impl FusionMode {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Add => "add",
            FusionMode::Max => "max",
            FusionMode::Concat => "concat",
            FusionMode::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<FusionMode> {
        match s {
            "add" => Some(FusionMode::Add),
            "max" => Some(FusionMode::Max),
            "concat" => Some(FusionMode::Concat),
            "gru" => Some(FusionMode::Gru),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// warp

/// Bilinear sampling plan for one output cell: four taps (input cell index,
/// weight) plus the nearest input cell for the occupancy planes.
#[derive(Debug, Clone, Copy, Default)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    nearest: Option<usize>,
}

fn sampling_plan(spec: &geometry::GridSpec, out_to_in: &Se2) -> Vec<Taps> {
    let (w, h) = (spec.width, spec.height);
    let mut plan = vec![Taps::default(); w * h];
    for row in 0..h {
        for col in 0..w {
            let p_out = spec.cell_center(row, col);
            let [x, y] = out_to_in.apply(p_out);
            let [u, v] = spec.to_continuous(x, y);
            let mut taps = Taps::default();
            let (u0, v0) = (math::floor(u), math::floor(v));
            let (fu, fv) = (u - u0, v - v0);
            let corners = [
                (u0, v0, (1.0 - fu) * (1.0 - fv)),
                (u0 + 1.0, v0, fu * (1.0 - fv)),
                (u0, v0 + 1.0, (1.0 - fu) * fv),
                (u0 + 1.0, v0 + 1.0, fu * fv),
            ];
            for (k, (cu, cv, wt)) in corners.into_iter().enumerate() {
                if wt != 0.0 && cu >= 0.0 && cv >= 0.0 && cu < w as f64 && cv < h as f64 {
                    taps.idx[k] = cv as usize * w + cu as usize;
                    taps.w[k] = wt;
                }
            }
            let (nu, nv) = (math::round(u), math::round(v));
            if nu >= 0.0 && nv >= 0.0 && nu < w as f64 && nv < h as f64 {
                taps.nearest = Some(nv as usize * w + nu as usize);
            }
            plan[row * w + col] = taps;
        }
    }
    plan
}

/// Resamples a history grid into the current frame (`I~_last`). `t_rel`
/// maps last-frame coordinates to current-frame coordinates; every output
/// cell centre is pulled back through its inverse and sampled bilinearly,
/// with zeros outside the grid. Occupancy planes use nearest-neighbour.
pub fn warp(grid: &ImageGrid, t_rel: &Mat4) -> Result<ImageGrid, FusionError> {
    let mut out = ImageGrid::zeros(grid.spec);
    warp_into(grid, t_rel, &mut out)?;
    Ok(out)
}

pub fn warp_into(grid: &ImageGrid, t_rel: &Mat4, out: &mut ImageGrid) -> Result<(), FusionError> {
    let se2 = geometry::se2_of(t_rel)?;
    if !out.spec.same_layout(&grid.spec) || out.channels() != grid.channels() {
        return Err(FusionError::SpecMismatch);
    }
    if se2 == Se2::IDENTITY {
        out.copy_from(grid);
        return Ok(());
    }
    let plan = sampling_plan(&grid.spec, &se2.inverse());
    let n = grid.cells();
    for c in 0..grid.channels() {
        let src = grid.channel(c);
        let dst = &mut out.data[c * n..(c + 1) * n];
        for (d, t) in dst.iter_mut().zip(plan.iter()) {
            *d = t.w[0] * src[t.idx[0]]
                + t.w[1] * src[t.idx[1]]
                + t.w[2] * src[t.idx[2]]
                + t.w[3] * src[t.idx[3]];
        }
    }
    for (i, t) in plan.iter().enumerate() {
        match t.nearest {
            Some(j) if grid.mask[j] >= 1 => {
                out.mask[i] = 1;
                out.count[i] = grid.count[j];
            }
            _ => {
                out.mask[i] = 0;
                out.count[i] = 0;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// parameters

/// Learned 1x1 compressions of the current and history grids to `C/2`
/// channels each (row-major `C/2 x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatParams {
    pub channels: usize,
    pub cur: Vec<f64>,
    pub hist: Vec<f64>,
}

impl ConcatParams {
    /// Channel-mean pooling: output channel `g` averages inputs `2g, 2g+1`.
    pub fn mean_pool(channels: usize) -> ConcatParams {
        let half = channels / 2;
        let mut m = vec![0.0; half * channels];
        for g in 0..half {
            m[g * channels + 2 * g] = 0.5;
            m[g * channels + 2 * g + 1] = 0.5;
        }
        ConcatParams { channels, cur: m.clone(), hist: m }
    }

    pub fn zeros(channels: usize) -> ConcatParams {
        let n = (channels / 2) * channels;
        ConcatParams { channels, cur: vec![0.0; n], hist: vec![0.0; n] }
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [&self.cur, &self.hist]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.cur, &mut self.hist]
    }

    /// Largest absolute row sum of the block mapping stored history channels
    /// back onto themselves. Below 1 the recursive state cannot grow without
    /// bound, since warping never increases the max norm.
    pub fn recurrent_gain(&self) -> f64 {
        let (c, half) = (self.channels, self.channels / 2);
        (0..half)
            .map(|g| self.hist[g * c + half..g * c + c].iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Rescales rows of the recurrent block whose absolute sum exceeds `max`.
    pub fn bound_recurrence(&mut self, max: f64) {
        let (c, half) = (self.channels, self.channels / 2);
        for g in 0..half {
            let row = &mut self.hist[g * c + half..g * c + c];
            let sum: f64 = row.iter().map(|w| w.abs()).sum();
            if sum > max {
                row.iter_mut().for_each(|w| *w *= max / sum);
            }
        }
    }
}

/// Per-cell GRU gates over the concatenation `[h, x]` (each `C x 2C`,
/// row-major, first `C` columns act on the history `h`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruFusionParams {
    pub channels: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruFusionParams {
    pub fn zeros(channels: usize) -> GruFusionParams {
        let w = vec![0.0; channels * 2 * channels];
        let b = vec![0.0; channels];
        GruFusionParams {
            channels,
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    /// Starts as "take the current input" (`h~ ~ x`, `z ~ 0.5`).
    pub fn init(channels: usize) -> GruFusionParams {
        let mut p = GruFusionParams::zeros(channels);
        let two_c = 2 * channels;
        for i in 0..channels {
            p.w_h[i * two_c + channels + i] = 1.0;
        }
        p
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w_z, &self.w_r, &self.w_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    fn check(&self, channels: usize) -> Result<(), FusionError> {
        let w = channels * 2 * channels;
        let ok = self.channels == channels
            && self.w_z.len() == w
            && self.w_r.len() == w
            && self.w_h.len() == w
            && self.b_z.len() == channels
            && self.b_r.len() == channels
            && self.b_h.len() == channels;
        if ok {
            Ok(())
        } else {
            Err(FusionError::BadParams)
        }
    }
}

/// Parameters of one fusion point.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Concat(ConcatParams),
    Gru(GruFusionParams),
}

impl FusionParams {
    /// Default initial parameters for a mode, if it has any.
    pub fn for_mode(mode: FusionMode, channels: usize) -> Option<FusionParams> {
        match mode {
            FusionMode::Add | FusionMode::Max => None,
            FusionMode::Concat => Some(FusionParams::Concat(ConcatParams::mean_pool(channels))),
            FusionMode::Gru => Some(FusionParams::Gru(GruFusionParams::init(channels))),
        }
    }

    pub fn zeros_like(&self) -> FusionParams {
        match self {
            FusionParams::Concat(p) => FusionParams::Concat(ConcatParams::zeros(p.channels)),
            FusionParams::Gru(p) => FusionParams::Gru(GruFusionParams::zeros(p.channels)),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            FusionParams::Concat(p) => p.tensors().to_vec(),
            FusionParams::Gru(p) => p.tensors().to_vec(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            FusionParams::Concat(p) => p.tensors_mut().into_iter().collect(),
            FusionParams::Gru(p) => p.tensors_mut().into_iter().collect(),
        }
    }

    /// See [`ConcatParams::bound_recurrence`]; the GRU is bounded by its gates.
    pub fn bound_recurrence(&mut self, max: f64) {
        if let FusionParams::Concat(p) = self {
            p.bound_recurrence(max);
        }
    }
}

// ---------------------------------------------------------------------------
// forward

fn check_pair(cur: &ImageGrid, hist: &ImageGrid) -> Result<(), FusionError> {
    if cur.spec.same_layout(&hist.spec) && cur.channels() == hist.channels() {
        Ok(())
    } else {
        Err(FusionError::SpecMismatch)
    }
}

/// `I_f = Fusion(I_cur, I~_last)`.
pub fn fuse(
    mode: FusionMode,
    cur: &ImageGrid,
    hist: &ImageGrid,
    params: Option<&FusionParams>,
) -> Result<ImageGrid, FusionError> {
    let mut out = ImageGrid::zeros(cur.spec);
    fuse_into(mode, cur, hist, params, &mut out)?;
    Ok(out)
}

pub fn fuse_into(
    mode: FusionMode,
    cur: &ImageGrid,
    hist: &ImageGrid,
    params: Option<&FusionParams>,
    out: &mut ImageGrid,
) -> Result<(), FusionError> {
    check_pair(cur, hist)?;
    check_pair(cur, out)?;
    match mode {
        FusionMode::Add => {
            for ((o, a), b) in out.data.iter_mut().zip(&cur.data).zip(&hist.data) {
                *o = a + b;
            }
            for i in 0..cur.cells() {
                out.count[i] = cur.count[i] + hist.count[i];
                out.mask[i] = cur.mask[i] | hist.mask[i];
            }
        }
        FusionMode::Max => {
            for ((o, a), b) in out.data.iter_mut().zip(&cur.data).zip(&hist.data) {
                *o = a.max(*b);
            }
            for i in 0..cur.cells() {
                out.count[i] = cur.count[i].max(hist.count[i]);
                out.mask[i] = cur.mask[i] | hist.mask[i];
            }
        }
        FusionMode::Concat => {
            let owned;
            let p = match params {
                Some(FusionParams::Concat(p)) => p,
                None => {
                    owned = ConcatParams::mean_pool(cur.channels());
                    &owned
                }
                Some(_) => return Err(FusionError::BadParams),
            };
            concat_forward(p, cur, hist, out)?;
            merge_aux(cur, hist, out);
        }
        FusionMode::Gru => {
            let p = match params {
                Some(FusionParams::Gru(p)) => p,
                None => return Err(FusionError::MissingParams(FusionMode::Gru)),
                Some(_) => return Err(FusionError::BadParams),
            };
            p.check(cur.channels())?;
            gru_forward(p, hist, cur, out);
            merge_aux(cur, hist, out);
        }
    }
    Ok(())
}

fn merge_aux(cur: &ImageGrid, hist: &ImageGrid, out: &mut ImageGrid) {
    for i in 0..cur.cells() {
        out.count[i] = cur.count[i] + hist.count[i];
        out.mask[i] = cur.mask[i] | hist.mask[i];
    }
}

fn concat_forward(
    p: &ConcatParams,
    cur: &ImageGrid,
    hist: &ImageGrid,
    out: &mut ImageGrid,
) -> Result<(), FusionError> {
    let c = cur.channels();
    if c % 2 != 0 {
        return Err(FusionError::OddChannels(c));
    }
    let half = c / 2;
    if p.channels != c || p.cur.len() != half * c || p.hist.len() != half * c {
        return Err(FusionError::BadParams);
    }
    let n = cur.cells();
    out.data.iter_mut().for_each(|v| *v = 0.0);
    for (src, weights, offset) in [(cur, &p.cur, 0), (hist, &p.hist, half)] {
        for g in 0..half {
            let dst = (offset + g) * n;
            for k in 0..c {
                let w = weights[g * c + k];
                if w == 0.0 {
                    continue;
                }
                let s = src.channel(k);
                for (o, v) in out.data[dst..dst + n].iter_mut().zip(s) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(())
}

/// Per-cell GRU: `z = s(W_z[h,x]+b_z)`, `r = s(W_r[h,x]+b_r)`,
/// `h~ = tanh(W_h[r*h, x]+b_h)`, `out = (1-z)*h + z*h~`.
pub fn gru_forward(p: &GruFusionParams, h: &ImageGrid, x: &ImageGrid, out: &mut ImageGrid) {
    let c = p.channels;
    let n = h.cells();
    let mut cell = GruCell::new(c);
    for i in 0..n {
        cell.load(h, x, i, n);
        cell.forward(p);
        for k in 0..c {
            out.data[k * n + i] = cell.out[k];
        }
    }
}

/// Scratch state for a single cell's GRU evaluation.
struct GruCell {
    c: usize,
    h: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    cand: Vec<f64>,
    out: Vec<f64>,
}

impl GruCell {
    fn new(c: usize) -> GruCell {
        GruCell {
            c,
            h: vec![0.0; c],
            x: vec![0.0; c],
            z: vec![0.0; c],
            r: vec![0.0; c],
            rh: vec![0.0; c],
            cand: vec![0.0; c],
            out: vec![0.0; c],
        }
    }

    fn load(&mut self, h: &ImageGrid, x: &ImageGrid, i: usize, n: usize) {
        for k in 0..self.c {
            self.h[k] = h.data[k * n + i];
            self.x[k] = x.data[k * n + i];
        }
    }

    fn affine(w: &[f64], b: &[f64], first: &[f64], second: &[f64], row: usize, c: usize) -> f64 {
        let wr = &w[row * 2 * c..(row + 1) * 2 * c];
        let mut acc = b[row];
        for k in 0..c {
            acc += wr[k] * first[k] + wr[c + k] * second[k];
        }
        acc
    }

    fn forward(&mut self, p: &GruFusionParams) {
        let c = self.c;
        for j in 0..c {
            self.z[j] = math::sigmoid(Self::affine(&p.w_z, &p.b_z, &self.h, &self.x, j, c));
            self.r[j] = math::sigmoid(Self::affine(&p.w_r, &p.b_r, &self.h, &self.x, j, c));
        }
        for j in 0..c {
            self.rh[j] = self.r[j] * self.h[j];
        }
        for j in 0..c {
            self.cand[j] = math::tanh(Self::affine(&p.w_h, &p.b_h, &self.rh, &self.x, j, c));
            self.out[j] = (1.0 - self.z[j]) * self.h[j] + self.z[j] * self.cand[j];
        }
    }
}

// ---------------------------------------------------------------------------
// backward

/// Gradients for the GRU gates and the current input `x`; the history `h` is
/// a constant of the step.
pub fn gru_backward(
    p: &GruFusionParams,
    h: &ImageGrid,
    x: &ImageGrid,
    upstream: &[f64],
) -> (GruFusionParams, Vec<f64>) {
    let mut grads = GruFusionParams::zeros(p.channels);
    let mut x_grad = vec![0.0; x.data.len()];
    gru_backward_accumulate(p, h, x, upstream, &mut grads, &mut x_grad);
    (grads, x_grad)
}

pub(crate) fn gru_backward_accumulate(
    p: &GruFusionParams,
    h: &ImageGrid,
    x: &ImageGrid,
    upstream: &[f64],
    grads: &mut GruFusionParams,
    x_grad: &mut [f64],
) {
    let c = p.channels;
    let two_c = 2 * c;
    let n = h.cells();
    let mut cell = GruCell::new(c);
    let mut da_z = vec![0.0; c];
    let mut da_r = vec![0.0; c];
    let mut da_h = vec![0.0; c];
    let mut d_rh = vec![0.0; c];
    for i in 0..n {
        let g: Vec<f64> = (0..c).map(|k| upstream[k * n + i]).collect();
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        cell.load(h, x, i, n);
        cell.forward(p);
        for j in 0..c {
            let dz = g[j] * (cell.cand[j] - cell.h[j]);
            da_z[j] = dz * cell.z[j] * (1.0 - cell.z[j]);
            let dcand = g[j] * cell.z[j];
            da_h[j] = dcand * (1.0 - cell.cand[j] * cell.cand[j]);
        }
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..c {
            let row = &p.w_h[j * two_c..(j + 1) * two_c];
            for k in 0..c {
                d_rh[k] += row[k] * da_h[j];
            }
        }
        for k in 0..c {
            let dr = d_rh[k] * cell.h[k];
            da_r[k] = dr * cell.r[k] * (1.0 - cell.r[k]);
        }
        for j in 0..c {
            let (gz, gr, gh) = (da_z[j], da_r[j], da_h[j]);
            grads.b_z[j] += gz;
            grads.b_r[j] += gr;
            grads.b_h[j] += gh;
            let base = j * two_c;
            for k in 0..c {
                grads.w_z[base + k] += gz * cell.h[k];
                grads.w_z[base + c + k] += gz * cell.x[k];
                grads.w_r[base + k] += gr * cell.h[k];
                grads.w_r[base + c + k] += gr * cell.x[k];
                grads.w_h[base + k] += gh * cell.rh[k];
                grads.w_h[base + c + k] += gh * cell.x[k];
            }
        }
        for k in 0..c {
            let mut acc = 0.0;
            for j in 0..c {
                let col = j * two_c + c + k;
                acc += p.w_z[col] * da_z[j] + p.w_r[col] * da_r[j] + p.w_h[col] * da_h[j];
            }
            x_grad[k * n + i] += acc;
        }
    }
}

/// Backward of [`fuse`] with respect to the current grid and the fusion
/// parameters. Accumulates into `param_grads` (when the mode has parameters)
/// and returns the gradient for `cur`.
pub fn fuse_backward(
    mode: FusionMode,
    cur: &ImageGrid,
    hist: &ImageGrid,
    params: Option<&FusionParams>,
    upstream: &[f64],
    param_grads: Option<&mut FusionParams>,
) -> Result<Vec<f64>, FusionError> {
    check_pair(cur, hist)?;
    let mut cur_grad = vec![0.0; cur.data.len()];
    match mode {
        FusionMode::Add => cur_grad.copy_from_slice(upstream),
        FusionMode::Max => {
            for (i, g) in cur_grad.iter_mut().enumerate() {
                if cur.data[i] >= hist.data[i] {
                    *g = upstream[i];
                }
            }
        }
        FusionMode::Concat => {
            let owned;
            let p = match params {
                Some(FusionParams::Concat(p)) => p,
                None => {
                    owned = ConcatParams::mean_pool(cur.channels());
                    &owned
                }
                Some(_) => return Err(FusionError::BadParams),
            };
            let c = cur.channels();
            if c % 2 != 0 {
                return Err(FusionError::OddChannels(c));
            }
            let half = c / 2;
            let n = cur.cells();
            let mut gp = match param_grads {
                Some(FusionParams::Concat(g)) => Some(g),
                None => None,
                Some(_) => return Err(FusionError::BadParams),
            };
            for g in 0..half {
                let up_cur = &upstream[g * n..(g + 1) * n];
                let up_hist = &upstream[(half + g) * n..(half + g + 1) * n];
                for k in 0..c {
                    let w = p.cur[g * c + k];
                    let dst = &mut cur_grad[k * n..(k + 1) * n];
                    for (d, u) in dst.iter_mut().zip(up_cur) {
                        *d += w * u;
                    }
                    if let Some(gp) = gp.as_deref_mut() {
                        let xc = cur.channel(k);
                        let xh = hist.channel(k);
                        gp.cur[g * c + k] += up_cur.iter().zip(xc).map(|(u, v)| u * v).sum::<f64>();
                        gp.hist[g * c + k] += up_hist.iter().zip(xh).map(|(u, v)| u * v).sum::<f64>();
                    }
                }
            }
        }
        FusionMode::Gru => {
            let p = match params {
                Some(FusionParams::Gru(p)) => p,
                None => return Err(FusionError::MissingParams(FusionMode::Gru)),
                Some(_) => return Err(FusionError::BadParams),
            };
            p.check(cur.channels())?;
            match param_grads {
                Some(FusionParams::Gru(g)) => gru_backward_accumulate(p, hist, cur, upstream, g, &mut cur_grad),
                None => {
                    let mut scratch = GruFusionParams::zeros(p.channels);
                    gru_backward_accumulate(p, hist, cur, upstream, &mut scratch, &mut cur_grad)
                }
                Some(_) => return Err(FusionError::BadParams),
            }
        }
    }
    Ok(cur_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, Pose};
    use core::f64::consts::FRAC_PI_2;

    fn spec(c: usize) -> GridSpec {
        GridSpec::centered(4.0, 1.0, c).unwrap()
    }

    fn ramp(c: usize) -> ImageGrid {
        let mut g = ImageGrid::zeros(spec(c));
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 - 5.0;
        }
        for i in 0..g.cells() {
            if i % 3 == 0 {
                g.mask[i] = 1;
                g.count[i] = (i % 5) as u32 + 1;
            }
        }
        g
    }

    #[test]
    fn bounded_recurrence_keeps_state_bounded() {
        let mut p = ConcatParams::mean_pool(4);
        p.hist.iter_mut().for_each(|w| *w = 0.9);
        assert!((p.recurrent_gain() - 1.8).abs() < 1e-12);
        let untouched = p.cur.clone();
        p.bound_recurrence(0.9);
        assert!((p.recurrent_gain() - 0.9).abs() < 1e-12);
        assert_eq!(p.cur, untouched);
        // non-recurrent columns keep their weights
        assert_eq!(p.hist[0], 0.9);
        let snapshot = p.clone();
        p.bound_recurrence(2.0);
        assert_eq!(p, snapshot);

        // a constant input fed through the recursion settles below x / (1 - gain)
        let s = spec(4);
        let mut x = ImageGrid::zeros(s);
        x.data.iter_mut().for_each(|v| *v = 1.0);
        let mut h = ImageGrid::zeros(s);
        let mut out = ImageGrid::zeros(s);
        for _ in 0..200 {
            concat_forward(&p, &x, &h, &mut out).unwrap();
            h.copy_from(&out);
        }
        let bound = 1.8 / (1.0 - 0.9);
        assert!(h.data.iter().all(|v| v.abs() <= bound + 1e-9));
    }

    #[test]
    fn warp_identity_is_exact() {
        let g = ramp(2);
        assert_eq!(warp(&g, &Mat4::IDENTITY).unwrap(), g);
        // a non-trivial plan that maps centres to centres is also exact
        let shifted = warp(&g, Pose::translation(0.0, 0.0, 0.0).matrix()).unwrap();
        assert_eq!(shifted, g);
    }

    #[test]
    fn warp_integer_shift_oracle() {
        let g = ramp(1);
        let k = 2usize;
        let out = warp(&g, Pose::translation(k as f64 * 1.0, 0.0, 0.0).matrix()).unwrap();
        let w = g.spec.width;
        for row in 0..g.spec.height {
            for col in 0..w {
                let expected = if col >= k { g.get(0, row, col - k) } else { 0.0 };
                assert_eq!(out.get(0, row, col), expected, "({row},{col})");
                let i = row * w + col;
                let (m, c) = if col >= k { (g.mask[i - k], g.count[i - k]) } else { (0, 0) };
                assert_eq!((out.mask[i], out.count[i]), (m, c));
            }
        }
        assert!(out.is_valid());
    }

    #[test]
    fn warp_rotation_impulse_brute_force() {
        let mut g = ImageGrid::zeros(spec(1));
        let (r, c) = (1, 6);
        g.set(0, r, c, 1.0);
        let out = warp(&g, Pose::rot_z(FRAC_PI_2).matrix()).unwrap();
        // The impulse centre (x, y) lands on (-y, x).
        let [x, y] = g.spec.cell_center(r, c);
        let (tr, tc) = g.spec.cell_of(-y, x).unwrap();
        let mut local = 0.0;
        for (dr, dc) in [(0i64, 0i64), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let rr = tr as i64 + dr;
            let cc = tc as i64 + dc;
            if rr >= 0 && cc >= 0 && (rr as usize) < g.spec.height && (cc as usize) < g.spec.width {
                local += out.get(0, rr as usize, cc as usize);
            }
        }
        assert!((local - 1.0).abs() < 5e-2);
        assert!((out.abs_mass() - 1.0).abs() < 5e-2);
    }

    #[test]
    fn warp_rejects_out_of_plane() {
        let g = ramp(1);
        assert!(matches!(
            warp(&g, Pose::rot_x(0.2).matrix()),
            Err(FusionError::Geometry(GeometryError::OutOfPlane))
        ));
    }

    #[test]
    fn add_with_zero_history() {
        let cur = ramp(2);
        let zero = ImageGrid::zeros(cur.spec);
        let out = fuse(FusionMode::Add, &cur, &zero, None).unwrap();
        assert_eq!(out, cur);
    }

    #[test]
    fn max_idempotent() {
        let g = ramp(3);
        assert_eq!(fuse(FusionMode::Max, &g, &g, None).unwrap(), g);
    }

    #[test]
    fn concat_mean_pool_layout() {
        let cur = ramp(4);
        let mut hist = ramp(4);
        hist.data.iter_mut().for_each(|v| *v *= 10.0);
        let out = fuse(FusionMode::Concat, &cur, &hist, None).unwrap();
        let n = cur.cells();
        for i in 0..n {
            assert_eq!(out.data[i], 0.5 * (cur.data[i] + cur.data[n + i]));
            assert_eq!(out.data[n + i], 0.5 * (cur.data[2 * n + i] + cur.data[3 * n + i]));
            assert_eq!(out.data[2 * n + i], 0.5 * (hist.data[i] + hist.data[n + i]));
        }
        assert!(matches!(
            fuse(FusionMode::Concat, &ramp(3), &ramp(3), None),
            Err(FusionError::OddChannels(3))
        ));
    }

    #[test]
    fn gru_errors() {
        let g = ramp(2);
        assert_eq!(fuse(FusionMode::Gru, &g, &g, None), Err(FusionError::MissingParams(FusionMode::Gru)));
        let other = ImageGrid::zeros(GridSpec::centered(3.0, 1.0, 2).unwrap());
        assert_eq!(fuse(FusionMode::Add, &g, &other, None), Err(FusionError::SpecMismatch));
    }

    #[test]
    fn gru_gate_saturation() {
        let x = ramp(2);
        let mut h = ramp(2);
        h.data.iter_mut().for_each(|v| *v = 0.1 * *v + 0.3);
        let mut p = GruFusionParams::init(2);
        p.w_r.iter_mut().for_each(|v| *v = 0.05);
        p.w_h[1] = -0.3;
        p.b_z = vec![-1000.0; 2];
        let params = FusionParams::Gru(p.clone());
        let out = fuse(FusionMode::Gru, &x, &h, Some(&params)).unwrap();
        assert_eq!(out.data, h.data);

        p.b_z = vec![1000.0; 2];
        let out = fuse(FusionMode::Gru, &x, &h, Some(&FusionParams::Gru(p.clone()))).unwrap();
        // z == 1 exactly: output is the candidate branch
        let n = x.cells();
        for i in 0..n {
            let hv = [h.data[i], h.data[n + i]];
            let xv = [x.data[i], x.data[n + i]];
            for j in 0..2 {
                let r: Vec<f64> = (0..2)
                    .map(|k| {
                        let row = &p.w_r[k * 4..k * 4 + 4];
                        crate::math::sigmoid(row[0] * hv[0] + row[1] * hv[1] + row[2] * xv[0] + row[3] * xv[1])
                    })
                    .collect();
                let row = &p.w_h[j * 4..j * 4 + 4];
                let a = row[0] * r[0] * hv[0] + row[1] * r[1] * hv[1] + row[2] * xv[0] + row[3] * xv[1];
                assert!((out.data[j * n + i] - a.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_backward_zero_upstream() {
        let x = ramp(2);
        let h = ramp(2);
        let p = GruFusionParams::init(2);
        let (g, xg) = gru_backward(&p, &h, &x, &vec![0.0; x.data.len()]);
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
        assert!(xg.iter().all(|v| *v == 0.0));
    }
}
