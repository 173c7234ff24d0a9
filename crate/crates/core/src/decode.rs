//! Centre-style decoding of heat and regression maps into boxes.

use alloc::vec::Vec;

use crate::detection::{BevBox, Detection};
use crate::geometry::GridSpec;
use crate::math;

/// Log-size clamp keeping decoded boxes finite and positive.
const LOG_SIZE_RANGE: (f64, f64) = (-4.0, 4.0);

/// Peaks of `heat` (probabilities, one plane) over 3x3 windows with
/// `score >= score_min`, then greedy suppression: a candidate is dropped if
/// a kept detection lies within `nms_radius` meters. Boxes take their size
/// and heading from `reg = (ln w, ln l, sin yaw, cos yaw)` at the peak cell.
pub fn decode_detections(
    spec: &GridSpec,
    heat: &[f64],
    reg: &[f64],
    score_min: f64,
    nms_radius: f64,
) -> Vec<Detection> {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let mut cands: Vec<(f64, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = heat[r * w + c];
            if !(v >= score_min) {
                continue;
            }
            let mut peak = true;
            'win: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    if heat[rr as usize * w + cc as usize] > v {
                        peak = false;
                        break 'win;
                    }
                }
            }
            if peak {
                cands.push((v, r * w + c));
            }
        }
    }
    // Highest score first; ties broken by cell index for determinism.
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<Detection> = Vec::new();
    for (score, i) in cands {
        let [x, y] = spec.cell_center(i / w, i % w);
        let suppressed = kept.iter().any(|d| {
            let (dx, dy) = (d.bbox.x - x, d.bbox.y - y);
            math::sqrt(dx * dx + dy * dy) <= nms_radius
        });
        if suppressed {
            continue;
        }
        let lw = reg[i].clamp(LOG_SIZE_RANGE.0, LOG_SIZE_RANGE.1);
        let ll = reg[n + i].clamp(LOG_SIZE_RANGE.0, LOG_SIZE_RANGE.1);
        let yaw = math::atan2(reg[2 * n + i], reg[3 * n + i]);
        kept.push(Detection::new(BevBox::new(x, y, math::exp(lw), math::exp(ll), yaw), score, 0));
    }
    kept
}
