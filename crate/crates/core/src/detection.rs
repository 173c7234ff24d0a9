//! BEV boxes and detections.

use alloc::vec::Vec;

use crate::math;

/// Oriented ground-plane rectangle. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

impl BevBox {
    pub fn new(x: f64, y: f64, w: f64, l: f64, yaw: f64) -> BevBox {
        BevBox { x, y, w, l, yaw }
    }

    /// Whether `(px, py)` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, px: f64, py: f64, margin: f64) -> bool {
        let [u, v] = self.to_local(px, py);
        math::abs(u) <= 0.5 * self.l + margin && math::abs(v) <= 0.5 * self.w + margin
    }

    /// Coordinates of a point in the box frame (u along heading).
    #[inline]
    pub fn to_local(&self, px: f64, py: f64) -> [f64; 2] {
        let (s, c) = (math::sin(self.yaw), math::cos(self.yaw));
        let (dx, dy) = (px - self.x, py - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = (math::sin(self.yaw), math::cos(self.yaw));
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.x + c * u - s * v, self.y + s * u + c * v])
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    pub fn center_distance(&self, other: &BevBox) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        math::sqrt(dx * dx + dy * dy)
    }

    /// Rotated-rectangle IoU via convex polygon clipping.
    pub fn iou(&self, other: &BevBox) -> f64 {
        let inter = polygon_area(&clip_convex(&self.corners(), &other.corners()));
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Sutherland-Hodgman clip of `subject` against the counter-clockwise convex
/// polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let inside = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0;
        let input = core::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci {
                if !pi {
                    out.push(intersect(prev, cur, a, b));
                }
                out.push(cur);
            } else if pi {
                out.push(intersect(prev, cur, a, b));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let denom = dx * ey - dy * ex;
    if denom == 0.0 {
        return q;
    }
    let t = ((a[0] - p[0]) * ey - (a[1] - p[1]) * ex) / denom;
    [p[0] + t * dx, p[1] + t * dy]
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    math::abs(acc) * 0.5
}

/// A scored box produced by the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BevBox,
    pub score: f64,
    pub class: u32,
}

impl Detection {
    pub fn new(bbox: BevBox, score: f64, class: u32) -> Detection {
        Detection { bbox, score, class }
    }
}
