//! Pillar-style scatter of points into the detector's input grid.

use alloc::vec::Vec;

use crate::geometry::GridSpec;
use crate::grid::ImageGrid;
use crate::math;
use crate::point_fusion::LidarPoint;

/// Input channel contract of the detector.
pub const C_IN: usize = 6;
pub const CH_OCCUPANCY: usize = 0;
pub const CH_DENSITY: usize = 1;
pub const CH_MEAN_Z: usize = 2;
pub const CH_MAX_Z: usize = 3;
pub const CH_MEAN_INTENSITY: usize = 4;
pub const CH_MEAN_DT: usize = 5;

/// Per-cell accumulators reused across frames.
#[derive(Debug, Clone, Default)]
pub struct VoxelScratch {
    sum_z: Vec<f64>,
    max_z: Vec<f64>,
    sum_i: Vec<f64>,
    sum_dt: Vec<f64>,
}

/// Scatters points into a fresh grid with the [`C_IN`] channel layout.
/// Points outside the grid are dropped.
pub fn voxelize_bev(points: &[LidarPoint], spec: &GridSpec) -> ImageGrid {
    let mut grid = ImageGrid::zeros(spec.with_channels(C_IN));
    voxelize_into(points, &mut grid, &mut VoxelScratch::default());
    grid
}

/// Allocation-free variant: `grid` must have [`C_IN`] channels.
/// Returns the number of points that landed inside the grid.
pub fn voxelize_into(points: &[LidarPoint], grid: &mut ImageGrid, scratch: &mut VoxelScratch) -> usize {
    debug_assert_eq!(grid.channels(), C_IN);
    let n = grid.cells();
    for buf in [&mut scratch.sum_z, &mut scratch.sum_i, &mut scratch.sum_dt] {
        buf.clear();
        buf.resize(n, 0.0);
    }
    scratch.max_z.clear();
    scratch.max_z.resize(n, f64::NEG_INFINITY);
    grid.clear();
    let spec = grid.spec;
    let mut inside = 0;
    for p in points {
        let Some((row, col)) = spec.cell_of(p.x, p.y) else {
            continue;
        };
        let i = row * spec.width + col;
        inside += 1;
        grid.count[i] += 1;
        grid.mask[i] = 1;
        scratch.sum_z[i] += p.z;
        scratch.max_z[i] = scratch.max_z[i].max(p.z);
        scratch.sum_i[i] += p.intensity;
        scratch.sum_dt[i] += p.dt;
    }
    for i in 0..n {
        let cnt = grid.count[i];
        if cnt == 0 {
            continue;
        }
        let c = cnt as f64;
        grid.data[CH_OCCUPANCY * n + i] = 1.0;
        grid.data[CH_DENSITY * n + i] = math::ln(1.0 + c);
        grid.data[CH_MEAN_Z * n + i] = scratch.sum_z[i] / c;
        grid.data[CH_MAX_Z * n + i] = scratch.max_z[i];
        grid.data[CH_MEAN_INTENSITY * n + i] = scratch.sum_i[i] / c;
        grid.data[CH_MEAN_DT * n + i] = scratch.sum_dt[i] / c;
    }
    inside
}

/// Reference implementation used by tests: per-cell lists, then reductions.
#[cfg(test)]
pub(crate) fn voxelize_reference(points: &[LidarPoint], spec: &GridSpec) -> ImageGrid {
    use alloc::vec;
    let mut cells: Vec<Vec<LidarPoint>> = vec![Vec::new(); spec.cells()];
    for p in points {
        if let Some((r, c)) = spec.cell_of(p.x, p.y) {
            cells[r * spec.width + c].push(*p);
        }
    }
    let mut g = ImageGrid::zeros(spec.with_channels(C_IN));
    for (i, pts) in cells.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let (r, c) = (i / spec.width, i % spec.width);
        let k = pts.len() as f64;
        g.mask[i] = 1;
        g.count[i] = pts.len() as u32;
        g.set(CH_OCCUPANCY, r, c, 1.0);
        g.set(CH_DENSITY, r, c, (1.0 + k).ln());
        g.set(CH_MEAN_Z, r, c, pts.iter().map(|p| p.z).sum::<f64>() / k);
        g.set(CH_MAX_Z, r, c, pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max));
        g.set(CH_MEAN_INTENSITY, r, c, pts.iter().map(|p| p.intensity).sum::<f64>() / k);
        g.set(CH_MEAN_DT, r, c, pts.iter().map(|p| p.dt).sum::<f64>() / k);
    }
    g
}
