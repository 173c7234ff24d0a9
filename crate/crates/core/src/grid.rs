//! Dense BEV tensors with occupancy planes.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::GridSpec;

/// Channel-major (`C x H x W`) grid plus per-cell occupancy mask and count.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub spec: GridSpec,
    pub data: Vec<f64>,
    pub mask: Vec<u8>,
    pub count: Vec<u32>,
}

impl ImageGrid {
    pub fn zeros(spec: GridSpec) -> ImageGrid {
        ImageGrid {
            spec,
            data: vec![0.0; spec.channels * spec.cells()],
            mask: vec![0; spec.cells()],
            count: vec![0; spec.cells()],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.spec.channels
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.spec.cells()
    }

    #[inline]
    pub fn idx(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.spec.height + row) * self.spec.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(c, row, col)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let i = self.idx(c, row, col);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.cells();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Zeroes data and occupancy in place, keeping the allocation.
    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.mask.iter_mut().for_each(|v| *v = 0);
        self.count.iter_mut().for_each(|v| *v = 0);
    }

    pub fn copy_from(&mut self, other: &ImageGrid) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.spec = other.spec;
        self.data.copy_from_slice(&other.data);
        self.mask.copy_from_slice(&other.mask);
        self.count.copy_from_slice(&other.count);
    }

    pub fn copy_aux_from(&mut self, other: &ImageGrid) {
        self.mask.copy_from_slice(&other.mask);
        self.count.copy_from_slice(&other.count);
    }

    /// Checks finiteness, mask binarity and `count = 0 <=> mask = 0`.
    pub fn is_valid(&self) -> bool {
        self.data.len() == self.spec.channels * self.cells()
            && self.data.iter().all(|v| v.is_finite())
            && self
                .mask
                .iter()
                .zip(self.count.iter())
                .all(|(&m, &c)| m <= 1 && ((c == 0) == (m == 0)))
    }

    pub fn l2_norm(&self) -> f64 {
        crate::math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn abs_mass(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn reserved_bytes(&self) -> usize {
        self.data.capacity() * 8 + self.mask.capacity() + self.count.capacity() * 4
    }

    /// `(min, max, mean)` of one channel.
    pub fn channel_stats(&self, c: usize) -> (f64, f64, f64) {
        let ch = self.channel(c);
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in ch {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        (lo, hi, sum / ch.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_is_valid() {
        let spec = GridSpec::centered(2.0, 1.0, 3).unwrap();
        let mut g = ImageGrid::zeros(spec);
        assert!(g.is_valid());
        assert_eq!(g.data.len(), 48);
        g.set(2, 3, 1, 4.0);
        assert_eq!(g.channel(2)[3 * 4 + 1], 4.0);
        g.mask[0] = 1;
        assert!(!g.is_valid());
        g.count[0] = 2;
        assert!(g.is_valid());
        assert_eq!(g.channel_stats(2), (0.0, 4.0, 0.25));
    }
}
