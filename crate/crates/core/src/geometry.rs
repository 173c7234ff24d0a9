//! Rigid-transform algebra for ego-motion compensation.
//!
//! [`Mat4`] is a general row-major homogeneous 4x4 matrix; [`Pose`] wraps one
//! that is known to be rigid. Augmentation transforms include a uniform scale
//! and a reflection, so they are exposed as plain [`Mat4`]s.

use core::ops::Mul;

use crate::math;
use crate::point_fusion::LidarPoint;

/// Row-major homogeneous 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [f64; 16]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    ]);

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.0[r * 4 + c]
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        m.0[0] = a;
        m.0[5] = b;
        m.0[10] = c;
        m
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        m.0[3] = x;
        m.0[7] = y;
        m.0[11] = z;
        m
    }

    pub fn rot_z(theta: f64) -> Mat4 {
        let (s, c) = (math::sin(theta), math::cos(theta));
        let mut m = Mat4::IDENTITY;
        m.0[0] = c;
        m.0[1] = -s;
        m.0[4] = s;
        m.0[5] = c;
        m
    }

    pub fn rot_x(theta: f64) -> Mat4 {
        let (s, c) = (math::sin(theta), math::cos(theta));
        let mut m = Mat4::IDENTITY;
        m.0[5] = c;
        m.0[6] = -s;
        m.0[9] = s;
        m.0[10] = c;
        m
    }

    pub fn rot_y(theta: f64) -> Mat4 {
        let (s, c) = (math::sin(theta), math::cos(theta));
        let mut m = Mat4::IDENTITY;
        m.0[0] = c;
        m.0[2] = s;
        m.0[8] = -s;
        m.0[10] = c;
        m
    }

    pub fn mul_mat(&self, rhs: &Mat4) -> Mat4 {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += self.0[r * 4 + k] * rhs.0[k * 4 + c];
                }
                out[r * 4 + c] = acc;
            }
        }
        Mat4(out)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn translation_part(&self) -> [f64; 3] {
        [self.0[3], self.0[7], self.0[11]]
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Mat4) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, f64::max)
    }

    /// Inverse of an affine matrix whose linear block is a similarity or
    /// reflection (`A^T A = s^2 I`): `A^-1 = A^T / s^2`.
    pub fn inverse_similarity(&self) -> Mat4 {
        let m = &self.0;
        let s2 = m[0] * m[0] + m[4] * m[4] + m[8] * m[8];
        let mut out = Mat4::IDENTITY;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r * 4 + c] = m[c * 4 + r] / s2;
            }
        }
        let t = self.translation_part();
        for r in 0..3 {
            out.0[r * 4 + 3] =
                -(out.0[r * 4] * t[0] + out.0[r * 4 + 1] * t[1] + out.0[r * 4 + 2] * t[2]);
        }
        out
    }
}

impl Mul for Mat4 {
    type Output = Mat4;
    fn mul(self, rhs: Mat4) -> Mat4 {
        self.mul_mat(&rhs)
    }
}

/// Rigid ego transform (rotation block orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Mat4);

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose(Mat4::IDENTITY);

    /// Wraps a matrix, checking the rigidity invariants.
    pub fn from_matrix(m: Mat4) -> Result<Pose, GeometryError> {
        let p = Pose(m);
        if p.rigidity_error() < 1e-9 && m.0[12..].iter().zip([0.0, 0.0, 0.0, 1.0]).all(|(a, b)| *a == b)
        {
            Ok(p)
        } else {
            Err(GeometryError::NotRigid)
        }
    }

    pub(crate) fn from_matrix_unchecked(m: Mat4) -> Pose {
        Pose(m)
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Pose {
        Pose(Mat4::translation(x, y, z))
    }

    pub fn rot_z(theta: f64) -> Pose {
        Pose(Mat4::rot_z(theta))
    }

    pub fn rot_x(theta: f64) -> Pose {
        Pose(Mat4::rot_x(theta))
    }

    pub fn rot_y(theta: f64) -> Pose {
        Pose(Mat4::rot_y(theta))
    }

    /// Planar pose: yaw about z followed by translation `(x, y, z)`.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        let mut m = Mat4::rot_z(yaw);
        m.0[3] = x;
        m.0[7] = y;
        m.0[11] = z;
        Pose(m)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose(self.0.mul_mat(&other.0))
    }

    /// Closed-form rigid inverse `[R^T, -R^T t]`.
    pub fn invert(&self) -> Pose {
        let m = &self.0 .0;
        let mut out = Mat4::IDENTITY;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r * 4 + c] = m[c * 4 + r];
            }
        }
        let t = self.0.translation_part();
        for r in 0..3 {
            out.0[r * 4 + 3] =
                -(out.0[r * 4] * t[0] + out.0[r * 4 + 1] * t[1] + out.0[r * 4 + 2] * t[2]);
        }
        Pose(out)
    }

    /// Yaw of the rotation block (meaningful for planar poses).
    pub fn yaw(&self) -> f64 {
        math::atan2(self.0.at(1, 0), self.0.at(0, 0))
    }

    pub fn translation_part(&self) -> [f64; 3] {
        self.0.translation_part()
    }

    /// `max(||R^T R - I||_inf, |det R - 1|)`.
    pub fn rigidity_error(&self) -> f64 {
        let m = &self.0;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut d = 0.0;
                for k in 0..3 {
                    d += m.at(k, i) * m.at(k, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max(math::abs(d - target));
            }
        }
        let det = m.at(0, 0) * (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1))
            - m.at(0, 1) * (m.at(1, 0) * m.at(2, 2) - m.at(1, 2) * m.at(2, 0))
            + m.at(0, 2) * (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0));
        err.max(math::abs(det - 1.0))
    }

    pub fn to_le_bytes(&self) -> [u8; 128] {
        let mut out = [0u8; 128];
        for (i, v) in self.0 .0.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8; 128]) -> Pose {
        let mut m = [0.0; 16];
        for (i, v) in m.iter_mut().enumerate() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[i * 8..i * 8 + 8]);
            *v = f64::from_le_bytes(b);
        }
        Pose(Mat4(m))
    }
}

/// `T_cur^-1 * T_last`: maps coordinates of the last frame into the current one.
pub fn relative_pose(t_cur: &Pose, t_last: &Pose) -> Pose {
    t_cur.invert().compose(t_last)
}

/// Relative pose between two augmented frames of the same stream:
/// `T_t T_s T_r T_f T_cur^-1 T_last T_f T_r^-1 T_s^-1 T_t^-1`.
pub fn augmented_relative_pose(t_cur: &Pose, t_last: &Pose, aug: &AugTransform) -> Pose {
    let (tf, tr, ts, tt) = (aug.flip_matrix(), aug.rot_matrix(), aug.scale_matrix(), aug.trans_matrix());
    let rel = relative_pose(t_cur, t_last);
    let m = tt * ts * tr * tf * *rel.matrix() * tf * tr.inverse_similarity() * ts.inverse_similarity()
        * tt.inverse_similarity();
    Pose::from_matrix_unchecked(m)
}

/// Transforms the xyz of every point; intensity and dt pass through.
pub fn apply_to_points(m: &Mat4, points: &mut [LidarPoint]) {
    for p in points {
        let [x, y, z] = m.apply([p.x, p.y, p.z]);
        p.x = x;
        p.y = y;
        p.z = z;
    }
}

/// Axis flag of a reflection. `X` mirrors across the x axis (negates y),
/// `Y` mirrors across the y axis (negates x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Flip {
    #[default]
    None,
    X,
    Y,
}

/// Stream augmentation `T_t * T_s * T_r * T_f` (applied right to left).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugTransform {
    pub flip: Flip,
    pub rotation_z: f64,
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Default for AugTransform {
    fn default() -> Self {
        AugTransform::IDENTITY
    }
}

impl AugTransform {
    pub const IDENTITY: AugTransform = AugTransform {
        flip: Flip::None,
        rotation_z: 0.0,
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn is_identity(&self) -> bool {
        *self == AugTransform::IDENTITY
    }

    pub fn flip_matrix(&self) -> Mat4 {
        match self.flip {
            Flip::None => Mat4::IDENTITY,
            Flip::X => Mat4::diag(1.0, -1.0, 1.0),
            Flip::Y => Mat4::diag(-1.0, 1.0, 1.0),
        }
    }

    pub fn rot_matrix(&self) -> Mat4 {
        Mat4::rot_z(self.rotation_z)
    }

    pub fn scale_matrix(&self) -> Mat4 {
        Mat4::diag(self.scale, self.scale, self.scale)
    }

    pub fn trans_matrix(&self) -> Mat4 {
        let [x, y, z] = self.translation;
        Mat4::translation(x, y, z)
    }

    /// `T_t * T_s * T_r * T_f`.
    pub fn matrix(&self) -> Mat4 {
        self.trans_matrix() * self.scale_matrix() * self.rot_matrix() * self.flip_matrix()
    }

    /// Maps a BEV heading through the flip then the rotation.
    pub fn apply_yaw(&self, yaw: f64) -> f64 {
        let flipped = match self.flip {
            Flip::None => yaw,
            Flip::X => -yaw,
            Flip::Y => core::f64::consts::PI - yaw,
        };
        math::wrap_angle(flipped + self.rotation_z)
    }
}

/// Ground-plane projection of a pose: `p' = rot * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se2 {
    pub rot: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Se2 {
    pub const IDENTITY: Se2 = Se2 {
        rot: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.rot[0][0] * p[0] + self.rot[0][1] * p[1] + self.t[0],
            self.rot[1][0] * p[0] + self.rot[1][1] * p[1] + self.t[1],
        ]
    }

    pub fn compose(&self, other: &Se2) -> Se2 {
        let a = &self.rot;
        let b = &other.rot;
        let rot = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = self.apply(other.t);
        Se2 { rot, t }
    }

    /// Inverse of a similarity block (`rot^T rot = s^2 I`).
    pub fn inverse(&self) -> Se2 {
        let r = &self.rot;
        let s2 = r[0][0] * r[0][0] + r[1][0] * r[1][0];
        let rot = [[r[0][0] / s2, r[1][0] / s2], [r[0][1] / s2, r[1][1] / s2]];
        let t = [
            -(rot[0][0] * self.t[0] + rot[0][1] * self.t[1]),
            -(rot[1][0] * self.t[0] + rot[1][1] * self.t[1]),
        ];
        Se2 { rot, t }
    }
}

const SE2_TOL: f64 = 1e-6;

/// Projects a transform onto the ground plane, rejecting any component that
/// tilts the plane.
pub fn se2_of(m: &Mat4) -> Result<Se2, GeometryError> {
    let off_plane = [m.at(0, 2), m.at(1, 2), m.at(2, 0), m.at(2, 1)];
    if off_plane.iter().any(|v| math::abs(*v) > SE2_TOL) {
        return Err(GeometryError::OutOfPlane);
    }
    let (a, b, c, d) = (m.at(0, 0), m.at(0, 1), m.at(1, 0), m.at(1, 1));
    let scale = math::sqrt(a * a + c * c);
    if math::abs(a - d) > SE2_TOL || math::abs(b + c) > SE2_TOL || math::abs(m.at(2, 2) - scale) > SE2_TOL
    {
        return Err(GeometryError::OutOfPlane);
    }
    Ok(Se2 {
        rot: [[a, b], [c, d]],
        t: [m.at(0, 3), m.at(1, 3)],
    })
}

/// Metric layout of a BEV grid. Cell `(row, col)` covers
/// `x in [x_min + col*cell, x_min + (col+1)*cell)`, same for y with rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl GridSpec {
    pub fn new(
        x_min: f64,
        y_min: f64,
        cell_size: f64,
        width: usize,
        height: usize,
        channels: usize,
    ) -> Result<GridSpec, GeometryError> {
        let spec = GridSpec { x_min, y_min, cell_size, width, height, channels };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid centred on the ego vehicle.
    pub fn centered(half_extent: f64, cell_size: f64, channels: usize) -> Result<GridSpec, GeometryError> {
        let n = math::round(2.0 * half_extent / cell_size) as usize;
        GridSpec::new(-half_extent, -half_extent, cell_size, n, n, channels)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::BadGrid("width and height must be >= 1"));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(GeometryError::BadGrid("cell_size must be positive"));
        }
        if !self.x_min.is_finite() || !self.y_min.is_finite() {
            return Err(GeometryError::BadGrid("origin must be finite"));
        }
        Ok(())
    }

    pub fn with_channels(&self, channels: usize) -> GridSpec {
        GridSpec { channels, ..*self }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Metric centre of a cell.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_min + (col as f64 + 0.5) * self.cell_size,
            self.y_min + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Continuous (col, row) coordinate whose integer points are cell centres.
    #[inline]
    pub fn to_continuous(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.x_min) / self.cell_size - 0.5,
            (y - self.y_min) / self.cell_size - 0.5,
        ]
    }

    /// Cell containing a metric location, if inside the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = math::floor((x - self.x_min) / self.cell_size);
        let cy = math::floor((y - self.y_min) / self.cell_size);
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some((cy as usize, cx as usize))
    }

    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size == other.cell_size
            && self.x_min == other.x_min
            && self.y_min == other.y_min
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("transform has an out-of-plane component")]
    OutOfPlane,
    #[error("matrix is not a rigid transform")]
    NotRigid,
    #[error("invalid grid: {0}")]
    BadGrid(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn assert_close(a: &Mat4, b: &Mat4, tol: f64) {
        let d = a.max_abs_diff(b);
        assert!(d < tol, "max diff {d} >= {tol}\n{a:?}\n{b:?}");
    }

    #[test]
    fn compose_examples() {
        assert_eq!(Pose::IDENTITY.compose(&Pose::IDENTITY), Pose::IDENTITY);
        let p = Pose::translation(1.0, 0.0, 0.0).compose(&Pose::translation(0.0, 2.0, 0.0));
        assert_eq!(p, Pose::translation(1.0, 2.0, 0.0));
        // rotZ(90) * translate(1,0,0): origin -> R*(1,0,0) = (0,1,0)
        let p = Pose::rot_z(FRAC_PI_2).compose(&Pose::translation(1.0, 0.0, 0.0));
        let o = p.matrix().apply([0.0, 0.0, 0.0]);
        assert!((o[0]).abs() < 1e-15 && (o[1] - 1.0).abs() < 1e-15 && o[2] == 0.0);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Pose::IDENTITY.invert(), Pose::IDENTITY);
        assert_eq!(Pose::translation(3.0, -1.0, 0.0).invert(), Pose::translation(-3.0, 1.0, 0.0));
        let p = Pose::rot_z(30f64.to_radians()).compose(&Pose::translation(1.0, 0.0, 0.0));
        assert_close(p.compose(&p.invert()).matrix(), &Mat4::IDENTITY, 1e-12);
        assert_close(p.invert().compose(&p).matrix(), &Mat4::IDENTITY, 1e-12);
    }

    #[test]
    fn relative_pose_examples() {
        let a = Pose::planar(4.0, -2.0, 0.3, 0.7);
        assert_close(relative_pose(&a, &a).matrix(), &Mat4::IDENTITY, 1e-12);
        let r = relative_pose(&Pose::translation(1.0, 0.0, 0.0), &Pose::IDENTITY);
        assert_close(r.matrix(), &Mat4::translation(-1.0, 0.0, 0.0), 1e-15);
        let r = relative_pose(&Pose::rot_z(FRAC_PI_2), &Pose::IDENTITY);
        assert_close(r.matrix(), &Mat4::rot_z(-FRAC_PI_2), 1e-15);
    }

    #[test]
    fn augmented_relative_pose_examples() {
        let cur = Pose::planar(1.0, 2.0, 0.0, 0.4);
        let last = Pose::planar(0.0, 1.5, 0.1, 0.1);
        let plain = relative_pose(&cur, &last);
        let aug = augmented_relative_pose(&cur, &last, &AugTransform::IDENTITY);
        assert_close(aug.matrix(), plain.matrix(), 1e-12);

        let flip = AugTransform { flip: Flip::X, ..AugTransform::IDENTITY };
        let r = augmented_relative_pose(&cur, &cur, &flip);
        assert_close(r.matrix(), &Mat4::IDENTITY, 1e-12);

        let rot = AugTransform { rotation_z: FRAC_PI_2, ..AugTransform::IDENTITY };
        let r = augmented_relative_pose(&Pose::translation(1.0, 0.0, 0.0), &Pose::IDENTITY, &rot);
        assert_close(r.matrix(), &Mat4::translation(0.0, -1.0, 0.0), 1e-12);
    }

    #[test]
    fn flip_is_involution_and_scale_uniform() {
        for flip in [Flip::None, Flip::X, Flip::Y] {
            let a = AugTransform { flip, ..AugTransform::IDENTITY };
            assert_eq!(a.flip_matrix() * a.flip_matrix(), Mat4::IDENTITY);
        }
        let a = AugTransform { scale: 1.03, ..AugTransform::IDENTITY };
        assert_eq!(a.scale_matrix(), Mat4::diag(1.03, 1.03, 1.03));
        // x-axis flip negates y
        let a = AugTransform { flip: Flip::X, ..AugTransform::IDENTITY };
        assert_eq!(a.matrix().apply([1.0, 2.0, 3.0]), [1.0, -2.0, 3.0]);
        let a = AugTransform { flip: Flip::Y, ..AugTransform::IDENTITY };
        assert_eq!(a.matrix().apply([1.0, 2.0, 3.0]), [-1.0, 2.0, 3.0]);
    }

    #[test]
    fn apply_to_points_examples() {
        let mut pts = [LidarPoint::new(1.0, 2.0, 3.0, 0.4)];
        apply_to_points(&Mat4::IDENTITY, &mut pts);
        assert_eq!((pts[0].x, pts[0].y, pts[0].z), (1.0, 2.0, 3.0));
        apply_to_points(&Mat4::translation(0.0, 0.0, 5.0), &mut pts);
        assert_eq!((pts[0].x, pts[0].y, pts[0].z), (1.0, 2.0, 8.0));
        assert_eq!(pts[0].intensity, 0.4);
        let mut pts = [LidarPoint { dt: -0.3, ..LidarPoint::new(1.0, 0.0, 0.0, 0.0) }];
        apply_to_points(&Mat4::rot_z(FRAC_PI_2), &mut pts);
        assert!(pts[0].x.abs() < 1e-12 && (pts[0].y - 1.0).abs() < 1e-12 && pts[0].z.abs() < 1e-12);
        assert_eq!(pts[0].dt, -0.3);
    }

    #[test]
    fn se2_examples() {
        assert_eq!(se2_of(&Mat4::IDENTITY).unwrap(), Se2::IDENTITY);
        let th = 0.6;
        let p = Pose::rot_z(th).compose(&Pose::translation(2.0, -1.0, 0.0));
        let s = se2_of(p.matrix()).unwrap();
        // translation block of R * T(a,b) is R*(a,b)
        let (c, sn) = (th.cos(), th.sin());
        assert!((s.rot[0][0] - c).abs() < 1e-15 && (s.rot[1][0] - sn).abs() < 1e-15);
        assert!((s.t[0] - (2.0 * c + sn)).abs() < 1e-12);
        assert!((s.t[1] - (2.0 * sn - c)).abs() < 1e-12);
        assert_eq!(se2_of(&Mat4::rot_x(10f64.to_radians())), Err(GeometryError::OutOfPlane));
        // reflections are not planar rotations
        assert!(se2_of(&Mat4::diag(1.0, -1.0, 1.0)).is_err());
        // uniform scale is accepted
        assert!(se2_of(&(Mat4::diag(1.05, 1.05, 1.05) * Mat4::rot_z(0.3))).is_ok());
    }

    #[test]
    fn se2_inverse_and_compose() {
        let a = se2_of(Pose::planar(1.0, 2.0, 0.0, 0.3).matrix()).unwrap();
        let b = se2_of(Pose::planar(-0.5, 4.0, 0.0, -1.1).matrix()).unwrap();
        let id = a.compose(&a.inverse());
        assert!((id.rot[0][0] - 1.0).abs() < 1e-12 && id.t[0].abs() < 1e-12 && id.t[1].abs() < 1e-12);
        let ab = se2_of(Pose::planar(1.0, 2.0, 0.0, 0.3).compose(&Pose::planar(-0.5, 4.0, 0.0, -1.1)).matrix())
            .unwrap();
        let c = a.compose(&b);
        assert!((ab.t[0] - c.t[0]).abs() < 1e-12 && (ab.rot[1][0] - c.rot[1][0]).abs() < 1e-12);
    }

    #[test]
    fn pose_bytes_round_trip() {
        let p = Pose::planar(1.5, -2.25, 0.125, 1.0);
        assert_eq!(Pose::from_le_bytes(&p.to_le_bytes()), p);
        assert!(Pose::from_matrix(*p.matrix()).is_ok());
        assert!(Pose::from_matrix(Mat4::diag(2.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn grid_spec_cells() {
        let g = GridSpec::centered(8.0, 1.0, 3).unwrap();
        assert_eq!((g.width, g.height), (16, 16));
        assert_eq!(g.cell_of(-8.0, -8.0), Some((0, 0)));
        assert_eq!(g.cell_of(7.99, 0.1), Some((8, 15)));
        assert_eq!(g.cell_of(8.0, 0.0), None);
        assert_eq!(g.cell_center(0, 0), [-7.5, -7.5]);
        assert_eq!(g.to_continuous(-7.5, -6.5), [0.0, 1.0]);
        assert!(GridSpec::new(0.0, 0.0, 0.0, 1, 1, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, 1.0, 0, 1, 1).is_err());
    }
}
