//! Core 3D geometry: point clouds, SE(3) transforms, neighbor queries and
//! random pose sampling.
//!
//! Euler angles use the intrinsic Z-Y-X convention everywhere. The metric
//! report repeats that convention so downstream numbers are unambiguous.

mod knn;

pub use knn::{knn, knn_all};

use crate::scalar::{cast, Real};
use crate::{Error, Result};
use rand::Rng;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

/// 3-vector over the working scalar type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    pub fn x(&self) -> T {
        self.0[0]
    }

    pub fn y(&self) -> T {
        self.0[1]
    }

    pub fn z(&self) -> T {
        self.0[2]
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn cross(&self, other: &Self) -> Self {
        Vec3([
            self.0[1] * other.0[2] - self.0[2] * other.0[1],
            self.0[2] * other.0[0] - self.0[0] * other.0[2],
            self.0[0] * other.0[1] - self.0[1] * other.0[0],
        ])
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn dist_sq(&self, other: &Self) -> T {
        (*self - *other).norm_sq()
    }

    pub fn scale(&self, s: T) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() {
            Some(self.scale(T::one() / n))
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Vec3([
            self.0[0] + rhs.0[0],
            self.0[1] + rhs.0[1],
            self.0[2] + rhs.0[2],
        ])
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Vec3([
            self.0[0] - rhs.0[0],
            self.0[1] - rhs.0[1],
            self.0[2] - rhs.0[2],
        ])
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

// ---------------------------------------------------------------------------
// Mat3
// ---------------------------------------------------------------------------

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Mat3(m)
    }

    pub fn zero() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|c| c.is_finite())
    }

    /// Max absolute deviation of `self^T self` from the identity.
    pub fn orthonormality_error(&self) -> T {
        let g = self.transpose() * *self;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }

    /// Rotation about z by `angle` radians.
    pub fn rot_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3([
            [c, -s, T::zero()],
            [s, c, T::zero()],
            [T::zero(), T::zero(), T::one()],
        ])
    }

    /// Rotation about y by `angle` radians.
    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3([
            [c, T::zero(), s],
            [T::zero(), T::one(), T::zero()],
            [-s, T::zero(), c],
        ])
    }

    /// Rotation about x by `angle` radians.
    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3([
            [T::one(), T::zero(), T::zero()],
            [T::zero(), c, -s],
            [T::zero(), s, c],
        ])
    }

    /// Intrinsic Z-Y-X rotation: `Rz(z) * Ry(y) * Rx(x)`, angles in radians.
    pub fn from_euler_zyx(z: T, y: T, x: T) -> Self {
        Self::rot_z(z) * Self::rot_y(y) * Self::rot_x(x)
    }

    /// Decomposes into intrinsic Z-Y-X angles (radians), inverse of
    /// [`Mat3::from_euler_zyx`] away from the gimbal lock at |pitch| = 90 deg.
    pub fn euler_zyx(&self) -> (T, T, T) {
        let m = &self.0;
        let sy = -m[2][0];
        let sy = sy.min(T::one()).max(-T::one());
        let y = sy.asin();
        let cy = (T::one() - sy * sy).sqrt();
        if cy > cast(1e-12) {
            let z = m[1][0].atan2(m[0][0]);
            let x = m[2][1].atan2(m[2][2]);
            (z, y, x)
        } else {
            // Gimbal lock: only z +/- x observable; pin x = 0.
            let z = (-m[0][1]).atan2(m[1][1]);
            (z, y, T::zero())
        }
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = T::zero();
                for (k, rhs_row) in rhs.0.iter().enumerate() {
                    acc = acc + self.0[i][k] * rhs_row[j];
                }
                out[i][j] = acc;
            }
        }
        Mat3(out)
    }
}

// ---------------------------------------------------------------------------
// RigidTransform
// ---------------------------------------------------------------------------

/// SE(3) element: rotation plus translation, applied as `R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Checks `R^T R = I` and `det R = +1` within `tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        self.rotation.is_finite()
            && self.translation.is_finite()
            && self.rotation.orthonormality_error() <= tol
            && (self.rotation.det() - T::one()).abs() <= tol
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Applies `self` after `first`: `(self . first)(x) = self(first(x))`.
    pub fn compose(&self, first: &Self) -> Self {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation.mul_vec(&first.translation) + self.translation,
        }
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.mul_vec(&self.translation),
        }
    }

    /// Row-major `[r00..r22, t0, t1, t2]`, the text serialization order.
    pub fn to_row_major(&self) -> [T; 12] {
        let m = &self.rotation.0;
        [
            m[0][0],
            m[0][1],
            m[0][2],
            m[1][0],
            m[1][1],
            m[1][2],
            m[2][0],
            m[2][1],
            m[2][2],
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }

    pub fn from_row_major(v: &[T; 12]) -> Self {
        RigidTransform {
            rotation: Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]),
            translation: Vec3([v[9], v[10], v[11]]),
        }
    }
}

/// Transformed copy of a cloud, preserving point order.
pub fn apply_transform<T: Real>(t: &RigidTransform<T>, cloud: &PointCloud<T>) -> PointCloud<T> {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
    }
}

/// Random pose: Euler angles uniform in `[0, rot_range_deg]` degrees
/// (intrinsic Z-Y-X, drawn z then y then x), translation components uniform
/// in `[-trans_range, trans_range]`.
pub fn random_transform<T: Real, R: Rng>(
    rot_range_deg: f64,
    trans_range: f64,
    rng: &mut R,
) -> Result<RigidTransform<T>> {
    if !(0.0..=180.0).contains(&rot_range_deg) {
        return Err(Error::Parameter(format!(
            "rot_range_deg must be in [0, 180], got {rot_range_deg}"
        )));
    }
    if trans_range < 0.0 || !trans_range.is_finite() {
        return Err(Error::Parameter(format!(
            "trans_range must be >= 0, got {trans_range}"
        )));
    }
    let deg = std::f64::consts::PI / 180.0;
    let z = rng.random::<f64>() * rot_range_deg * deg;
    let y = rng.random::<f64>() * rot_range_deg * deg;
    let x = rng.random::<f64>() * rot_range_deg * deg;
    let mut t = [0.0f64; 3];
    for c in t.iter_mut() {
        *c = (rng.random::<f64>() * 2.0 - 1.0) * trans_range;
    }
    Ok(RigidTransform {
        rotation: Mat3::from_euler_zyx(cast(z), cast(y), cast(x)),
        translation: Vec3([cast(t[0]), cast(t[1]), cast(t[2])]),
    })
}

// ---------------------------------------------------------------------------
// PointCloud
// ---------------------------------------------------------------------------

/// Ordered set of 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("point cloud must not be empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Parameter(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3<T> {
        let mut acc = Vec3::zero();
        for p in &self.points {
            acc = acc + *p;
        }
        acc.scale(T::one() / cast(self.len() as f64))
    }

    pub fn max_norm(&self) -> T {
        self.points
            .iter()
            .map(|p| p.norm())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_transform_eq(a: &RigidTransform<f64>, b: &RigidTransform<f64>, tol: f64) {
        for (x, y) in a.to_row_major().iter().zip(b.to_row_major().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = tol);
        }
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let cloud = PointCloud::new(vec![
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(-0.5, 0.0, 0.25),
        ])
        .unwrap();
        let out = apply_transform(&RigidTransform::identity(), &cloud);
        assert_eq!(out, cloud);
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::new(
            Mat3::rot_z(std::f64::consts::FRAC_PI_2),
            Vec3::zero(),
        );
        let p = t.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p.x(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.z(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn inverse_roundtrip_on_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t: RigidTransform<f64> = random_transform(45.0, 0.5, &mut rng).unwrap();
        let cloud = PointCloud::new(
            (0..16)
                .map(|_| {
                    Vec3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    )
                })
                .collect(),
        )
        .unwrap();
        let back = apply_transform(&t.invert(), &apply_transform(&t, &cloud));
        for (a, b) in back.points.iter().zip(cloud.points.iter()) {
            assert!(a.dist(b) < 1e-12);
        }
    }

    #[test]
    fn compose_matches_pointwise_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t1: RigidTransform<f64> = random_transform(90.0, 1.0, &mut rng).unwrap();
        let t2: RigidTransform<f64> = random_transform(90.0, 1.0, &mut rng).unwrap();
        let c = t2.compose(&t1);
        for _ in 0..10 {
            let p = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let via_compose = c.apply(&p);
            let via_seq = t2.apply(&t1.apply(&p));
            assert!(via_compose.dist(&via_seq) < 1e-12);
        }
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: RigidTransform<f64> = random_transform(120.0, 2.0, &mut rng).unwrap();
        assert_transform_eq(&RigidTransform::identity().compose(&t), &t, 0.0);
        assert_transform_eq(
            &t.compose(&t.invert()),
            &RigidTransform::identity(),
            1e-12,
        );
    }

    #[test]
    fn invert_formula() {
        let t = RigidTransform::new(Mat3::identity(), Vec3::new(1.0, -2.0, 3.0));
        let inv = t.invert();
        assert_transform_eq(
            &inv,
            &RigidTransform::new(Mat3::identity(), Vec3::new(-1.0, 2.0, -3.0)),
            0.0,
        );
        assert_transform_eq(
            &RigidTransform::<f64>::identity().invert(),
            &RigidTransform::identity(),
            0.0,
        );
    }

    #[test]
    fn random_transform_ranges_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let zero: RigidTransform<f64> = random_transform(0.0, 0.0, &mut rng).unwrap();
        assert_transform_eq(&zero, &RigidTransform::identity(), 0.0);

        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: RigidTransform<f64> = random_transform(45.0, 0.5, &mut rng).unwrap();
            assert!(t.is_valid(1e-9));
            let (z, y, x) = t.rotation.euler_zyx();
            for ang in [z, y, x] {
                let deg = ang.to_degrees();
                assert!(
                    (-1e-9..=45.0 + 1e-9).contains(&deg),
                    "angle {deg} out of [0,45]"
                );
            }
            for k in 0..3 {
                assert!(t.translation[k].abs() <= 0.5);
            }
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            let t2: RigidTransform<f64> = random_transform(45.0, 0.5, &mut rng2).unwrap();
            assert_transform_eq(&t, &t2, 0.0);
        }
    }

    #[test]
    fn random_transform_rejects_bad_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_transform::<f64, _>(181.0, 0.5, &mut rng).is_err());
        assert!(random_transform::<f64, _>(-1.0, 0.5, &mut rng).is_err());
        assert!(random_transform::<f64, _>(45.0, -0.1, &mut rng).is_err());
    }

    #[test]
    fn euler_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let z = (rng.random::<f64>() - 0.5) * std::f64::consts::PI * 1.9;
            let y = (rng.random::<f64>() - 0.5) * 1.9 * std::f64::consts::FRAC_PI_2;
            let x = (rng.random::<f64>() - 0.5) * std::f64::consts::PI * 1.9;
            let r = Mat3::from_euler_zyx(z, y, x);
            let (z2, y2, x2) = r.euler_zyx();
            assert_abs_diff_eq!(z, z2, epsilon = 1e-9);
            assert_abs_diff_eq!(y, y2, epsilon = 1e-9);
            assert_abs_diff_eq!(x, x2, epsilon = 1e-9);
        }
    }

    #[test]
    fn rigidity_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: RigidTransform<f64> = random_transform(180.0, 1.0, &mut rng).unwrap();
        let cloud = PointCloud::new(
            (0..24)
                .map(|_| {
                    Vec3::new(
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                    )
                })
                .collect(),
        )
        .unwrap();
        let moved = apply_transform(&t, &cloud);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = cloud.points[i].dist(&cloud.points[j]);
                let after = moved.points[i].dist(&moved.points[j]);
                assert_abs_diff_eq!(before, after, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn point_cloud_rejects_invalid_input() {
        assert!(PointCloud::<f64>::new(vec![]).is_err());
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }
}
