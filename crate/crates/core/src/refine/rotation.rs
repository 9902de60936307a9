// SPDX-License-Identifier: Apache-2.0

use nalgebra::Matrix3;

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// Intrinsic Z-Y-X Euler angles `(yaw about z, pitch about y, roll about x)`:
/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_zyx(angles: [f64; 3]) -> Matrix3<f64> {
    rz(angles[0]) * ry(angles[1]) * rx(angles[2])
}

/// `dR / d(angle_k)` for each of the three angles.
pub fn euler_zyx_derivatives(angles: [f64; 3]) -> [Matrix3<f64>; 3] {
    let [a, b, c] = angles;
    [
        drz(a) * ry(b) * rx(c),
        rz(a) * dry(b) * rx(c),
        rz(a) * ry(b) * drx(c),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn closed_forms() {
        assert_eq!(euler_zyx([0.0; 3]), Matrix3::identity());
        let r = euler_zyx([FRAC_PI_2, 0.0, 0.0]);
        assert!((r * Vec3::x() - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let a = [0.3, -1.1, 2.0];
        let d = euler_zyx_derivatives(a);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = a;
            let mut m = a;
            p[k] += h;
            m[k] -= h;
            let fd = (euler_zyx(p) - euler_zyx(m)) / (2.0 * h);
            assert!((fd - d[k]).amax() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn always_a_rotation(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
            let r = euler_zyx([a, b, c]);
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
