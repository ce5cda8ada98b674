//! Small vector helpers shared by the energy and frame code.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

pub fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
    a * b.transpose()
}

/// Signed angle from `a` to `b` about the unit `axis`, in (-pi, pi].
pub fn signed_angle(a: &Vec3, b: &Vec3, axis: &Vec3) -> f64 {
    let w = a.cross(b);
    let angle = w.norm().atan2(a.dot(b));
    if w.dot(axis) < 0.0 {
        -angle
    } else {
        angle
    }
}

/// Rodrigues rotation of `v` about the unit `axis` by `angle`.
pub fn rotate_about(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// A deterministic unit vector perpendicular to `t`: take the coordinate
/// axis with the smallest |component| along `t` and project it out.
pub fn perp_unit(t: &Vec3) -> Vec3 {
    let a = [t.x.abs(), t.y.abs(), t.z.abs()];
    let k = if a[0] <= a[1] && a[0] <= a[2] {
        0
    } else if a[1] <= a[2] {
        1
    } else {
        2
    };
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    (e - t * t[k]).normalize()
}

/// Tangents are antiparallel: the transport rotation is not unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AntiparallelTangents;

/// Rotate `v` by the minimal rotation taking unit tangent `t_from` to
/// `t_to`. Signals when the tangents are (numerically) antiparallel; use
/// [`parallel_transport_robust`] when that case must be handled.
pub fn parallel_transport(
    v: &Vec3,
    t_from: &Vec3,
    t_to: &Vec3,
) -> Result<Vec3, AntiparallelTangents> {
    let b = t_from.cross(t_to);
    let nb = b.norm();
    if nb < 1e-12 {
        return if t_from.dot(t_to) > 0.0 {
            Ok(*v)
        } else {
            Err(AntiparallelTangents)
        };
    }
    // Re-orthogonalize the axis against both tangents before use; the naive
    // cross product loses digits when the tangents are nearly aligned.
    let mut b = b / nb;
    b -= t_from * b.dot(t_from);
    b -= t_to * b.dot(t_to);
    let b = b.normalize();
    let n_from = t_from.cross(&b);
    let n_to = t_to.cross(&b);
    Ok(t_to * v.dot(t_from) + n_to * v.dot(&n_from) + b * v.dot(&b))
}

/// Parallel transport that survives antiparallel tangents by passing
/// through an intermediate tangent perpendicular to `t_from`.
pub fn parallel_transport_robust(v: &Vec3, t_from: &Vec3, t_to: &Vec3) -> Vec3 {
    match parallel_transport(v, t_from, t_to) {
        Ok(out) => out,
        Err(AntiparallelTangents) => {
            let mid = perp_unit(t_from);
            let half = parallel_transport(v, t_from, &mid).expect("perpendicular tangent");
            parallel_transport(&half, &mid, t_to).expect("perpendicular tangent")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transport_identity() {
        let t = Vec3::new(0.0, 0.0, 1.0);
        let v = Vec3::new(0.3, -0.2, 0.0);
        assert_eq!(parallel_transport(&v, &t, &t).unwrap(), v);
    }

    #[test]
    fn transport_x_to_y() {
        let x = Vec3::x();
        let y = Vec3::y();
        // Rotation axis is z: z is fixed, x maps to y.
        assert_relative_eq!(
            parallel_transport(&Vec3::z(), &x, &y).unwrap(),
            Vec3::z(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            parallel_transport(&Vec3::x(), &x, &y).unwrap(),
            Vec3::y(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn transport_is_isometric() {
        let t0 = Vec3::new(1.0, 0.2, -0.4).normalize();
        let t1 = Vec3::new(-0.3, 1.0, 0.5).normalize();
        let v = Vec3::new(0.7, -1.3, 2.1);
        let w = parallel_transport(&v, &t0, &t1).unwrap();
        assert_relative_eq!(w.norm(), v.norm(), epsilon = 1e-12);
    }

    #[test]
    fn transport_preserves_tangent_component() {
        let t0 = Vec3::new(0.9, -0.1, 0.42).normalize();
        let t1 = Vec3::new(0.1, 0.8, -0.59).normalize();
        let v = Vec3::new(-0.4, 0.33, 1.9);
        let w = parallel_transport(&v, &t0, &t1).unwrap();
        assert_relative_eq!(w.dot(&t1), v.dot(&t0), epsilon = 1e-12);
    }

    #[test]
    fn antiparallel_signals() {
        let t = Vec3::x();
        assert!(parallel_transport(&Vec3::y(), &t, &(-t)).is_err());
        // The robust path still returns an isometry.
        let w = parallel_transport_robust(&Vec3::y(), &t, &(-t));
        assert_relative_eq!(w.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn octant_holonomy() {
        // Transporting around the x -> y -> z -> x octant loop rotates
        // vectors about the tangent by the enclosed solid angle, pi/2.
        let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
        let v0 = Vec3::z();
        let v = parallel_transport(&v0, &x, &y).unwrap();
        let v = parallel_transport(&v, &y, &z).unwrap();
        let v = parallel_transport(&v, &z, &x).unwrap();
        let expect = rotate_about(&v0, &x, std::f64::consts::FRAC_PI_2);
        let got_angle = signed_angle(&v0, &v, &x);
        assert_relative_eq!(got_angle.abs(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        // Orientation: traversing x -> y -> z encloses the octant with its
        // outward side on the left, giving a +pi/2 rotation about +x.
        assert_relative_eq!(v, expect, epsilon = 1e-12);
    }

    #[test]
    fn perp_unit_is_perp() {
        for t in [
            Vec3::x(),
            Vec3::new(0.3, -0.9, 0.1).normalize(),
            Vec3::new(0.0, 0.0, -1.0),
        ] {
            let p = perp_unit(&t);
            assert_relative_eq!(p.dot(&t), 0.0, epsilon = 1e-14);
            assert_relative_eq!(p.norm(), 1.0, epsilon = 1e-14);
        }
    }
}
