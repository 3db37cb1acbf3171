//! Small linear-algebra helpers shared by the deformation, skinning and splat code.

use nalgebra::{Matrix3, Quaternion, Vector2, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotation matrix of a quaternion using the polynomial form.
///
/// The quaternion is not normalized here; callers that need a proper rotation
/// normalize first. Keeping the polynomial form makes the derivative below exact.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotation_matrix`] with respect to `(w, x, y, z)`.
pub fn rotation_matrix_derivatives(q: &Quaternion<f64>) -> [Mat3; 4] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let dw = Mat3::new(
        0.0,
        -2.0 * z,
        2.0 * y,
        2.0 * z,
        0.0,
        -2.0 * x,
        -2.0 * y,
        2.0 * x,
        0.0,
    );
    let dx = Mat3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dy = Mat3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dz = Mat3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    [dw, dx, dy, dz]
}

pub fn quat_to_array(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_from_array(a: [f64; 4]) -> Quaternion<f64> {
    Quaternion::new(a[0], a[1], a[2], a[3])
}

/// Normalizes a quaternion, returning the unit quaternion and the original norm.
pub fn normalize_quat(q: &Quaternion<f64>) -> (Quaternion<f64>, f64) {
    let n = q.norm();
    if n == 0.0 {
        (Quaternion::identity(), 0.0)
    } else {
        (q / n, n)
    }
}

/// Pulls a gradient with respect to `q / |q|` back to `q`.
pub fn normalize_quat_backward(q: &Quaternion<f64>, grad_unit: [f64; 4]) -> [f64; 4] {
    let (u, n) = normalize_quat(q);
    if n == 0.0 {
        return [0.0; 4];
    }
    let u = quat_to_array(&u);
    let dot: f64 = u.iter().zip(grad_unit.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (grad_unit[k] - u[k] * dot) / n;
    }
    out
}

/// Contracts `dL/dR` with the four rotation-matrix derivatives.
pub fn contract_rotation_grad(q: &Quaternion<f64>, grad_r: &Mat3) -> [f64; 4] {
    let d = rotation_matrix_derivatives(q);
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = d[k].component_mul(grad_r).sum();
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Orthonormal tangent frame `(t, b, n)` whose third axis is `n`.
pub fn frame_from_normal(n: &Vec3, hint: &Vec3) -> Mat3 {
    let n = n.normalize();
    let mut t = hint - n * n.dot(hint);
    if t.norm() < 1e-9 {
        let alt = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        t = alt - n * n.dot(&alt);
    }
    let t = t.normalize();
    let b = n.cross(&t);
    Mat3::from_columns(&[t, b, n])
}
