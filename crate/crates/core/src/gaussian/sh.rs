use crate::math::Vec3;

pub const SH_COEFFS: usize = 16;
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real spherical harmonics up to degree 3 at unit direction `d`.
pub fn sh_basis(d: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// RGB from coefficient-major SH (`sh[k * 3 + c]`), offset by 0.5 and clamped
/// below at zero. Also returns which channels were clamped.
pub(crate) fn sh_color(sh: &[f64], basis: &[f64; SH_COEFFS]) -> ([f64; 3], [bool; 3]) {
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += b * sh[k * 3 + c];
        }
    }
    let clamped = rgb.map(|v| v < 0.0);
    (rgb.map(|v| v.max(0.0)), clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal_by_quadrature() {
        // Fibonacci sphere quadrature
        let n = 20000;
        let mut gram = [[0.0; SH_COEFFS]; SH_COEFFS];
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let b = sh_basis(&Vec3::new(r * phi.cos(), r * phi.sin(), z));
            for a in 0..SH_COEFFS {
                for c in 0..SH_COEFFS {
                    gram[a][c] += b[a] * b[c] * 4.0 * std::f64::consts::PI / n as f64;
                }
            }
        }
        for a in 0..SH_COEFFS {
            for c in 0..SH_COEFFS {
                let e = if a == c { 1.0 } else { 0.0 };
                assert!((gram[a][c] - e).abs() < 2e-3, "{a} {c} {}", gram[a][c]);
            }
        }
    }
}
