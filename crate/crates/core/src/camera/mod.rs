//! Pinhole cameras, z-buffer rasterization, depth maps and static texture unprojection.
//!
//! Conventions: camera space is x right, y down, z forward; `x_cam = R x_world + t`.
//! The center of pixel `(i, j)` sits at continuous image coordinate `(i + 0.5, j + 0.5)`.
//! Depth is camera-space z, not ray length.

mod depth;
mod io;
mod raster;
mod texture;

pub use depth::{DepthMap, DepthSample};
pub use io::{read_cameras, read_pfm_color, read_png, write_cameras, write_pfm_color, write_png, CameraDoc};
pub use raster::{
    point_visibility, rasterize, rasterize_shaded, vertex_visibility, RasterBuffers, DEFAULT_VISIBILITY_EPS,
};
pub use texture::{unproject_texture, StaticTexture};

use nalgebra::Matrix2x3;

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec2, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vec2,
    pub depth: f64,
    /// Set when the point is not strictly in front of the camera.
    pub behind: bool,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if ortho > 1e-6 || rotation.determinant() < 0.0 {
            return Err(Error::invalid("camera rotation is not a proper rotation"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera image must be non-empty"));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::invalid("look_at up vector is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Camera::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, r, -(r * eye), width, height)
    }

    /// Camera center in world coordinates.
    pub fn origin(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let c = self.to_camera(p);
        let behind = c.z <= 0.0;
        let z = if behind { f64::NAN } else { c.z };
        Projection {
            pixel: Vec2::new(self.fx * c.x / z + self.cx, self.fy * c.y / z + self.cy),
            depth: c.z,
            behind,
        }
    }

    /// World point at image coordinate `pixel` and camera-space depth `depth`.
    pub fn unproject(&self, pixel: Vec2, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::invalid(format!("unproject needs positive depth, got {depth}")));
        }
        let c = Vec3::new((pixel.x - self.cx) / self.fx * depth, (pixel.y - self.cy) / self.fy * depth, depth);
        Ok(self.rotation.transpose() * (c - self.translation))
    }

    /// Derivative of the image coordinate with respect to the world point.
    pub fn projection_jacobian(&self, p: &Vec3) -> Matrix2x3<f64> {
        let c = self.to_camera(p);
        let iz = 1.0 / c.z;
        let jc = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * c.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * c.y * iz * iz,
        );
        jc * self.rotation
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }

    /// Normal-alignment score `dir(o -> anchor) . (-normal)`.
    pub fn view_score(&self, anchor: &Vec3, normal: &Vec3) -> Result<f64> {
        let d = anchor - self.origin();
        let len = d.norm();
        if len < 1e-12 {
            return Err(Error::invalid("anchor coincides with the camera origin"));
        }
        Ok((d / len).dot(&(-normal)))
    }

    /// Size of one pixel on a fronto-parallel surface at `depth`.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        depth / self.fx.min(self.fy)
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        ColorImage {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample at image coordinate `p` (pixel centers at half-integers), edge-clamped.
    pub fn sample(&self, p: Vec2) -> [f64; 3] {
        let (x, y) = (p.x - 0.5, p.y - 0.5);
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let cl = |v: f64, n: usize| (v as isize).clamp(0, n as isize - 1) as usize;
        let (xa, xb) = (cl(x0, self.width), cl(x0 + 1.0, self.width));
        let (ya, yb) = (cl(y0, self.height), cl(y0 + 1.0, self.height));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = self.get(xa, ya)[c] * (1.0 - fx) + self.get(xb, ya)[c] * fx;
            let bot = self.get(xa, yb)[c] * (1.0 - fx) + self.get(xb, yb)[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Quantizes to 8 bits and back, the precision PNG storage keeps.
    pub fn quantized(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() / 255.0))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
        let r = Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
        Camera::new(
            rng.random_range(50.0..300.0),
            rng.random_range(50.0..300.0),
            rng.random_range(20.0..80.0),
            rng.random_range(20.0..80.0),
            r.into_inner(),
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            100,
            100,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = Camera::new(100.0, 100.0, 32.0, 24.0, Mat3::identity(), Vec3::zeros(), 64, 48).unwrap();
        let p = cam.project(&Vec3::new(0.0, 0.0, 3.0));
        assert_eq!(p.pixel, Vec2::new(32.0, 24.0));
        assert_eq!(p.depth, 3.0);
        assert!(!p.behind);
        let unit = Camera::new(1.0, 1.0, 5.0, 5.0, Mat3::identity(), Vec3::zeros(), 10, 10).unwrap();
        let q = unit.project(&Vec3::new(1.0, 0.0, 2.0));
        assert_eq!(q.pixel, Vec2::new(5.0 + 0.5, 5.0));
        assert!(cam.project(&Vec3::new(0.0, 0.0, -1.0)).behind);
    }

    #[test]
    fn unproject_principal_point_lies_on_axis() {
        let cam = Camera::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::y(), 120.0, 64, 64).unwrap();
        let p = cam.unproject(Vec2::new(cam.cx, cam.cy), 2.0).unwrap();
        let axis = -Vec3::new(1.0, 2.0, 3.0).normalize();
        assert!((p - (cam.origin() + axis * 2.0)).norm() < 1e-12);
        assert!(cam.unproject(Vec2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn unproject_matches_inverse_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let px = Vec2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            let d = rng.random_range(0.1..10.0);
            // full 4x4 projective matrix K[R|t] extended with a depth row
            let mut k = Matrix4::identity();
            k[(0, 0)] = cam.fx;
            k[(1, 1)] = cam.fy;
            k[(0, 2)] = cam.cx;
            k[(1, 2)] = cam.cy;
            let mut e = Matrix4::identity();
            e.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
            e.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.translation);
            let inv = (k * e).try_inverse().unwrap();
            let w = inv * Vector4::new(px.x * d, px.y * d, d, 1.0);
            let p = cam.unproject(px, d).unwrap();
            assert!((p - w.xyz() / w.w).norm() < 1e-9);
            let back = cam.project(&p);
            assert!((back.pixel - px).norm() < 1e-6 && (back.depth - d).abs() < 1e-6);
        }
    }

    #[test]
    fn view_scores() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), Vec3::y(), 100.0, 32, 32).unwrap();
        let n = Vec3::new(0.0, 0.0, -1.0);
        assert!((cam.view_score(&Vec3::zeros(), &n).unwrap() - 1.0).abs() < 1e-12);
        assert!(cam.view_score(&Vec3::new(0.0, 0.0, -2.0), &n).is_err());
        let side = Camera::look_at(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::y(), 100.0, 32, 32).unwrap();
        assert!(side.view_score(&Vec3::zeros(), &n).unwrap().abs() < 1e-12);
        let back = Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 100.0, 32, 32).unwrap();
        assert!(back.view_score(&Vec3::zeros(), &n).unwrap() < 0.0);
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = Camera::look_at(Vec3::new(0.3, -0.2, -2.0), Vec3::zeros(), Vec3::y(), 150.0, 64, 64).unwrap();
        let _ = &mut rng;
        let p = Vec3::new(0.1, 0.2, 0.05);
        let j = cam.projection_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let d = (cam.project(&(p + e)).pixel - cam.project(&(p - e)).pixel) / (2.0 * h);
            assert!((d.x - j[(0, k)]).abs() < 1e-5 && (d.y - j[(1, k)]).abs() < 1e-5);
        }
    }
}
