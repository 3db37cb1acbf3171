use rayon::prelude::*;

use super::{Camera, ColorImage, DepthMap, StaticTexture};
use crate::math::{Vec2, Vec3};
use crate::mesh::TemplateMesh;

pub const DEFAULT_VISIBILITY_EPS: f64 = 1e-3;
const NEAR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct RasterBuffers {
    pub depth: DepthMap,
    /// Face per pixel, `-1` for background.
    pub face_id: Vec<i32>,
    /// Perspective-correct barycentrics of the visible face.
    pub bary: Vec<[f64; 3]>,
    pub color: ColorImage,
}

impl RasterBuffers {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    /// Face and barycentrics under image coordinate `p`, if covered.
    pub fn hit_at(&self, p: Vec2) -> Option<(usize, [f64; 3])> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let (x, y) = (p.x as usize, p.y as usize);
        if x >= self.width() || y >= self.height() {
            return None;
        }
        let i = y * self.width() + x;
        (self.face_id[i] >= 0).then(|| (self.face_id[i] as usize, self.bary[i]))
    }
}

pub type Shader<'a> = &'a (dyn Fn(usize, [f64; 3]) -> [f64; 3] + Sync);

/// Z-buffered rasterization; with a texture, pixels take its bilinear color at
/// the interpolated UV.
pub fn rasterize(mesh: &TemplateMesh, positions: &[Vec3], cam: &Camera, texture: Option<&StaticTexture>) -> RasterBuffers {
    match texture {
        Some(tex) => {
            let shade = |f: usize, b: [f64; 3]| {
                let uv = mesh.corner_uv(f, 0) * b[0] + mesh.corner_uv(f, 1) * b[1] + mesh.corner_uv(f, 2) * b[2];
                tex.sample(uv)
            };
            rasterize_shaded(&mesh.faces, positions, cam, Some(&shade))
        }
        None => rasterize_shaded(&mesh.faces, positions, cam, None),
    }
}

/// Rasterizes triangles with an optional per-fragment shader. Ties in depth go to
/// the lower face id; triangles crossing the near plane are skipped.
pub fn rasterize_shaded(faces: &[[usize; 3]], positions: &[Vec3], cam: &Camera, shader: Option<Shader<'_>>) -> RasterBuffers {
    let (w, h) = (cam.width, cam.height);
    let cam_pts: Vec<Vec3> = positions.iter().map(|p| cam.to_camera(p)).collect();
    let screen: Vec<Vec2> = cam_pts
        .iter()
        .map(|c| Vec2::new(cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy))
        .collect();
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (fi, f) in faces.iter().enumerate() {
        if f.iter().any(|&v| !(cam_pts[v].z > NEAR)) {
            continue;
        }
        let ys = f.map(|v| screen[v].y);
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y0 = (lo - 0.5).ceil().max(0.0);
        let y1 = (hi - 0.5).floor().min(h as f64 - 1.0);
        if !(y0 <= y1) {
            continue;
        }
        for row in rows.iter_mut().take(y1 as usize + 1).skip(y0 as usize) {
            row.push(fi as u32);
        }
    }
    let per_row: Vec<(Vec<f32>, Vec<i32>, Vec<[f64; 3]>)> = rows
        .par_iter()
        .enumerate()
        .map(|(y, bucket)| {
            let mut depth = vec![f64::INFINITY; w];
            let mut ids = vec![-1i32; w];
            let mut bary = vec![[0.0; 3]; w];
            let py = y as f64 + 0.5;
            for &fi in bucket {
                let f = faces[fi as usize];
                let (p0, p1, p2) = (screen[f[0]], screen[f[1]], screen[f[2]]);
                let area = edge(p0, p1, p2);
                if area == 0.0 || !area.is_finite() {
                    continue;
                }
                let xs = [p0.x, p1.x, p2.x];
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let x0 = (lo - 0.5).ceil().max(0.0) as usize;
                let x1 = (hi - 0.5).floor().min(w as f64 - 1.0);
                if x1 < 0.0 {
                    continue;
                }
                let iz = [1.0 / cam_pts[f[0]].z, 1.0 / cam_pts[f[1]].z, 1.0 / cam_pts[f[2]].z];
                for x in x0..=(x1 as usize) {
                    let p = Vec2::new(x as f64 + 0.5, py);
                    let b = [edge(p1, p2, p) / area, edge(p2, p0, p) / area, edge(p0, p1, p) / area];
                    if b.iter().any(|&v| v < -1e-12) {
                        continue;
                    }
                    let s = b[0] * iz[0] + b[1] * iz[1] + b[2] * iz[2];
                    let z = 1.0 / s;
                    if z < depth[x] {
                        depth[x] = z;
                        ids[x] = fi as i32;
                        bary[x] = [b[0] * iz[0] / s, b[1] * iz[1] / s, b[2] * iz[2] / s];
                    }
                }
            }
            (depth.into_iter().map(|d| d as f32).collect(), ids, bary)
        })
        .collect();
    let mut out = RasterBuffers {
        depth: DepthMap::background(w, h),
        face_id: Vec::with_capacity(w * h),
        bary: Vec::with_capacity(w * h),
        color: ColorImage::new(w, h, [0.0; 3]),
    };
    out.depth.data.clear();
    for (d, ids, b) in per_row {
        out.depth.data.extend(d);
        out.face_id.extend(ids);
        out.bary.extend(b);
    }
    if let Some(shade) = shader {
        out.color.pixels = out
            .face_id
            .par_iter()
            .zip(&out.bary)
            .map(|(&f, &b)| if f >= 0 { shade(f as usize, b) } else { [0.0; 3] })
            .collect();
    }
    out
}

fn edge(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Visible iff inside the image, in front of the camera and no deeper than the
/// farthest foreground depth of the surrounding bilinear stencil plus `eps`.
pub fn point_visibility(points: &[Vec3], cam: &Camera, depth: &DepthMap, eps: f64) -> Vec<bool> {
    points
        .par_iter()
        .map(|p| {
            let pr = cam.project(p);
            if pr.behind || !cam.contains(&pr.pixel) {
                return false;
            }
            match depth.stencil_max(pr.pixel) {
                Some(d) => pr.depth <= d + eps,
                None => true,
            }
        })
        .collect()
}

pub fn vertex_visibility(positions: &[Vec3], cam: &Camera, depth: &DepthMap, eps: f64) -> Vec<bool> {
    point_visibility(positions, cam, depth, eps)
}
