use rayon::prelude::*;

use super::{point_visibility, rasterize_shaded, Camera, ColorImage};
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};
use crate::mesh::{barycentric_lookup, compute_vertex_normals, face_normal, TemplateMesh, VertexField};

/// UV-space RGB texture with a validity mask; texel `(i, j)` covers
/// `u in [i/R, (i+1)/R)`, `v in [j/R, (j+1)/R)` and is stored at `j * R + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticTexture {
    pub resolution: usize,
    pub colors: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl StaticTexture {
    pub fn texel_center(resolution: usize, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) / resolution as f64, (j as f64 + 0.5) / resolution as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Bilinear sample over valid texels only; falls back to the nearest valid
    /// stencil texel, then to mid-gray.
    pub fn sample(&self, uv: Vec2) -> [f64; 3] {
        let r = self.resolution;
        let x = (uv.x * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let y = (uv.y * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(r - 1), (y0 + 1).min(r - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let st = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for &(i, j, w) in &st {
            if self.valid[j * r + i] && w > 0.0 {
                for c in 0..3 {
                    acc[c] += w * self.colors[j * r + i][c];
                }
                wsum += w;
            }
        }
        if wsum > 1e-12 {
            return acc.map(|a| a / wsum);
        }
        st.iter()
            .filter(|(i, j, _)| self.valid[j * r + i])
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(i, j, _)| self.colors[j * r + i])
            .unwrap_or([0.5; 3])
    }
}

/// Builds a texture from frame-0 geometry by sampling, for each covered texel, the
/// image of the visible camera that sees its surface point most frontally.
pub fn unproject_texture(
    mesh: &TemplateMesh,
    positions: &[Vec3],
    cams: &[Camera],
    images: &[ColorImage],
    resolution: usize,
    eps: f64,
) -> Result<StaticTexture> {
    if cams.is_empty() {
        return Err(Error::invalid("texture unprojection needs at least one camera"));
    }
    if cams.len() != images.len() {
        return Err(Error::dim("images", cams.len(), images.len()));
    }
    let normals = compute_vertex_normals(mesh, &VertexField(positions.to_vec()))?;
    let depths: Vec<_> = cams
        .iter()
        .map(|c| rasterize_shaded(&mesh.faces, positions, c, None).depth)
        .collect();
    let texels: Vec<(usize, usize)> = (0..resolution).flat_map(|j| (0..resolution).map(move |i| (i, j))).collect();
    let result: Vec<Option<[f64; 3]>> = texels
        .par_iter()
        .map(|&(i, j)| {
            let uv = StaticTexture::texel_center(resolution, i, j);
            let hit = barycentric_lookup(mesh, uv)?;
            let p = mesh.interpolate(positions, hit.face, hit.bary);
            let f = mesh.faces[hit.face];
            let mut n = normals.normals[f[0]] * hit.bary[0] + normals.normals[f[1]] * hit.bary[1] + normals.normals[f[2]] * hit.bary[2];
            if n.norm() < 1e-12 {
                n = face_normal(positions, f);
            }
            let n = n.normalize();
            let mut best: Option<(usize, f64)> = None;
            for (c, cam) in cams.iter().enumerate() {
                if !point_visibility(std::slice::from_ref(&p), cam, &depths[c], eps)[0] {
                    continue;
                }
                let Ok(s) = cam.view_score(&p, &n) else { continue };
                if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            let (c, _) = best?;
            Some(images[c].sample(cams[c].project(&p).pixel))
        })
        .collect();
    Ok(StaticTexture {
        resolution,
        valid: result.iter().map(|r| r.is_some()).collect(),
        colors: result.into_iter().map(|r| r.unwrap_or([0.0; 3])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    /// Plane z = 2 spanning x, y in [-1, 1] with uv = ((x+1)/2, (y+1)/2).
    fn plane() -> TemplateMesh {
        let v = vec![
            Vec3::new(-1.0, -1.0, 2.0),
            Vec3::new(1.0, -1.0, 2.0),
            Vec3::new(1.0, 1.0, 2.0),
            Vec3::new(-1.0, 1.0, 2.0),
        ];
        let uv = v.iter().map(|p| Vec2::new((p.x + 1.0) / 2.0, (p.y + 1.0) / 2.0)).collect();
        // wound so the normal faces -z, toward a camera at the origin
        let f = vec![[0, 2, 1], [0, 3, 2]];
        TemplateMesh::new(v, f.clone(), uv, f, vec![vec![(0, 1.0)]; 4]).unwrap()
    }

    #[test]
    fn frontal_plane_texture_is_resampled_image() {
        let m = plane();
        let cam = Camera::new(16.0, 16.0, 16.0, 16.0, Mat3::identity(), Vec3::zeros(), 32, 32).unwrap();
        let img = ColorImage {
            width: 32,
            height: 32,
            pixels: (0..32 * 32).map(|k| [(k % 32) as f64 / 31.0, (k / 32) as f64 / 31.0, 0.25]).collect(),
        };
        let tex = unproject_texture(&m, &m.vertices, &[cam.clone()], &[img.clone()], 8, 1e-3).unwrap();
        assert_eq!(tex.valid_count(), 64);
        for j in 0..8 {
            for i in 0..8 {
                let uv = StaticTexture::texel_center(8, i, j);
                let p = Vec3::new(uv.x * 2.0 - 1.0, uv.y * 2.0 - 1.0, 2.0);
                let expect = img.sample(cam.project(&p).pixel);
                let got = tex.colors[j * 8 + i];
                assert!((0..3).all(|c| (got[c] - expect[c]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn invisible_texels_are_invalid_and_frontal_view_wins() {
        let m = plane();
        let back = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, 2.0), Vec3::y(), 16.0, 32, 32).unwrap();
        let img = ColorImage::new(32, 32, [1.0, 0.0, 0.0]);
        let tex = unproject_texture(&m, &m.vertices, &[back], &[img.clone()], 4, 1e-3).unwrap();
        assert_eq!(tex.valid_count(), 0);

        let frontal = Camera::look_at(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.0), Vec3::y(), 16.0, 32, 32).unwrap();
        let grazing = Camera::look_at(Vec3::new(3.0, 0.0, 1.7), Vec3::new(0.0, 0.0, 2.0), Vec3::y(), 16.0, 32, 32).unwrap();
        let green = ColorImage::new(32, 32, [0.0, 1.0, 0.0]);
        let tex = unproject_texture(&m, &m.vertices, &[grazing, frontal], &[img, green], 4, 1e-3).unwrap();
        let center = tex.colors[2 * 4 + 1];
        assert_eq!(center, [0.0, 1.0, 0.0]);
    }
}
