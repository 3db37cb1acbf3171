//! Gaussian textures: one 3D Gaussian splat per covered texel of a UV grid.
//!
//! Each texel stores 59 raw parameters (offset 3, rotation 4, log-scale 3, opacity
//! logit 1, degree-3 spherical harmonics 48); with the derived base position from
//! the deformed mesh this is 62 channels per texel.

mod io;
mod metrics;
mod pose;
mod render;
mod sh;
mod texmesh;
mod upsample;

pub use io::{read_offsets, read_texture, write_offsets, write_texture, TextureHeader};
pub use metrics::{image_metrics, l1_loss, psnr, ssim, ssim_loss, ImageMetrics};
pub use pose::{pose_texture, pose_texture_backward, texel_skinning, SplatGrad, SplatSet, TextureGrad};
pub use render::{render_splats, render_splats_backward, RenderOutput};
pub use sh::{sh_basis, SH_C0, SH_COEFFS};
pub use texmesh::{texels_to_mesh, TexelMesh};
pub use upsample::{upsample_mask, upsample_texture};

use nalgebra::{Rotation3, UnitQuaternion};

use crate::camera::StaticTexture;
use crate::math::{frame_from_normal, logit, sigmoid, Vec2, Vec3};
use crate::mesh::{barycentric_lookup, face_normal, TemplateMesh, UvHit};

pub const OFFSET: usize = 0;
pub const ROTATION: usize = 3;
pub const LOG_SCALE: usize = 7;
pub const OPACITY: usize = 10;
pub const SH: usize = 11;
pub const STORED_CHANNELS: usize = 59;
pub const BASE_POSITION_CHANNELS: usize = 3;
pub const TOTAL_CHANNELS: usize = STORED_CHANNELS + BASE_POSITION_CHANNELS;
pub const DEFAULT_OFFSET_LIMIT: f64 = 0.03;

const _: () = assert!(TOTAL_CHANNELS == 62);
const _: () = assert!(SH + 3 * SH_COEFFS == STORED_CHANNELS);

pub const CHANNEL_NAMES: [&str; 5] = ["offset:3", "rotation_wxyz:4", "log_scale:3", "opacity_logit:1", "sh_rgb:48"];

/// `(sigmoid(raw) - 0.5) * 2 * limit` per component.
pub fn clamp_offset(raw: &Vec3, limit: f64) -> Vec3 {
    raw.map(|r| (sigmoid(r) - 0.5) * 2.0 * limit)
}

/// Componentwise derivative of [`clamp_offset`].
pub fn clamp_offset_derivative(raw: &Vec3, limit: f64) -> Vec3 {
    raw.map(|r| {
        let s = sigmoid(r);
        2.0 * limit * s * (1.0 - s)
    })
}

/// Dense `R x R` texel grid; uncovered texels keep zero parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTexture {
    pub resolution: usize,
    pub mask: Vec<bool>,
    pub params: Vec<f64>,
    pub offset_limit: f64,
}

impl GaussianTexture {
    pub fn empty(resolution: usize) -> Self {
        GaussianTexture {
            resolution,
            mask: vec![false; resolution * resolution],
            params: vec![0.0; resolution * resolution * STORED_CHANNELS],
            offset_limit: DEFAULT_OFFSET_LIMIT,
        }
    }

    pub fn texel(&self, k: usize) -> &[f64] {
        &self.params[k * STORED_CHANNELS..(k + 1) * STORED_CHANNELS]
    }

    pub fn texel_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.params[k * STORED_CHANNELS..(k + 1) * STORED_CHANNELS]
    }

    pub fn covered(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.mask[k]).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn raw_offset(&self, k: usize) -> Vec3 {
        let t = self.texel(k);
        Vec3::new(t[OFFSET], t[OFFSET + 1], t[OFFSET + 2])
    }

    /// Raw offsets of all covered texels in ascending texel order.
    pub fn raw_offsets(&self) -> Vec<Vec3> {
        self.covered().iter().map(|&k| self.raw_offset(k)).collect()
    }

    pub fn opacity(&self, k: usize) -> f64 {
        sigmoid(self.texel(k)[OPACITY])
    }

    /// Initializes splats flat on the surface: tangent-aligned rotation, footprint
    /// matched to the texel size, colors from `colors` when given.
    pub fn initialize(
        anchors: &TexelAnchors,
        mesh: &TemplateMesh,
        canonical: &[Vec3],
        colors: Option<&StaticTexture>,
        opacity: f64,
    ) -> Self {
        let r = anchors.resolution;
        let mut tex = GaussianTexture::empty(r);
        for (k, hit) in anchors.hits.iter().enumerate() {
            let Some(hit) = hit else { continue };
            tex.mask[k] = true;
            let f = mesh.faces[hit.face];
            let n = face_normal(canonical, f);
            let (p0, p1, p2) = (canonical[f[0]], canonical[f[1]], canonical[f[2]]);
            let (t0, t1, t2) = (mesh.corner_uv(hit.face, 0), mesh.corner_uv(hit.face, 1), mesh.corner_uv(hit.face, 2));
            // surface tangents per unit u and v from the face's UV parametrization
            let (e1, e2) = (p1 - p0, p2 - p0);
            let (d1, d2) = (t1 - t0, t2 - t0);
            let det = d1.x * d2.y - d1.y * d2.x;
            let (du, dv) = if det.abs() > 1e-300 {
                ((e1 * d2.y - e2 * d1.y) / det, (e2 * d1.x - e1 * d2.x) / det)
            } else {
                (e1, e2)
            };
            let frame = if n.norm() > 0.0 { frame_from_normal(&n, &du) } else { crate::math::Mat3::identity() };
            let su = frame.column(0).dot(&du).abs() / r as f64;
            let sv = frame.column(1).dot(&dv).abs() / r as f64;
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(frame));
            let color = colors
                .map(|c| c.sample(StaticTexture::texel_center(r, k % r, k / r)))
                .unwrap_or([0.5; 3]);
            let t = tex.texel_mut(k);
            t[ROTATION..ROTATION + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
            t[LOG_SCALE] = (0.6 * su).max(1e-6).ln();
            t[LOG_SCALE + 1] = (0.6 * sv).max(1e-6).ln();
            t[LOG_SCALE + 2] = (0.1 * su.min(sv)).max(1e-7).ln();
            t[OPACITY] = logit(opacity);
            for c in 0..3 {
                t[SH + c] = (color[c] - 0.5) / SH_C0;
            }
        }
        tex
    }
}

/// Per-texel `(face, barycentric)` anchor on the template, `None` where no UV
/// triangle covers the texel center.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelAnchors {
    pub resolution: usize,
    pub hits: Vec<Option<UvHit>>,
}

impl TexelAnchors {
    pub fn mask(&self) -> Vec<bool> {
        self.hits.iter().map(|h| h.is_some()).collect()
    }

    pub fn covered(&self) -> Vec<usize> {
        (0..self.hits.len()).filter(|&k| self.hits[k].is_some()).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }

    /// Barycentric base positions of covered texels, ascending texel order.
    pub fn base_positions(&self, mesh: &TemplateMesh, positions: &[Vec3]) -> Vec<Vec3> {
        self.hits
            .iter()
            .flatten()
            .map(|h| mesh.interpolate(positions, h.face, h.bary))
            .collect()
    }

    /// Barycentrically interpolated unit normals of covered texels.
    pub fn base_normals(&self, mesh: &TemplateMesh, vertex_normals: &[Vec3]) -> Vec<Vec3> {
        self.hits
            .iter()
            .flatten()
            .map(|h| {
                let n = mesh.interpolate(vertex_normals, h.face, h.bary);
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect()
    }

    /// Skin weights of covered texels, blended from the face corners.
    pub fn skin_weights(&self, mesh: &TemplateMesh) -> Vec<Vec<(usize, f64)>> {
        self.hits
            .iter()
            .flatten()
            .map(|h| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for (c, &v) in mesh.faces[h.face].iter().enumerate() {
                    for &(j, w) in &mesh.skin_weights[v] {
                        match acc.iter_mut().find(|(jj, _)| *jj == j) {
                            Some(e) => e.1 += w * h.bary[c],
                            None => acc.push((j, w * h.bary[c])),
                        }
                    }
                }
                acc.sort_by_key(|e| e.0);
                acc
            })
            .collect()
    }

    /// Copy with coverage limited to `mask`.
    pub fn restricted(&self, mask: &[bool]) -> TexelAnchors {
        TexelAnchors {
            resolution: self.resolution,
            hits: self.hits.iter().zip(mask).map(|(h, &m)| if m { *h } else { None }).collect(),
        }
    }

    /// UV center of each covered texel.
    pub fn uv_centers(&self) -> Vec<Vec2> {
        self.covered()
            .iter()
            .map(|&k| StaticTexture::texel_center(self.resolution, k % self.resolution, k / self.resolution))
            .collect()
    }
}

pub fn init_texel_anchors(mesh: &TemplateMesh, resolution: usize) -> TexelAnchors {
    let hits = (0..resolution * resolution)
        .map(|k| barycentric_lookup(mesh, StaticTexture::texel_center(resolution, k % resolution, k / resolution)))
        .collect();
    TexelAnchors { resolution, hits }
}
