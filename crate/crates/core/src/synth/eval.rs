use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SyntheticScene;
use crate::camera::{rasterize, unproject_texture, ColorImage, StaticTexture};
use crate::deformation::DeformationState;
use crate::error::{Error, Result};
use crate::gaussian::{image_metrics, pose_texture, render_splats, texel_skinning, GaussianTexture, TexelAnchors};
use crate::math::Vec3;
use crate::pipeline::{chamfer_average, frame_geometry, SurfaceSampler};

/// Subdivision level of the surface samples used for the reported Chamfer.
const EVAL_SAMPLE_LEVEL: usize = 3;

/// One row of the metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    /// Mean over frames of the two-sided average squared distance, m².
    pub chamfer: f64,
    /// Mean distance between corresponding points and their GT positions, m.
    pub drift: f64,
    /// Held-out view PSNR (dB) and SSIM, averaged over frames and cameras.
    pub psnr: f64,
    pub ssim: f64,
}

/// Chamfer and vertex drift of per-frame posed vertices against the GT.
pub fn evaluate_positions(scene: &SyntheticScene, posed: &[Vec<Vec3>]) -> Result<(f64, f64)> {
    let nf = scene.frame_count();
    if posed.len() != nf {
        return Err(Error::dim("posed frames", nf, posed.len()));
    }
    let mesh = &scene.model.mesh;
    let sampler = SurfaceSampler::new(&mesh.faces, mesh.vertex_count(), EVAL_SAMPLE_LEVEL);
    let per: Vec<Result<(f64, f64)>> = (0..nf)
        .into_par_iter()
        .map(|f| {
            let (p, g) = (&posed[f], &scene.gt_positions[f]);
            if p.len() != g.len() {
                return Err(Error::dim("posed vertices", g.len(), p.len()));
            }
            let c = chamfer_average(&sampler.apply(p), &sampler.apply(g))?;
            let d = p.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>() / p.len().max(1) as f64;
            Ok((c, d))
        })
        .collect();
    let (mut c, mut d) = (0.0, 0.0);
    for r in per {
        let (a, b) = r?;
        c += a;
        d += b;
    }
    Ok((c / nf as f64, d / nf as f64))
}

/// Template renders at every frame and held-out camera. With no texture the
/// procedural GT pattern is used.
pub fn render_template_views(
    scene: &SyntheticScene,
    posed: &[Vec<Vec3>],
    texture: Option<&StaticTexture>,
) -> Vec<Vec<ColorImage>> {
    let held = scene.held_out_cameras();
    (0..posed.len())
        .into_par_iter()
        .map(|f| {
            held.iter()
                .map(|&c| {
                    let cam = &scene.cameras[c];
                    match texture {
                        Some(t) => rasterize(&scene.model.mesh, &posed[f], cam, Some(t)).color.quantized(),
                        None => scene.render_pattern(&posed[f], cam).0,
                    }
                })
                .collect()
        })
        .collect()
}

fn held_out_quality(scene: &SyntheticScene, renders: &[Vec<ColorImage>]) -> Result<(f64, f64)> {
    let held = scene.held_out_cameras();
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for (f, row) in renders.iter().enumerate() {
        for (img, &c) in row.iter().zip(&held) {
            let m = image_metrics(img, &scene.images[f][c])?;
            p += m.psnr;
            s += m.ssim;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no held-out views to evaluate"));
    }
    Ok((p / n as f64, s / n as f64))
}

/// Metrics of a geometry-only result. Appearance is the static texture
/// unprojected from frame 0 at the result's own geometry, so drift shows up as
/// blur and misregistration on later frames.
pub fn evaluate_states(
    scene: &SyntheticScene,
    stage: &str,
    states: &[DeformationState],
    texture_resolution: usize,
    visibility_eps: f64,
) -> Result<StageMetrics> {
    let geo = frame_geometry(scene, states)?;
    let posed: Vec<Vec<Vec3>> = geo.into_iter().map(|g| g.1 .0).collect();
    let (chamfer, drift) = evaluate_positions(scene, &posed)?;
    let train = scene.training_cameras();
    let cams: Vec<_> = train.iter().map(|&c| scene.cameras[c].clone()).collect();
    let imgs: Vec<_> = train.iter().map(|&c| scene.images[0][c].clone()).collect();
    let tex = unproject_texture(&scene.model.mesh, &posed[0], &cams, &imgs, texture_resolution, visibility_eps)?;
    let (psnr, ssim) = held_out_quality(scene, &render_template_views(scene, &posed, Some(&tex)))?;
    Ok(StageMetrics {
        stage: stage.to_string(),
        chamfer,
        drift,
        psnr,
        ssim,
    })
}

/// Splat renders of every frame at the held-out cameras.
pub fn render_splat_views(
    scene: &SyntheticScene,
    states: &[DeformationState],
    tex: &GaussianTexture,
    anchors: &TexelAnchors,
    offsets: &[Vec<Vec3>],
) -> Result<Vec<Vec<ColorImage>>> {
    let geo = frame_geometry(scene, states)?;
    let held = scene.held_out_cameras();
    (0..scene.frame_count())
        .map(|f| {
            let tr = texel_skinning(anchors, &scene.model, &scene.poses[f])?;
            let splats = pose_texture(tex, anchors, &scene.model.mesh, &geo[f].0, &tr, offsets.get(f).map(|o| o.as_slice()))?;
            Ok(held
                .par_iter()
                .map(|&c| render_splats(&splats, &scene.cameras[c]).image.quantized())
                .collect())
        })
        .collect()
}

/// Metrics of a texel result. Chamfer is that of the underlying template; drift
/// is measured per texel between the posed splat mean and the GT surface point
/// with the same barycentric anchor.
pub fn evaluate_splats(
    scene: &SyntheticScene,
    stage: &str,
    states: &[DeformationState],
    tex: &GaussianTexture,
    anchors: &TexelAnchors,
    offsets: &[Vec<Vec3>],
) -> Result<StageMetrics> {
    let geo = frame_geometry(scene, states)?;
    let posed: Vec<Vec<Vec3>> = geo.iter().map(|g| g.1 .0.clone()).collect();
    let (chamfer, _) = evaluate_positions(scene, &posed)?;
    let mesh = &scene.model.mesh;
    let mut drift = 0.0;
    let mut count = 0usize;
    for f in 0..scene.frame_count() {
        let tr = texel_skinning(anchors, &scene.model, &scene.poses[f])?;
        let splats = pose_texture(tex, anchors, mesh, &geo[f].0, &tr, offsets.get(f).map(|o| o.as_slice()))?;
        let gt = anchors.base_positions(mesh, &scene.gt_positions[f]);
        drift += splats.means.iter().zip(&gt).map(|(a, b)| (a - b).norm()).sum::<f64>();
        count += gt.len();
    }
    let drift = if count > 0 { drift / count as f64 } else { 0.0 };
    let (psnr, ssim) = held_out_quality(scene, &render_splat_views(scene, states, tex, anchors, offsets)?)?;
    Ok(StageMetrics {
        stage: stage.to_string(),
        chamfer,
        drift,
        psnr,
        ssim,
    })
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[StageMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<StageMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
