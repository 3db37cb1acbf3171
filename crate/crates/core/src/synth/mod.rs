//! Synthetic scenes with known ground-truth correspondences, evaluation and the
//! end-to-end driver used by the command line.
//!
//! A scene is a rigged template, a periodic pose sequence and per-frame
//! ground-truth surfaces that share the template's triangulation. Each GT frame
//! slides the template tangentially, adds pose-driven wrinkles and a seeded
//! per-frame random field along the normal, then skins the result. Images are
//! rendered from the GT surfaces with a procedural UV pattern.

mod eval;
mod io;
mod run;

pub use eval::{
    evaluate_positions, evaluate_splats, evaluate_states, read_metrics_csv, render_splat_views, render_template_views,
    write_metrics_csv,
    StageMetrics,
};
pub use io::{load_scene, save_scene, SceneFile};
pub use run::{align_scene, evaluate_run, export_run, RunManifest, RunOutputs};

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{rasterize_shaded, Camera, ColorImage, DepthMap};
use crate::deformation::{axis_angle_quat, DeformationState, TemplateModel};
use crate::error::{Error, Result};
use crate::kinematics::{apply_blended, SkeletalPose, Skeleton};
use crate::math::{Vec2, Vec3};
use crate::mesh::{TemplateMesh, VertexField};
use crate::tracking::query_rng;

pub const PRESETS: [&str; 3] = ["cylinder-skirt", "bent-plane-cape", "sphere-shirt"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CylinderSkirt,
    BentPlaneCape,
    SphereShirt,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder-skirt" => Ok(Preset::CylinderSkirt),
            "bent-plane-cape" => Ok(Preset::BentPlaneCape),
            "sphere-shirt" => Ok(Preset::SphereShirt),
            _ => Err(Error::UnknownPreset {
                given: s.to_string(),
                available: PRESETS.join(", "),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Checker,
    Stripe,
    Glyph,
}

const CYL_RADIUS: f64 = 0.3;
const CYL_HEIGHT: f64 = 0.6;
const CAPE_SIZE: f64 = 0.8;
const SPHERE_RADIUS: f64 = 0.3;
const SPHERE_LAT: f64 = 70.0 * PI / 180.0;
const UV_MARGIN: f64 = 0.01;

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::CylinderSkirt => PRESETS[0],
            Preset::BentPlaneCape => PRESETS[1],
            Preset::SphereShirt => PRESETS[2],
        }
    }

    fn periodic(self) -> bool {
        !matches!(self, Preset::BentPlaneCape)
    }

    fn default_segments(self) -> [usize; 2] {
        match self {
            Preset::CylinderSkirt => [32, 12],
            Preset::BentPlaneCape => [20, 20],
            Preset::SphereShirt => [32, 14],
        }
    }

    /// Rest surface at parameters `(u, v)`; `S_u x S_v` is the outward normal.
    fn point(self, u: f64, v: f64) -> Vec3 {
        match self {
            Preset::CylinderSkirt => {
                let t = -2.0 * PI * u;
                Vec3::new(CYL_RADIUS * t.cos(), CYL_HEIGHT * v, CYL_RADIUS * t.sin())
            }
            Preset::BentPlaneCape => {
                let x = CAPE_SIZE * (u - 0.5);
                Vec3::new(x, CAPE_SIZE * (v - 0.5), -0.3 * x * x)
            }
            Preset::SphereShirt => {
                let t = -2.0 * PI * u;
                let p = -SPHERE_LAT + 2.0 * SPHERE_LAT * v;
                SPHERE_RADIUS * Vec3::new(p.cos() * t.cos(), p.sin(), p.cos() * t.sin())
            }
        }
    }

    fn normal(self, u: f64, v: f64) -> Vec3 {
        let h = 1e-5;
        let su = self.point(u + h, v) - self.point(u - h, v);
        let sv = self.point(u, v + h) - self.point(u, v - h);
        su.cross(&sv).normalize()
    }

    /// Root position, chain direction and bone length of the skeleton.
    fn chain(self) -> (Vec3, Vec3, f64) {
        match self {
            Preset::CylinderSkirt => (Vec3::new(0.0, CYL_HEIGHT, 0.0), -Vec3::y(), 0.3),
            Preset::BentPlaneCape => (Vec3::new(0.0, 0.5 * CAPE_SIZE, 0.0), -Vec3::y(), 0.4),
            Preset::SphereShirt => (Vec3::new(0.0, -SPHERE_RADIUS, 0.0), Vec3::y(), 0.3),
        }
    }

    /// Distance from the attached boundary, 0 there and 1 at the free end.
    fn envelope(self, v: f64) -> f64 {
        match self {
            Preset::CylinderSkirt | Preset::BentPlaneCape => 1.0 - v,
            Preset::SphereShirt => v,
        }
    }

    /// Vertical offset of the ring cameras, alternating up and down. The sphere
    /// ring straddles both open rims so they are never seen edge-on only.
    fn camera_lift(self) -> f64 {
        match self {
            Preset::SphereShirt => 0.35,
            _ => 0.2,
        }
    }

    fn center(self) -> Vec3 {
        match self {
            Preset::CylinderSkirt => Vec3::new(0.0, 0.5 * CYL_HEIGHT, 0.0),
            _ => Vec3::zeros(),
        }
    }

    /// Angular frequencies available around the surface.
    fn modes_u(self) -> [f64; 3] {
        if self.periodic() {
            [2.0 * PI, 4.0 * PI, 6.0 * PI]
        } else {
            [PI, 2.0 * PI, 3.0 * PI]
        }
    }
}

/// Scene description; everything else is derived from it and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub preset: Preset,
    pub frames: usize,
    pub cameras: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Focal length as a multiple of the image size.
    pub focal_ratio: f64,
    pub camera_radius: f64,
    /// Grid segments around and along the surface; `[0, 0]` picks the preset default.
    pub segments: [usize; 2],
    /// Peak tangential slide, meters.
    pub slide_amplitude: f64,
    /// Peak pose-driven normal wrinkle, meters.
    pub wrinkle_amplitude: f64,
    /// Scale of the per-frame random normal field, meters.
    pub stochastic_amplitude: f64,
    /// Peak joint rotation, radians.
    pub pose_amplitude: f64,
    /// Pose period in frames.
    pub period: usize,
    pub pattern: Pattern,
    /// Cameras withheld from training; `None` picks two opposite ones.
    pub held_out: Option<Vec<usize>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            preset: Preset::CylinderSkirt,
            frames: 8,
            cameras: 8,
            seed: 0,
            image_size: 128,
            focal_ratio: 1.375,
            camera_radius: 1.6,
            segments: [0, 0],
            slide_amplitude: 0.035,
            wrinkle_amplitude: 0.01,
            stochastic_amplitude: 0.008,
            pose_amplitude: 0.25,
            period: 4,
            pattern: Pattern::Checker,
            held_out: None,
        }
    }
}

impl SceneConfig {
    pub fn preset(preset: Preset) -> Self {
        SceneConfig {
            preset,
            ..SceneConfig::default()
        }
    }

    pub fn segments(&self) -> [usize; 2] {
        if self.segments == [0, 0] {
            self.preset.default_segments()
        } else {
            self.segments
        }
    }

    pub fn held_out_cameras(&self) -> Vec<usize> {
        match &self.held_out {
            Some(h) => h.clone(),
            None if self.cameras >= 4 => vec![1, 1 + self.cameras / 2],
            None => Vec::new(),
        }
    }

    pub fn training_cameras(&self) -> Vec<usize> {
        let h = self.held_out_cameras();
        (0..self.cameras).filter(|c| !h.contains(c)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.cameras == 0 {
            return Err(Error::invalid("a scene needs at least one frame and one camera"));
        }
        let [nu, nv] = self.segments();
        if nu < 3 || nv < 1 {
            return Err(Error::invalid("surface grid needs at least 3x1 segments"));
        }
        if self.image_size < 16 {
            return Err(Error::invalid("image_size must be at least 16"));
        }
        if self.period == 0 {
            return Err(Error::invalid("pose period must be positive"));
        }
        let h = self.held_out_cameras();
        if h.iter().any(|&c| c >= self.cameras) {
            return Err(Error::invalid("held-out camera index out of range"));
        }
        if h.len() >= self.cameras {
            return Err(Error::invalid("at least one training camera is required"));
        }
        Ok(())
    }
}

/// A generated scene; GT surfaces share the template connectivity.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub model: TemplateModel,
    pub poses: Vec<SkeletalPose>,
    /// Surface parameters `(u, v)` of every template vertex.
    pub params: Vec<Vec2>,
    /// Unposed GT surfaces.
    pub gt_canonical: Vec<VertexField>,
    pub gt_positions: Vec<Vec<Vec3>>,
    pub cameras: Vec<Camera>,
    /// `[frame][camera]`
    pub images: Vec<Vec<ColorImage>>,
    /// `[frame][camera]`
    pub depths: Vec<Vec<DepthMap>>,
}

impl SyntheticScene {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn training_cameras(&self) -> Vec<usize> {
        self.config.training_cameras()
    }

    pub fn held_out_cameras(&self) -> Vec<usize> {
        self.config.held_out_cameras()
    }

    /// Per-vertex skinning transforms of every frame.
    pub fn pose_transforms(&self) -> Result<Vec<Vec<(crate::math::Mat3, Vec3)>>> {
        self.poses.iter().map(|p| self.model.pose_transforms(p)).collect()
    }

    /// Deformation states reproducing the GT surfaces exactly (through the
    /// per-vertex offsets).
    pub fn gt_states(&self) -> Vec<DeformationState> {
        self.gt_canonical
            .iter()
            .map(|c| {
                let mut s = DeformationState::for_model(&self.model);
                for ((d, g), r) in s.deltas.iter_mut().zip(c.iter()).zip(&self.model.mesh.vertices) {
                    *d = g - r;
                }
                s
            })
            .collect()
    }

    /// GT color under texture coordinate `uv`.
    pub fn pattern_color(&self, uv: Vec2) -> [f64; 3] {
        pattern_color(self.config.pattern, uv)
    }

    /// Renders a GT-style image of `positions` (template connectivity) with the
    /// procedural pattern; also returns the depth map.
    pub fn render_pattern(&self, positions: &[Vec3], cam: &Camera) -> (ColorImage, DepthMap) {
        render_pattern(&self.model.mesh, self.config.pattern, positions, cam)
    }
}

fn render_pattern(mesh: &TemplateMesh, pattern: Pattern, positions: &[Vec3], cam: &Camera) -> (ColorImage, DepthMap) {
    let shade = |f: usize, b: [f64; 3]| {
        let uv = mesh.corner_uv(f, 0) * b[0] + mesh.corner_uv(f, 1) * b[1] + mesh.corner_uv(f, 2) * b[2];
        pattern_color(pattern, uv)
    };
    let r = rasterize_shaded(&mesh.faces, positions, cam, Some(&shade));
    (r.color.quantized(), r.depth)
}

fn hash2(a: i64, b: i64) -> u64 {
    let mut z = (a as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (b as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z ^= z >> 29;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 32)
}

/// Procedural high-frequency pattern in UV space.
pub fn pattern_color(pattern: Pattern, uv: Vec2) -> [f64; 3] {
    const A: [f64; 3] = [0.92, 0.78, 0.28];
    const B: [f64; 3] = [0.12, 0.26, 0.62];
    let tint = |c: [f64; 3], t: f64| [c[0] * (0.8 + 0.2 * t), c[1], c[2] * (1.0 - 0.2 * t)];
    match pattern {
        Pattern::Checker => {
            let (a, b) = ((uv.x * 16.0).floor() as i64, (uv.y * 12.0).floor() as i64);
            tint(if (a + b).rem_euclid(2) == 0 { A } else { B }, uv.x)
        }
        Pattern::Stripe => {
            let s = 0.5 + 0.5 * (2.0 * PI * (14.0 * uv.x + 3.0 * uv.y)).sin();
            let c = [A[0] * s + B[0] * (1.0 - s), A[1] * s + B[1] * (1.0 - s), A[2] * s + B[2] * (1.0 - s)];
            tint(c, uv.y)
        }
        Pattern::Glyph => {
            let n = 10.0;
            let (cx, cy) = ((uv.x * n).floor() as i64, (uv.y * n).floor() as i64);
            let (fx, fy) = ((uv.x * n).fract(), (uv.y * n).fract());
            let bits = hash2(cx, cy);
            let (gx, gy) = ((fx * 3.0).floor() as u64, (fy * 3.0).floor() as u64);
            let on = (bits >> (gy * 3 + gx).min(8)) & 1 == 1;
            tint(if on { A } else { B }, ((cx + cy) & 1) as f64)
        }
    }
}

/// Smooth height-based skin weights along a joint chain.
fn chain_weights(p: &Vec3, root: &Vec3, axis: &Vec3, bone: f64, joints: usize) -> Vec<(usize, f64)> {
    let s = (p - root).dot(axis);
    let sigma = 0.4 * bone;
    let raw: Vec<f64> = (0..joints)
        .map(|k| {
            let c = (k as f64 + 0.5) * bone;
            (-(s - c).powi(2) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<(usize, f64)> = raw.iter().enumerate().map(|(k, &x)| (k, x / total)).filter(|x| x.1 >= 1e-3).collect();
    let t: f64 = w.iter().map(|x| x.1).sum();
    for x in &mut w {
        x.1 /= t;
    }
    w
}

/// Template mesh of a preset and the surface parameters of its vertices.
pub fn build_template(preset: Preset, segments: [usize; 2]) -> Result<(TemplateMesh, Vec<Vec2>, Skeleton)> {
    let [nu, nv] = segments;
    let cols = if preset.periodic() { nu } else { nu + 1 };
    let vid = |i: usize, j: usize| j * cols + if preset.periodic() { i % nu } else { i };
    let uid = |i: usize, j: usize| j * (nu + 1) + i;
    let mut params = Vec::new();
    let mut vertices = Vec::new();
    for j in 0..=nv {
        for i in 0..cols {
            let p = Vec2::new(i as f64 / nu as f64, j as f64 / nv as f64);
            params.push(p);
            vertices.push(preset.point(p.x, p.y));
        }
    }
    let mut uvs = Vec::new();
    for j in 0..=nv {
        for i in 0..=nu {
            let m = |t: f64| UV_MARGIN + (1.0 - 2.0 * UV_MARGIN) * t;
            uvs.push(Vec2::new(m(i as f64 / nu as f64), m(j as f64 / nv as f64)));
        }
    }
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            let (a, b, c, d) = ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1));
            for tri in [[a, b, c], [b, d, c]] {
                faces.push(tri.map(|(x, y)| vid(x, y)));
                face_uvs.push(tri.map(|(x, y)| uid(x, y)));
            }
        }
    }
    let (root, axis, bone) = preset.chain();
    let joints = 3;
    let skeleton = Skeleton::chain(joints, root, axis, bone);
    let skin = vertices.iter().map(|p| chain_weights(p, &root, &axis, bone, joints)).collect();
    let mesh = TemplateMesh::new(vertices, faces, uvs, face_uvs, skin)?;
    Ok((mesh, params, skeleton))
}

fn phase(cfg: &SceneConfig, f: usize) -> f64 {
    2.0 * PI * (f % cfg.period) as f64 / cfg.period as f64
}

/// Periodic pose of frame `f`.
pub fn pose_at(cfg: &SceneConfig, f: usize) -> SkeletalPose {
    let ph = phase(cfg, f);
    let a = cfg.pose_amplitude;
    let (_, axis, _) = cfg.preset.chain();
    let unit = |q| nalgebra::UnitQuaternion::from_quaternion(q);
    SkeletalPose {
        rotations: vec![
            unit(axis_angle_quat(&axis, 0.6 * a * ph.sin())),
            unit(axis_angle_quat(&Vec3::x(), a * (ph + 0.7).sin())),
            unit(axis_angle_quat(&Vec3::z(), 0.8 * a * (ph + 1.9).sin())),
        ],
        root_translation: Vec3::new(0.03 * ph.sin(), 0.01 * (2.0 * ph).sin(), 0.02 * ph.cos()),
    }
}

/// Unposed GT surface of frame `f`.
fn gt_canonical(cfg: &SceneConfig, params: &[Vec2], f: usize) -> Vec<Vec3> {
    let preset = cfg.preset;
    let ph = phase(cfg, f);
    let mut rng = query_rng(cfg.seed, &[f as u64, 0x57]);
    let n01 = Normal::new(0.0, 1.0).expect("unit normal");
    let modes = preset.modes_u();
    // per-frame random field: a few low-frequency modes in u times a ramp in v
    let coef: Vec<[f64; 3]> = (0..modes.len())
        .map(|m| {
            let s = cfg.stochastic_amplitude / (m as f64 + 1.0);
            [s * n01.sample(&mut rng), s * n01.sample(&mut rng), s * n01.sample(&mut rng)]
        })
        .collect();
    let slide_noise = if cfg.stochastic_amplitude > 0.0 { 0.3 * n01.sample(&mut rng) } else { 0.0 };
    let slide_gain = (ph + 0.5).sin() + slide_noise;
    params
        .iter()
        .map(|p| {
            let (u, v) = (p.x, p.y);
            let t = preset.envelope(v);
            let (du, dv) = match preset {
                Preset::CylinderSkirt => (cfg.slide_amplitude * t.powf(1.5) * slide_gain / (2.0 * PI * CYL_RADIUS), 0.0),
                Preset::SphereShirt => {
                    let lat = -SPHERE_LAT + 2.0 * SPHERE_LAT * v;
                    (cfg.slide_amplitude * t * slide_gain / (2.0 * PI * SPHERE_RADIUS * lat.cos()), 0.0)
                }
                Preset::BentPlaneCape => {
                    let bump = (PI * u).sin();
                    (
                        cfg.slide_amplitude * bump * t * slide_gain / CAPE_SIZE,
                        0.5 * cfg.slide_amplitude * bump * (PI * t).sin() * (ph + 1.3).cos() / CAPE_SIZE,
                    )
                }
            };
            let (su, sv) = (u + du, v + dv);
            let wrinkle = cfg.wrinkle_amplitude * t * ((modes[2] * su + 2.0 * ph).sin() * 0.7 + (modes[1] * su - ph).cos() * 0.3);
            let random: f64 = coef
                .iter()
                .zip(modes)
                .map(|(c, k)| t * (c[0] * (k * su).cos() + c[1] * (k * su).sin() + c[2] * (PI * sv).cos()))
                .sum();
            preset.point(su, sv) + preset.normal(su, sv) * (wrinkle + random)
        })
        .collect()
}

fn ring_cameras(cfg: &SceneConfig) -> Result<Vec<Camera>> {
    let target = cfg.preset.center();
    let focal = cfg.focal_ratio * cfg.image_size as f64;
    (0..cfg.cameras)
        .map(|c| {
            let a = 2.0 * PI * c as f64 / cfg.cameras as f64;
            let lift = if c % 2 == 0 { cfg.preset.camera_lift() } else { -cfg.preset.camera_lift() };
            let eye = target + Vec3::new(cfg.camera_radius * a.sin(), lift, cfg.camera_radius * a.cos());
            Camera::look_at(eye, target, Vec3::y(), focal, cfg.image_size, cfg.image_size)
        })
        .collect()
}

/// Builds the scene for `cfg`; identical configs give bit-identical scenes.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let (mesh, params, skeleton) = build_template(cfg.preset, cfg.segments())?;
    let model = TemplateModel::new(mesh, skeleton)?;
    let poses: Vec<SkeletalPose> = (0..cfg.frames).map(|f| pose_at(cfg, f)).collect();
    let gt_canonical: Vec<VertexField> = (0..cfg.frames)
        .into_par_iter()
        .map(|f| VertexField(gt_canonical(cfg, &params, f)))
        .collect();
    let gt_positions: Vec<Vec<Vec3>> = poses
        .iter()
        .zip(&gt_canonical)
        .map(|(p, c)| Ok(apply_blended(c, &model.pose_transforms(p)?).into_inner()))
        .collect::<Result<_>>()?;
    let cameras = ring_cameras(cfg)?;
    let renders: Vec<Vec<(ColorImage, DepthMap)>> = gt_positions
        .par_iter()
        .map(|g| cameras.par_iter().map(|c| render_pattern(&model.mesh, cfg.pattern, g, c)).collect())
        .collect();
    let (images, depths) = renders.into_iter().map(|fr| fr.into_iter().unzip()).unzip();
    Ok(SyntheticScene {
        config: cfg.clone(),
        model,
        poses,
        params,
        gt_canonical,
        gt_positions,
        cameras,
        images,
        depths,
    })
}
