use rayon::prelude::*;

use super::losses::SpatialContext;
use super::nn::{chamfer_against, SpatialGrid, SurfaceSampler};
use super::optim::{cosine_lr, optimize, Adam};
use super::{corr_loss_with_grad, LossReport, LossWeights, PipelineConfig, StageConfig, TrackerKind};
use crate::camera::{point_visibility, rasterize, unproject_texture, StaticTexture};
use crate::deformation::{
    deform_template_backward, deform_template_with, fit_regressor, latents_from_residuals, DeformationState,
    RegressorOptions, LATENT_DIM,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    init_texel_anchors, l1_loss, pose_texture, pose_texture_backward, render_splats, render_splats_backward,
    ssim_loss, texel_skinning, upsample_mask, upsample_texture, GaussianTexture, SplatGrad, SplatSet, TexelAnchors,
    LOG_SCALE, OFFSET, OPACITY, ROTATION, SH, STORED_CHANNELS,
};
use crate::kinematics::normalize_window;
use crate::math::{Mat3, Vec3};
use crate::mesh::{compute_vertex_normals, VertexField};
use crate::synth::{evaluate_positions, SyntheticScene};
use crate::tracking::{
    correspond, track_points, AnchorKind, CorrespondenceSet, LongTermTracker, OracleTracker, PointTracker,
    RenderedView, ViewObservation,
};

/// Canonical and posed vertices of every frame.
pub fn frame_geometry(scene: &SyntheticScene, states: &[DeformationState]) -> Result<Vec<(VertexField, VertexField)>> {
    if states.len() != scene.frame_count() {
        return Err(Error::dim("per-frame states", scene.frame_count(), states.len()));
    }
    let blended = scene.pose_transforms()?;
    states
        .par_iter()
        .zip(&blended)
        .map(|(s, b)| deform_template_with(&scene.model, s, b))
        .collect()
}

fn posed_only(geo: &[(VertexField, VertexField)]) -> Vec<Vec<Vec3>> {
    geo.iter().map(|g| g.1 .0.clone()).collect()
}

fn mean_drift(posed: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> f64 {
    let n: usize = posed.iter().map(|p| p.len()).sum();
    let s: f64 = posed
        .iter()
        .zip(gt)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>())
        .sum();
    s / n.max(1) as f64
}

/// Shared per-frame inputs of the template objective.
struct TemplateFrame<'a> {
    scene: &'a SyntheticScene,
    blended: &'a [(Mat3, Vec3)],
    skinned: Vec<Vec3>,
    spatial: &'a SpatialContext,
    sampler: &'a SurfaceSampler,
    gt_samples: &'a [Vec3],
    grid: &'a SpatialGrid<'a>,
    weights: LossWeights,
    scale: f64,
    corr: Option<&'a CorrespondenceSet>,
}

impl TemplateFrame<'_> {
    fn loss(&self, params: &[f64], latent: &[f64]) -> Result<(LossReport, Vec<f64>)> {
        let model = &self.scene.model;
        let (nodes, nv) = (model.graph.node_count(), model.mesh.vertex_count());
        let state = DeformationState::from_params(params, nodes, nv, latent.to_vec())?;
        let (_, posed) = deform_template_with(model, &state, self.blended)?;
        let w = &self.weights;
        let (s, s2) = (self.scale, self.scale * self.scale);
        let mut report = LossReport::default();
        let mut grad = vec![Vec3::zeros(); nv];
        if w.chamfer > 0.0 {
            let samples = self.sampler.apply(&posed);
            let (c, gc) = chamfer_against(&samples, self.gt_samples, self.grid)?;
            report.chamfer = s2 * c;
            for (g, x) in grad.iter_mut().zip(self.sampler.backward(&gc)) {
                *g += x * (w.chamfer * s2);
            }
        }
        if w.lap > 0.0 || w.lapz > 0.0 || w.norm > 0.0 {
            let (t, g) = self.spatial.evaluate_with_grad(&posed, &self.skinned)?;
            report.lap = s * t.lap;
            report.lapz = s * t.lapz;
            report.norm = t.norm;
            for i in 0..nv {
                grad[i] += g.lap[i] * (w.lap * s) + g.lapz[i] * (w.lapz * s) + g.norm[i] * w.norm;
            }
        }
        if let (Some(set), true) = (self.corr, w.cor_vrt > 0.0) {
            let (c, gc) = corr_loss_with_grad(&posed, set);
            report.cor_vrt = s2 * c;
            for (g, x) in grad.iter_mut().zip(gc) {
                *g += x * (w.cor_vrt * s2);
            }
        }
        let sg = deform_template_backward(model, &state, self.blended, None, Some(&grad));
        Ok((report.weighted(w), sg.flatten()))
    }
}

/// Optimizes the state of every frame against the template objective.
fn fit_frames(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    stage: &StageConfig,
    init: &[DeformationState],
    corr: Option<&[CorrespondenceSet]>,
) -> Result<(Vec<DeformationState>, Vec<Vec<LossReport>>)> {
    let model = &scene.model;
    let spatial = SpatialContext::new(&model.mesh);
    let sampler = SurfaceSampler::new(&model.mesh.faces, model.mesh.vertex_count(), cfg.sample_level);
    let blended = scene.pose_transforms()?;
    let nodes = model.graph.node_count();
    let quats = DeformationState::quaternion_offsets(nodes);
    let results: Vec<Result<(DeformationState, Vec<LossReport>)>> = (0..scene.frame_count())
        .into_par_iter()
        .map(|f| {
            let gt = &scene.gt_positions[f];
            let gt_samples = sampler.apply(gt);
            let cell = (model.mesh.median_edge_length(gt) / cfg.sample_level.max(1) as f64).max(1e-6);
            let grid = SpatialGrid::new(&gt_samples, cell);
            let frame = TemplateFrame {
                scene,
                blended: &blended[f],
                skinned: crate::kinematics::apply_blended(&model.mesh.vertices, &blended[f]).into_inner(),
                spatial: &spatial,
                sampler: &sampler,
                gt_samples: &gt_samples,
                grid: &grid,
                weights: stage.weights,
                scale: cfg.length_scale,
                corr: corr.map(|c| &c[f]),
            };
            let latent = init[f].latent.clone();
            let mut params = init[f].params();
            let trace = optimize(&mut params, &quats, stage, None, |p, _| frame.loss(p, &latent))?;
            let state = DeformationState::from_params(&params, nodes, model.mesh.vertex_count(), latent)?;
            Ok((state, trace))
        })
        .collect();
    let mut states = Vec::new();
    let mut traces = Vec::new();
    for r in results {
        let (s, t) = r?;
        states.push(s);
        traces.push(t);
    }
    Ok((states, traces))
}

/// Chamfer of motion-only and latent-augmented regressors fit to the depth states.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegressorReport {
    pub direct_chamfer: f64,
    pub motion_chamfer: f64,
    pub latent_chamfer: f64,
}

#[derive(Clone, Debug)]
pub struct DepthResult {
    pub states: Vec<DeformationState>,
    pub traces: Vec<Vec<LossReport>>,
    pub regressor: Option<RegressorReport>,
}

/// Depth alignment: per-frame states fit to the GT surfaces, then the motion
/// regressor ablation (motion only vs. motion plus per-frame latent).
pub fn run_stage_depth(scene: &SyntheticScene, cfg: &PipelineConfig) -> Result<DepthResult> {
    cfg.validate()?;
    let init: Vec<DeformationState> = (0..scene.frame_count()).map(|_| DeformationState::for_model(&scene.model)).collect();
    let (mut states, traces) = fit_frames(scene, cfg, &cfg.depth, &init, None)?;
    let regressor = if states.len() >= 2 {
        let (report, latents) = regressor_ablation(scene, cfg, &states)?;
        for (s, z) in states.iter_mut().zip(latents) {
            s.latent = z;
        }
        Some(report)
    } else {
        None
    };
    Ok(DepthResult { states, traces, regressor })
}

fn regressor_ablation(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    states: &[DeformationState],
) -> Result<(RegressorReport, Vec<Vec<f64>>)> {
    let windows = (0..states.len())
        .map(|f| normalize_window(&scene.poses[..=f], cfg.regressor_window))
        .collect::<Result<Vec<_>>>()?;
    let opts = RegressorOptions {
        lambda: cfg.regressor_lambda,
        zero_latent_rows: false,
    };
    let (nodes, nv) = (scene.model.graph.node_count(), scene.model.mesh.vertex_count());
    let motion = fit_regressor(&windows, None, states, opts)?;
    let mut residuals = Vec::new();
    let mut motion_states = Vec::new();
    for (w, s) in windows.iter().zip(states) {
        let p = motion.predict(w, None)?;
        residuals.push(s.params().iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>());
        motion_states.push(DeformationState::from_params(&p, nodes, nv, vec![0.0; LATENT_DIM])?);
    }
    let latents = latents_from_residuals(&residuals, LATENT_DIM);
    let with_latent = fit_regressor(
        &windows,
        Some(&latents),
        states,
        RegressorOptions {
            zero_latent_rows: true,
            ..opts
        },
    )?;
    let latent_states = windows
        .iter()
        .zip(&latents)
        .map(|(w, z)| DeformationState::from_params(&with_latent.predict(w, Some(z))?, nodes, nv, z.clone()))
        .collect::<Result<Vec<_>>>()?;
    let chamfer_of = |mut st: Vec<DeformationState>| -> Result<f64> {
        for s in &mut st {
            s.normalize_rotations();
        }
        Ok(evaluate_positions(scene, &posed_only(&frame_geometry(scene, &st)?))?.0)
    };
    let report = RegressorReport {
        direct_chamfer: chamfer_of(states.to_vec())?,
        motion_chamfer: chamfer_of(motion_states)?,
        latent_chamfer: chamfer_of(latent_states)?,
    };
    Ok((report, latents))
}

fn make_tracker<'a>(scene: &'a SyntheticScene, cfg: &PipelineConfig, seed: u64) -> Box<dyn PointTracker + 'a> {
    let oracle = OracleTracker {
        gt_positions: &scene.gt_positions,
        gt_depth: &scene.depths,
        noise_sigma: cfg.tracker.noise_sigma,
        outlier_rate: cfg.tracker.outlier_rate,
        visibility_eps: cfg.visibility_eps,
        seed,
    };
    match cfg.tracker.kind {
        TrackerKind::Oracle => Box::new(oracle),
        TrackerKind::Longterm => Box::new(LongTermTracker {
            oracle,
            step_sigma: cfg.tracker.step_sigma,
        }),
    }
}

/// Renders the template of frame `f`, tracks `anchors` into every training view,
/// lifts, picks consensus views and gates.
#[allow(clippy::too_many_arguments)]
fn frame_correspondences(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    tracker: &dyn PointTracker,
    f: usize,
    kind: AnchorKind,
    posed: &[Vec3],
    anchors: &[Vec3],
    normals: &[Vec3],
    texture: Option<&StaticTexture>,
) -> Result<CorrespondenceSet> {
    let train = scene.training_cameras();
    let mesh = &scene.model.mesh;
    let renders: Vec<_> = train.par_iter().map(|&c| rasterize(mesh, posed, &scene.cameras[c], texture)).collect();
    let mut tracks = Vec::with_capacity(train.len());
    let mut vis = Vec::with_capacity(train.len());
    for (&c, r) in train.iter().zip(&renders) {
        let cam = &scene.cameras[c];
        let view = RenderedView {
            camera: cam,
            render: r,
            positions: posed,
            faces: &mesh.faces,
        };
        tracks.push(track_points(f, c, &view, anchors, tracker, cfg.visibility_eps));
        vis.push(point_visibility(anchors, cam, &r.depth, cfg.visibility_eps));
    }
    let views: Vec<ViewObservation<'_>> = train
        .iter()
        .enumerate()
        .map(|(k, &c)| ViewObservation {
            camera: &scene.cameras[c],
            tracks: &tracks[k],
            visibility: &vis[k],
            depth: &scene.depths[f][c],
        })
        .collect();
    correspond(f, kind, anchors, normals, &views, cfg.gate)
}

/// Gated vertex correspondences of every frame for the given posed geometry.
pub fn vertex_correspondences(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    posed: &[Vec<Vec3>],
    texture: &StaticTexture,
    seed: u64,
) -> Result<Vec<CorrespondenceSet>> {
    let tracker = make_tracker(scene, cfg, seed);
    (0..scene.frame_count())
        .into_par_iter()
        .map(|f| {
            let normals = compute_vertex_normals(&scene.model.mesh, &VertexField(posed[f].clone()))?;
            frame_correspondences(scene, cfg, tracker.as_ref(), f, AnchorKind::Vertex, &posed[f], &posed[f], &normals.normals, Some(texture))
        })
        .collect()
}

fn frame0_texture(scene: &SyntheticScene, cfg: &PipelineConfig, posed0: &[Vec3]) -> Result<StaticTexture> {
    let train = scene.training_cameras();
    let cams: Vec<_> = train.iter().map(|&c| scene.cameras[c].clone()).collect();
    let imgs: Vec<_> = train.iter().map(|&c| scene.images[0][c].clone()).collect();
    unproject_texture(&scene.model.mesh, posed0, &cams, &imgs, cfg.static_texture_resolution, cfg.visibility_eps)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub correspondences: usize,
    /// Mean distance from correspondence targets to the true vertex positions.
    pub target_error: f64,
    pub drift_before: f64,
    pub drift: f64,
}

#[derive(Clone, Debug)]
pub struct VertexResult {
    pub states: Vec<DeformationState>,
    pub rounds: Vec<RoundReport>,
    pub correspondences: Vec<CorrespondenceSet>,
    pub static_texture: StaticTexture,
    pub traces: Vec<Vec<LossReport>>,
}

/// Vertex alignment with cascading: every round re-unprojects the static texture
/// at the current geometry, re-tracks and refits template plus correspondence loss.
pub fn run_stage_vertex(scene: &SyntheticScene, cfg: &PipelineConfig, init: &[DeformationState]) -> Result<VertexResult> {
    cfg.validate()?;
    let mut states = init.to_vec();
    let mut posed = posed_only(&frame_geometry(scene, &states)?);
    let mut rounds = Vec::new();
    let mut traces = Vec::new();
    let mut last_sets = Vec::new();
    let mut texture = frame0_texture(scene, cfg, &posed[0])?;
    for round in 0..cfg.vertex.rounds {
        if round > 0 {
            texture = frame0_texture(scene, cfg, &posed[0])?;
        }
        let sets = vertex_correspondences(scene, cfg, &posed, &texture, cfg.seed.wrapping_add(round as u64))?;
        let drift_before = mean_drift(&posed, &scene.gt_positions);
        let (count, err_sum) = sets.iter().fold((0usize, 0.0), |(n, e), s| {
            let gt = &scene.gt_positions[s.frame];
            (n + s.len(), e + s.pairs.iter().map(|p| (p.target - gt[p.id]).norm()).sum::<f64>())
        });
        let (next, tr) = fit_frames(scene, cfg, &cfg.vertex, &states, Some(&sets))?;
        states = next;
        traces.extend(tr);
        posed = posed_only(&frame_geometry(scene, &states)?);
        let drift = mean_drift(&posed, &scene.gt_positions);
        log::info!("vertex round {}: {count} correspondences, drift {drift_before:.5} -> {drift:.5}", round + 1);
        rounds.push(RoundReport {
            round: round + 1,
            correspondences: count,
            target_error: if count > 0 { err_sum / count as f64 } else { 0.0 },
            drift_before,
            drift,
        });
        last_sets = sets;
    }
    Ok(VertexResult {
        states,
        rounds,
        correspondences: last_sets,
        static_texture: texture,
        traces,
    })
}

/// Per-frame texel geometry: canonical vertices and texel skinning transforms.
struct TexelFrames {
    canonical: Vec<Vec<Vec3>>,
    posed: Vec<Vec<Vec3>>,
    transforms: Vec<Vec<(Mat3, Vec3)>>,
}

fn texel_frames(scene: &SyntheticScene, states: &[DeformationState], anchors: &TexelAnchors) -> Result<TexelFrames> {
    let geo = frame_geometry(scene, states)?;
    let transforms = scene
        .poses
        .par_iter()
        .map(|p| texel_skinning(anchors, &scene.model, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(TexelFrames {
        canonical: geo.iter().map(|g| g.0 .0.clone()).collect(),
        posed: geo.iter().map(|g| g.1 .0.clone()).collect(),
        transforms,
    })
}

/// Gated correspondences for the splat means at zero offset.
pub fn texel_correspondences(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    tex: &GaussianTexture,
    anchors: &TexelAnchors,
    states: &[DeformationState],
) -> Result<Vec<CorrespondenceSet>> {
    let frames = texel_frames(scene, states, anchors)?;
    texel_sets(scene, cfg, tex, anchors, &frames)
}

fn texel_sets(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    tex: &GaussianTexture,
    anchors: &TexelAnchors,
    frames: &TexelFrames,
) -> Result<Vec<CorrespondenceSet>> {
    let tracker = make_tracker(scene, cfg, cfg.seed ^ 0x7e7e1);
    let mesh = &scene.model.mesh;
    let zeros = vec![Vec3::zeros(); anchors.covered_count()];
    (0..scene.frame_count())
        .into_par_iter()
        .map(|f| {
            let splats = pose_texture(tex, anchors, mesh, &frames.canonical[f], &frames.transforms[f], Some(&zeros))?;
            let vn = compute_vertex_normals(mesh, &VertexField(frames.posed[f].clone()))?;
            let normals = anchors.base_normals(mesh, &vn.normals);
            frame_correspondences(scene, cfg, tracker.as_ref(), f, AnchorKind::Texel, &frames.posed[f], &splats.means, &normals, None)
        })
        .collect()
}

/// Per-channel step multipliers of the shared appearance; offsets are excluded.
const ROTATION_STEP: f64 = 0.2;
const LOG_SCALE_STEP: f64 = 4.0;
const OPACITY_STEP: f64 = 2.0;
const COLOR_STEP: f64 = 1.0;

fn appearance_scale(r: usize, mask: &[bool]) -> Vec<f64> {
    let mut s = vec![0.0; r * r * STORED_CHANNELS];
    for (k, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let t = &mut s[k * STORED_CHANNELS..(k + 1) * STORED_CHANNELS];
        t[ROTATION..ROTATION + 4].fill(ROTATION_STEP);
        t[LOG_SCALE..LOG_SCALE + 3].fill(LOG_SCALE_STEP);
        t[OPACITY] = OPACITY_STEP;
        t[SH..SH + 3].fill(COLOR_STEP);
    }
    s
}

/// Image loss of one frame over the training cameras, averaged per camera.
fn image_loss(
    scene: &SyntheticScene,
    f: usize,
    splats: &SplatSet,
    w: &LossWeights,
) -> Result<(LossReport, SplatGrad)> {
    let train = scene.training_cameras();
    let per_cam: Vec<Result<(f64, f64, SplatGrad)>> = train
        .par_iter()
        .map(|&c| {
            let cam = &scene.cameras[c];
            let out = render_splats(splats, cam);
            let gt = &scene.images[f][c];
            let (l1, gl1) = l1_loss(&out.image, gt)?;
            let (ls, gs) = ssim_loss(&out.image, gt)?;
            let gimg: Vec<[f64; 3]> = gl1
                .iter()
                .zip(&gs)
                .map(|(a, b)| [0, 1, 2].map(|k| w.l1 * a[k] + w.ssim * b[k]))
                .collect();
            Ok((l1, ls, render_splats_backward(splats, cam, &gimg)))
        })
        .collect();
    let n = train.len() as f64;
    let mut report = LossReport::default();
    let mut grad = SplatGrad::zeros(splats.len());
    for r in per_cam {
        let (l1, ls, g) = r?;
        report.l1 += l1 / n;
        report.ssim += ls / n;
        grad.add(&g);
    }
    for g in grad.means.iter_mut() {
        *g /= n;
    }
    for g in grad.covariances.iter_mut() {
        *g /= n;
    }
    for g in grad.opacities.iter_mut() {
        *g /= n;
    }
    for g in grad.sh.iter_mut() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    Ok((report, grad))
}

fn offsets_flat(o: &[Vec3]) -> Vec<f64> {
    o.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

fn offsets_from(p: &[f64]) -> Vec<Vec3> {
    p.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

#[derive(Clone, Debug)]
pub struct TexelResult {
    pub texture: GaussianTexture,
    pub anchors: TexelAnchors,
    /// Raw per-frame offsets of the covered texels.
    pub offsets: Vec<Vec<Vec3>>,
    pub correspondences: Vec<CorrespondenceSet>,
    pub trace: Vec<(usize, LossReport)>,
}

/// Initial texture: splats flat on the frame-0 canonical surface, colored from
/// the static texture unprojected at frame 0.
pub fn initial_texture(scene: &SyntheticScene, cfg: &PipelineConfig, states: &[DeformationState]) -> Result<(GaussianTexture, TexelAnchors)> {
    let anchors = init_texel_anchors(&scene.model.mesh, cfg.texel_resolution);
    let geo = frame_geometry(scene, states)?;
    let t0 = frame0_texture(scene, cfg, &geo[0].1)?;
    let tex = GaussianTexture::initialize(&anchors, &scene.model.mesh, &geo[0].0, Some(&t0), 0.95);
    Ok((tex, anchors))
}

/// Texel alignment: shared appearance and per-frame offsets against the training
/// images, plus the texel correspondence term. One frame per iteration.
pub fn run_stage_texel(scene: &SyntheticScene, cfg: &PipelineConfig, states: &[DeformationState]) -> Result<TexelResult> {
    cfg.validate()?;
    let (mut tex, anchors) = initial_texture(scene, cfg, states)?;
    let nf = scene.frame_count();
    let n = anchors.covered_count();
    if n == 0 {
        log::warn!("texel stage: no covered texels, nothing to optimize");
        return Ok(TexelResult {
            texture: tex,
            anchors,
            offsets: vec![Vec::new(); nf],
            correspondences: (0..nf).map(|f| CorrespondenceSet::empty(f, AnchorKind::Texel, cfg.gate)).collect(),
            trace: Vec::new(),
        });
    }
    let frames = texel_frames(scene, states, &anchors)?;
    let w = cfg.texel.weights;
    let sets = if w.cor_tex > 0.0 {
        texel_sets(scene, cfg, &tex, &anchors, &frames)?
    } else {
        (0..nf).map(|f| CorrespondenceSet::empty(f, AnchorKind::Texel, cfg.gate)).collect()
    };
    let mut offsets: Vec<Vec<f64>> = vec![vec![0.0; 3 * n]; nf];
    let scale = appearance_scale(tex.resolution, &tex.mask);
    let mut shared = Adam::new(tex.params.len());
    let mut per_frame: Vec<Adam> = (0..nf).map(|_| Adam::new(3 * n)).collect();
    let iters = cfg.texel.iterations;
    let mut trace = Vec::with_capacity(iters);
    for it in 0..iters {
        let f = it % nf;
        let off = offsets_from(&offsets[f]);
        let splats = pose_texture(&tex, &anchors, &scene.model.mesh, &frames.canonical[f], &frames.transforms[f], Some(&off))?;
        let (mut report, mut grad) = image_loss(scene, f, &splats, &w)?;
        if w.cor_tex > 0.0 && !sets[f].is_empty() {
            let (c, gc) = corr_loss_with_grad(&splats.means, &sets[f]);
            report.cor_tex = c;
            for (g, x) in grad.means.iter_mut().zip(gc) {
                *g += x * w.cor_tex;
            }
        }
        let report = report.weighted(&w);
        report.check_finite()?;
        let tg = pose_texture_backward(&tex, &splats, &grad, Some(&off));
        let g_off = offsets_flat(&tg.offsets(&splats.texel_ids));
        let lr = cosine_lr(cfg.texel.lr, it, iters, cfg.texel.cosine);
        shared.step(&mut tex.params, &tg.params, lr, Some(&scale));
        per_frame[f].step(&mut offsets[f], &g_off, cfg.offset_step * lr, None);
        renormalize_texel_rotations(&mut tex);
        trace.push((f, report));
    }
    let offsets: Vec<Vec<Vec3>> = offsets.iter().map(|o| offsets_from(o)).collect();
    Ok(TexelResult {
        texture: tex,
        anchors,
        offsets,
        correspondences: sets,
        trace,
    })
}

fn renormalize_texel_rotations(tex: &mut GaussianTexture) {
    for k in tex.covered() {
        let t = tex.texel_mut(k);
        let q = &mut t[ROTATION..ROTATION + 4];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            q.iter_mut().for_each(|x| *x /= n);
        }
    }
}

#[derive(Clone, Debug)]
pub struct SrResult {
    pub texture: GaussianTexture,
    pub anchors: TexelAnchors,
    pub offsets: Vec<Vec<Vec3>>,
    pub residual: GaussianTexture,
    pub trace: Vec<(usize, LossReport)>,
}

/// Bilinear 2x upsampling of the texture and of every frame's offsets; the
/// residual starts at zero.
pub fn sr_initial(texel: &TexelResult, mesh: &crate::mesh::TemplateMesh) -> Result<SrResult> {
    let tex = &texel.texture;
    let r = tex.resolution;
    let full = init_texel_anchors(mesh, 2 * r);
    let mask: Vec<bool> = upsample_mask(&tex.mask, r).iter().zip(full.mask()).map(|(a, b)| *a && b).collect();
    let mut residual = GaussianTexture::empty(2 * r);
    residual.mask = mask.clone();
    residual.offset_limit = tex.offset_limit;
    let anchors = full.restricted(&mask);
    let texture = upsample_texture(tex, &residual)?;
    let offsets = texel
        .offsets
        .iter()
        .map(|o| {
            let mut t = tex.clone();
            for (n, &k) in tex.covered().iter().enumerate() {
                let v = o.get(n).copied().unwrap_or_else(Vec3::zeros);
                t.texel_mut(k)[OFFSET..OFFSET + 3].copy_from_slice(v.as_slice());
            }
            Ok(upsample_texture(&t, &residual)?.raw_offsets())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SrResult {
        texture,
        anchors,
        offsets,
        residual,
        trace: Vec::new(),
    })
}

/// Texel super-resolution: optimizes the 2x residual against the image loss,
/// with per-frame offsets upsampled and held fixed.
pub fn run_stage_sr(scene: &SyntheticScene, cfg: &PipelineConfig, states: &[DeformationState], texel: &TexelResult) -> Result<SrResult> {
    cfg.validate()?;
    let mut sr = sr_initial(texel, &scene.model.mesh)?;
    if sr.anchors.covered_count() == 0 || cfg.sr.iterations == 0 {
        return Ok(sr);
    }
    let base = sr.texture.clone();
    let frames = texel_frames(scene, states, &sr.anchors)?;
    let w = cfg.sr.weights;
    let scale = appearance_scale(sr.residual.resolution, &sr.residual.mask);
    let mut adam = Adam::new(sr.residual.params.len());
    let nf = scene.frame_count();
    let iters = cfg.sr.iterations;
    for it in 0..iters {
        let f = it % nf;
        let splats = pose_texture(&sr.texture, &sr.anchors, &scene.model.mesh, &frames.canonical[f], &frames.transforms[f], Some(&sr.offsets[f]))?;
        let (report, grad) = image_loss(scene, f, &splats, &w)?;
        let report = report.weighted(&w);
        report.check_finite()?;
        // the upsampled texture is base + residual, so both share a gradient
        let tg = pose_texture_backward(&sr.texture, &splats, &grad, Some(&sr.offsets[f]));
        let lr = cosine_lr(cfg.sr.lr, it, iters, cfg.sr.cosine);
        adam.step(&mut sr.residual.params, &tg.params, lr, Some(&scale));
        for k in sr.residual.covered() {
            let (b, r) = (base.texel(k).to_vec(), sr.residual.texel(k).to_vec());
            for (d, (x, y)) in sr.texture.texel_mut(k).iter_mut().zip(b.iter().zip(&r)) {
                *d = x + y;
            }
        }
        sr.trace.push((f, report));
    }
    Ok(sr)
}
