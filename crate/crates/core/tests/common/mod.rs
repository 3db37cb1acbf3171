#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfalign::camera::{Camera, ColorImage};
use surfalign::deformation::{
    deform_template_backward, deform_template_with, DeformationState, TemplateModel,
};
use surfalign::gaussian::{
    init_texel_anchors, l1_loss, pose_texture, pose_texture_backward, render_splats, render_splats_backward, ssim_loss,
    GaussianTexture, SplatGrad, SplatSet, TexelAnchors, SH, STORED_CHANNELS,
};
use surfalign::kinematics::SkeletalPose;
use surfalign::math::Mat3;
use surfalign::mesh::TemplateMesh;
use surfalign::pipeline::{chamfer_with_grad, corr_loss_with_grad, SpatialContext};
use surfalign::synth::{build_template, Preset};
use surfalign::tracking::{AnchorKind, CorrespondencePair, CorrespondenceSet};
use surfalign::Vec3;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect()
}

pub fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflat(p: &[f64]) -> Vec<Vec3> {
    p.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error. Components far below the largest
/// numeric entry are compared against a floor of 1e-3 of that entry.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let top = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * top).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// One gradient check: term name, parameter count and relative error.
pub struct GradCheck {
    pub term: &'static str,
    pub params: usize,
    pub error: f64,
}

fn check(term: &'static str, f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> GradCheck {
    let numeric = central_differences(f, x, FD_STEP);
    GradCheck {
        term,
        params: x.len(),
        error: relative_error(analytic, &numeric),
    }
}

pub fn cape(segments: [usize; 2]) -> (TemplateMesh, surfalign::kinematics::Skeleton) {
    let (mesh, _, skel) = build_template(Preset::BentPlaneCape, segments).unwrap();
    (mesh, skel)
}

fn jitter(rng: &mut ChaCha8Rng, v: &[Vec3], s: f64) -> Vec<Vec3> {
    v.iter()
        .map(|p| p + Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)))
        .collect()
}

fn targets_near(rng: &mut ChaCha8Rng, anchors: &[Vec3], s: f64) -> CorrespondenceSet {
    let mut set = CorrespondenceSet::empty(0, AnchorKind::Vertex, 0.03);
    for (id, a) in anchors.iter().enumerate() {
        let t = a + Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        set.pairs.push(CorrespondencePair { id, anchor: *a, target: t, view: 0, score: 1.0 });
    }
    set
}

pub fn chamfer_check(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let a = random_points(&mut r, 20, 0.5);
    let b = random_points(&mut r, 25, 0.5);
    let (_, g) = chamfer_with_grad(&a, &b).unwrap();
    check("chamfer", |p| chamfer_with_grad(&unflat(p), &b).unwrap().0, &flat(&a), &flat(&g))
}

pub fn spatial_checks(seed: u64) -> Vec<GradCheck> {
    let mut r = rng(seed);
    let (mesh, _) = cape([4, 4]);
    let ctx = SpatialContext::new(&mesh);
    let posed = jitter(&mut r, &mesh.vertices, 0.03);
    let skinned = jitter(&mut r, &mesh.vertices, 0.03);
    let (_, g) = ctx.evaluate_with_grad(&posed, &skinned).unwrap();
    let x = flat(&posed);
    vec![
        check("lap", |p| ctx.evaluate(&unflat(p), &skinned).unwrap().lap, &x, &flat(&g.lap)),
        check("lapz", |p| ctx.evaluate(&unflat(p), &skinned).unwrap().lapz, &x, &flat(&g.lapz)),
        check("norm", |p| ctx.evaluate(&unflat(p), &skinned).unwrap().norm, &x, &flat(&g.norm)),
    ]
}

/// Correspondence loss on the posed template, differentiated with respect to the
/// embedded-graph state through skinning.
pub fn cor_vrt_check(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let (mesh, skel) = cape([3, 3]);
    let model = TemplateModel::new(mesh, skel).unwrap();
    let joints = model.skeleton.joint_count();
    let pose = SkeletalPose {
        rotations: (0..joints)
            .map(|_| {
                nalgebra::UnitQuaternion::from_euler_angles(
                    r.random_range(-0.3..0.3),
                    r.random_range(-0.3..0.3),
                    r.random_range(-0.3..0.3),
                )
            })
            .collect(),
        root_translation: Vec3::new(0.05, -0.02, 0.1),
    };
    let blended = model.pose_transforms(&pose).unwrap();
    let nodes = model.graph.node_count();
    let nv = model.mesh.vertex_count();
    let mut state = DeformationState::for_model(&model);
    for q in state.rotations.iter_mut() {
        *q = nalgebra::Quaternion::new(
            1.0 + r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
        );
    }
    for t in state.translations.iter_mut() {
        *t = Vec3::new(r.random_range(-0.02..0.02), r.random_range(-0.02..0.02), r.random_range(-0.02..0.02));
    }
    for d in state.deltas.0.iter_mut() {
        *d = Vec3::new(r.random_range(-0.01..0.01), r.random_range(-0.01..0.01), r.random_range(-0.01..0.01));
    }
    let (_, posed) = deform_template_with(&model, &state, &blended).unwrap();
    let set = targets_near(&mut r, &posed.0, 0.02);
    let (_, gp) = corr_loss_with_grad(&posed.0, &set);
    let analytic = deform_template_backward(&model, &state, &blended, None, Some(&gp)).flatten();
    let latent = state.latent.clone();
    let loss = |p: &[f64]| {
        let s = DeformationState::from_params(p, nodes, nv, latent.clone()).unwrap();
        let (_, posed) = deform_template_with(&model, &s, &blended).unwrap();
        corr_loss_with_grad(&posed.0, &set).0
    };
    check("cor_vrt", loss, &state.params(), &analytic)
}

/// Three covered texels on a small cape, a camera facing it and a random target.
pub struct SplatInstance {
    pub mesh: TemplateMesh,
    pub anchors: TexelAnchors,
    pub texture: GaussianTexture,
    pub transforms: Vec<(Mat3, Vec3)>,
    pub camera: Camera,
    pub target: ColorImage,
}

impl SplatInstance {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let (mesh, _) = cape([1, 1]);
        let full = init_texel_anchors(&mesh, 2);
        let mut mask = full.mask();
        let last = mask.iter().rposition(|m| *m).unwrap();
        mask[last] = false;
        let anchors = full.restricted(&mask);
        let mut texture = GaussianTexture::initialize(&anchors, &mesh, &mesh.vertices, None, 0.7);
        for k in texture.covered() {
            let t = texture.texel_mut(k);
            for c in 0..3 {
                t[c] = r.random_range(-0.5..0.5);
            }
            for c in 3..7 {
                t[c] += r.random_range(-0.1..0.1);
            }
            for c in 7..10 {
                t[c] += r.random_range(-0.2..0.2);
            }
            t[10] += r.random_range(-0.5..0.5);
            for c in 0..3 {
                t[SH + c] = r.random_range(-1.0..1.0);
            }
        }
        let n = anchors.covered_count();
        let transforms = vec![(Mat3::identity(), Vec3::zeros()); n];
        let camera = Camera::look_at(Vec3::new(0.1, 0.05, 1.5), Vec3::zeros(), Vec3::y(), 24.0, 24, 24).unwrap();
        let mut target = ColorImage::new(24, 24, [0.0; 3]);
        for p in target.pixels.iter_mut() {
            *p = [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
        }
        SplatInstance {
            mesh,
            anchors,
            texture,
            transforms,
            camera,
            target,
        }
    }

    /// Flat indices of the covered texels' parameters.
    pub fn param_indices(&self) -> Vec<usize> {
        self.texture
            .covered()
            .into_iter()
            .flat_map(|k| (0..STORED_CHANNELS).map(move |c| k * STORED_CHANNELS + c))
            .collect()
    }

    pub fn splats(&self, tex: &GaussianTexture) -> SplatSet {
        pose_texture(tex, &self.anchors, &self.mesh, &self.mesh.vertices, &self.transforms, None).unwrap()
    }

    fn with_params(&self, idx: &[usize], p: &[f64]) -> GaussianTexture {
        let mut t = self.texture.clone();
        for (&i, &v) in idx.iter().zip(p) {
            t.params[i] = v;
        }
        t
    }

    fn texture_check(
        &self,
        term: &'static str,
        value: impl Fn(&SplatSet) -> f64,
        grad: impl Fn(&SplatSet) -> SplatGrad,
    ) -> GradCheck {
        let idx = self.param_indices();
        let splats = self.splats(&self.texture);
        let tg = pose_texture_backward(&self.texture, &splats, &grad(&splats), None);
        let analytic: Vec<f64> = idx.iter().map(|&i| tg.params[i]).collect();
        let x: Vec<f64> = idx.iter().map(|&i| self.texture.params[i]).collect();
        check(term, |p| value(&self.splats(&self.with_params(&idx, p))), &x, &analytic)
    }

    pub fn image_check(&self, term: &'static str) -> GradCheck {
        let loss = |s: &SplatSet| {
            let img = render_splats(s, &self.camera).image;
            match term {
                "l1" => l1_loss(&img, &self.target).unwrap(),
                _ => ssim_loss(&img, &self.target).unwrap(),
            }
        };
        self.texture_check(
            term,
            |s| loss(s).0,
            |s| {
                let (_, g) = loss(s);
                render_splats_backward(s, &self.camera, &g)
            },
        )
    }

    pub fn cor_tex_check(&self, seed: u64) -> GradCheck {
        let mut r = rng(seed);
        let splats = self.splats(&self.texture);
        let set = targets_near(&mut r, &splats.means, 0.02);
        self.texture_check(
            "cor_tex",
            |s| corr_loss_with_grad(&s.means, &set).0,
            |s| {
                let mut g = SplatGrad::zeros(s.len());
                g.means = corr_loss_with_grad(&s.means, &set).1;
                g
            },
        )
    }
}

/// Every loss term on one randomized instance per seed.
pub fn all_gradient_checks(seed: u64) -> Vec<GradCheck> {
    let mut out = vec![chamfer_check(seed)];
    out.extend(spatial_checks(seed + 1));
    out.push(cor_vrt_check(seed + 2));
    let inst = SplatInstance::new(seed + 3);
    out.push(inst.image_check("l1"));
    out.push(inst.image_check("ssim"));
    out.push(inst.cor_tex_check(seed + 4));
    out
}
