use nalgebra::{Quaternion, UnitQuaternion};
use proptest::prelude::*;
use surfalign::camera::Camera;
use surfalign::deformation::{deform_template, DeformationState, TemplateModel};
use surfalign::gaussian::{clamp_offset, upsample_texture, GaussianTexture, STORED_CHANNELS};
use surfalign::kinematics::{blend_transform, DualQuaternion, SkeletalPose};
use surfalign::math::Mat3;
use surfalign::mesh::build_laplacian;
use surfalign::pipeline::{chamfer, Adam};
use surfalign::synth::{build_template, Preset};
use surfalign::tracking::{build_correspondence_set, AnchorKind, Correspondence3D};
use surfalign::{Vec2, Vec3};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| UnitQuaternion::from_euler_angles(a, b, c))
}

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![Just(Preset::CylinderSkirt), Just(Preset::BentPlaneCape), Just(Preset::SphereShirt)]
}

fn is_rotation(r: &Mat3) -> bool {
    (r.transpose() * r - Mat3::identity()).norm() < 1e-9 && (r.determinant() - 1.0).abs() < 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blended_dual_quaternion_is_rigid(
        joints in prop::collection::vec((rotation(), vec3(1.0)), 1..5),
        raw in prop::collection::vec(0.01..1.0f64, 4),
    ) {
        let dqs: Vec<DualQuaternion> = joints.iter().map(|(r, t)| DualQuaternion::from_rotation_translation(*r, *t)).collect();
        let total: f64 = raw[..dqs.len()].iter().sum();
        let weights: Vec<(usize, f64)> = (0..dqs.len()).map(|j| (j, raw[j] / total)).collect();
        let (r, _) = blend_transform(&weights, &dqs).unwrap();
        prop_assert!(is_rotation(&r));
    }

    #[test]
    fn single_weight_reproduces_the_joint(r in rotation(), t in vec3(1.0), p in vec3(1.0)) {
        let dq = DualQuaternion::from_rotation_translation(r, t);
        let (m, tr) = blend_transform(&[(0, 1.0)], &[dq]).unwrap();
        prop_assert!((m * p + tr - (r * p + t)).norm() < 1e-12);
    }

    #[test]
    fn identity_deformation_gives_rest_shape(p in preset()) {
        let (mesh, _, skel) = build_template(p, [8, 4]).unwrap();
        let model = TemplateModel::new(mesh, skel).unwrap();
        let pose = SkeletalPose::identity(model.skeleton.joint_count());
        let (canonical, posed) = deform_template(&model, &DeformationState::for_model(&model), &pose).unwrap();
        prop_assert_eq!(&canonical.0, &model.mesh.vertices);
        for (a, b) in posed.0.iter().zip(&model.mesh.vertices) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn uniform_node_translation_translates_every_vertex(p in preset(), t in vec3(0.2)) {
        let (mesh, _, skel) = build_template(p, [8, 4]).unwrap();
        let model = TemplateModel::new(mesh, skel).unwrap();
        let mut s = DeformationState::for_model(&model);
        s.translations.iter_mut().for_each(|x| *x = t);
        let pose = SkeletalPose::identity(model.skeleton.joint_count());
        let (canonical, _) = deform_template(&model, &s, &pose).unwrap();
        for (a, b) in canonical.0.iter().zip(&model.mesh.vertices) {
            prop_assert!((a - b - t).norm() < 1e-12);
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero(p in preset(), nu in 3usize..12, nv in 1usize..8) {
        let (mesh, _, _) = build_template(p, [nu, nv]).unwrap();
        let lap = build_laplacian(&mesh);
        prop_assert_eq!(lap.size(), mesh.vertex_count());
        for i in 0..lap.size() {
            prop_assert!(lap.row_sum(i).abs() < 1e-12);
        }
        let ones = vec![Vec3::new(1.0, -2.0, 0.5); lap.size()];
        prop_assert!(lap.apply(&ones).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn project_unproject_round_trip(
        eye in vec3(3.0).prop_filter("away from the target", |e| e.norm() > 0.5),
        focal in 20.0..400.0f64,
        p in vec3(0.3),
    ) {
        prop_assume!(eye.normalize().cross(&Vec3::y()).norm() > 0.1);
        let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::y(), focal, 64, 48).unwrap();
        let pr = cam.project(&p);
        prop_assume!(!pr.behind && pr.depth > 1e-3);
        let back = cam.unproject(pr.pixel, pr.depth).unwrap();
        prop_assert!((back - p).norm() < 1e-9 * (1.0 + eye.norm()));
        let again = cam.project(&back);
        prop_assert!((again.pixel - pr.pixel).norm() < 1e-6);
        prop_assert!(cam.unproject(Vec2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn clamped_offset_stays_inside_the_limit(raw in vec3(1e3), limit in 1e-4..1.0f64) {
        let c = clamp_offset(&raw, limit);
        prop_assert!(c.iter().all(|v| v.abs() <= limit));
        for k in 0..3 {
            prop_assert_eq!(c[k].signum() == raw[k].signum() || c[k] == 0.0, true);
        }
    }

    #[test]
    fn gate_never_keeps_distant_pairs(
        pairs in prop::collection::vec((vec3(0.5), vec3(0.06), any::<bool>()), 1..60),
        gate in 0.005..0.05f64,
    ) {
        let anchors: Vec<Vec3> = pairs.iter().map(|p| p.0).collect();
        let lifted: Vec<Option<Correspondence3D>> = pairs
            .iter()
            .map(|(a, d, valid)| Some(Correspondence3D { target: a + d, view: 0, score: 0.5, valid: *valid }))
            .collect();
        let set = build_correspondence_set(0, AnchorKind::Vertex, &anchors, &lifted, gate).unwrap();
        prop_assert!(set.pairs.iter().all(|p| (p.anchor - p.target).norm() < gate));
        let expected = pairs.iter().filter(|(_, d, v)| *v && d.norm() < gate).count();
        prop_assert_eq!(set.len(), expected);
    }

    #[test]
    fn constant_texture_upsamples_to_a_constant(
        r in 1usize..6,
        values in prop::collection::vec(-2.0..2.0f64, STORED_CHANNELS),
    ) {
        let mut tex = GaussianTexture::empty(r);
        tex.mask.iter_mut().for_each(|m| *m = true);
        for k in 0..r * r {
            tex.texel_mut(k).copy_from_slice(&values);
        }
        let mut residual = GaussianTexture::empty(2 * r);
        residual.mask.iter_mut().for_each(|m| *m = true);
        let up = upsample_texture(&tex, &residual).unwrap();
        prop_assert!(up.mask.iter().all(|&m| m));
        for k in 0..4 * r * r {
            for (a, b) in up.texel(k).iter().zip(&values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_without_signal_or_step_leaves_parameters(
        params in prop::collection::vec(-5.0..5.0f64, 1..20),
        seed_grad in -1.0..1.0f64,
    ) {
        let n = params.len();
        let mut a = params.clone();
        let mut opt = Adam::new(n);
        for _ in 0..5 {
            opt.step(&mut a, &vec![0.0; n], 0.1, None);
        }
        prop_assert_eq!(&a, &params);
        let mut b = params.clone();
        let mut opt = Adam::new(n);
        let g: Vec<f64> = (0..n).map(|i| seed_grad + i as f64).collect();
        for _ in 0..5 {
            opt.step(&mut b, &g, 0.0, None);
        }
        prop_assert_eq!(&b, &params);
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(
        a in prop::collection::vec(vec3(1.0), 1..40),
        b in prop::collection::vec(vec3(1.0), 1..40),
    ) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert_eq!(chamfer(&a, &rev).unwrap(), 0.0);
    }
}

#[test]
fn renormalized_quaternion_state_round_trips_through_params() {
    let (mesh, _, skel) = build_template(Preset::CylinderSkirt, [6, 3]).unwrap();
    let model = TemplateModel::new(mesh, skel).unwrap();
    let mut s = DeformationState::for_model(&model);
    s.rotations[0] = Quaternion::new(2.0, 0.0, 0.0, 0.0);
    s.normalize_rotations();
    assert!((s.rotations[0].norm() - 1.0).abs() < 1e-15);
    let (n, v) = (model.graph.node_count(), model.mesh.vertex_count());
    let back = DeformationState::from_params(&s.params(), n, v, s.latent.clone()).unwrap();
    assert_eq!(back, s);
}
