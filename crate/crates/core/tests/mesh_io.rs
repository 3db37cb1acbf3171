use surfalign::camera::{read_cameras, read_png, write_cameras, write_png, ColorImage, DepthMap};
use surfalign::deformation::{read_states, write_states, DeformationState, TemplateModel};
use surfalign::gaussian::{init_texel_anchors, read_offsets, read_texture, write_offsets, write_texture, GaussianTexture};
use surfalign::mesh::{load_mesh, load_positions, save_mesh, write_ply};
use surfalign::synth::{build_template, generate_scene, Preset, SceneConfig};
use surfalign::{Error, Vec3};

#[test]
fn template_obj_round_trip_keeps_uvs_seams_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    for preset in [Preset::CylinderSkirt, Preset::BentPlaneCape, Preset::SphereShirt] {
        let (mesh, _, _) = build_template(preset, [12, 6]).unwrap();
        let path = dir.path().join(format!("{}.obj", preset.name()));
        save_mesh(&mesh, &mesh.vertices, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.face_uvs, mesh.face_uvs);
        assert_eq!(back.seams.len(), mesh.seams.len());
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in back.uvs.iter().zip(&mesh.uvs) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in back.skin_weights.iter().zip(&mesh.skin_weights) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn ply_positions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, _, _) = build_template(Preset::SphereShirt, [10, 5]).unwrap();
    let moved: Vec<Vec3> = mesh.vertices.iter().map(|p| p * 1.5 + Vec3::new(0.1, 0.2, -0.3)).collect();
    let path = dir.path().join("f.ply");
    write_ply(&path, &moved, &mesh.faces, Some((&mesh.uvs, &mesh.face_uvs))).unwrap();
    let back = load_positions(&path).unwrap();
    assert_eq!(back.len(), moved.len());
    for (a, b) in back.iter().zip(&moved) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn malformed_obj_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.obj");
    std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n").unwrap();
    assert!(load_mesh(&path).is_err());
    std::fs::write(&path, "v 0 0 zero\n").unwrap();
    assert!(load_mesh(&path).is_err());
    assert!(matches!(load_mesh(dir.path().join("absent.obj")), Err(Error::Io(_))));
}

#[test]
fn images_depths_and_cameras_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneConfig {
        frames: 1,
        cameras: 3,
        image_size: 40,
        ..SceneConfig::default()
    })
    .unwrap();
    let img = &scene.images[0][1];
    write_png(dir.path().join("a.png"), img).unwrap();
    assert_eq!(&read_png(dir.path().join("a.png")).unwrap(), img);

    let mut ramp = ColorImage::new(5, 3, [0.0; 3]);
    for (i, p) in ramp.pixels.iter_mut().enumerate() {
        *p = [i as f64 / 14.0, 0.5, 1.0 - i as f64 / 14.0];
    }
    write_png(dir.path().join("r.png"), &ramp).unwrap();
    assert_eq!(read_png(dir.path().join("r.png")).unwrap(), ramp.quantized());

    let depth = &scene.depths[0][2];
    depth.write_pfm(dir.path().join("d.pfm")).unwrap();
    assert_eq!(&DepthMap::read_pfm(dir.path().join("d.pfm")).unwrap(), depth);

    write_cameras(dir.path().join("cams.json"), &scene.cameras).unwrap();
    let cams = read_cameras(dir.path().join("cams.json")).unwrap();
    assert_eq!(cams.len(), 3);
    let p = Vec3::new(0.1, 0.3, -0.05);
    for (a, b) in cams.iter().zip(&scene.cameras) {
        assert!((a.project(&p).pixel - b.project(&p).pixel).norm() < 1e-9);
    }
}

#[test]
fn binary_containers_round_trip_at_f32() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, _, skel) = build_template(Preset::CylinderSkirt, [8, 4]).unwrap();
    let model = TemplateModel::new(mesh, skel).unwrap();
    let mut s = DeformationState::for_model(&model);
    s.translations[0] = Vec3::new(0.25, -0.5, 0.125);
    s.deltas.0[3] = Vec3::new(0.5, 0.0, -0.25);
    s.latent[2] = 0.75;
    let states = vec![s.clone(), DeformationState::for_model(&model)];
    write_states(dir.path().join("s.bin"), &states).unwrap();
    assert_eq!(read_states(dir.path().join("s.bin")).unwrap(), states);

    let anchors = init_texel_anchors(&model.mesh, 8);
    let tex = GaussianTexture::initialize(&anchors, &model.mesh, &model.mesh.vertices, None, 0.5);
    write_texture(dir.path().join("t.bin"), &tex).unwrap();
    let back = read_texture(dir.path().join("t.bin")).unwrap();
    assert_eq!(back.mask, tex.mask);
    for (a, b) in back.params.iter().zip(&tex.params) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
    let offsets = vec![vec![Vec3::new(0.5, 0.25, 0.0); 3], vec![Vec3::zeros(); 3]];
    write_offsets(dir.path().join("o.bin"), &offsets).unwrap();
    assert_eq!(read_offsets(dir.path().join("o.bin")).unwrap(), offsets);
}

#[test]
fn truncated_container_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (mesh, _, skel) = build_template(Preset::BentPlaneCape, [4, 4]).unwrap();
    let model = TemplateModel::new(mesh, skel).unwrap();
    let p = dir.path().join("s.bin");
    write_states(&p, &[DeformationState::for_model(&model)]).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    assert!(read_states(&p).is_err());
    std::fs::write(&p, b"not a container").unwrap();
    assert!(read_states(&p).is_err());
}
