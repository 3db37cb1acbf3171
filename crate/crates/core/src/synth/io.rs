//! Scene directory layout:
//!
//! ```text
//! scene.json            config, cameras, skeleton and poses, held-out list
//! template.obj          rest template with UVs and skin weights
//! gt/f{F}.ply           GT surface of frame F (template connectivity)
//! img/f{F}_c{C}.png     GT image of frame F, camera C
//! depth/f{F}_c{C}.pfm   GT depth of frame F, camera C
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_template, SceneConfig, SyntheticScene};
use crate::camera::{read_png, write_png, CameraDoc, DepthMap};
use crate::deformation::TemplateModel;
use crate::error::{Error, Result};
use crate::kinematics::MotionDoc;
use crate::mesh::{load_mesh, load_positions, save_mesh, write_ply, VertexField};

pub const SCENE_FILE: &str = "scene.json";
pub const TEMPLATE_FILE: &str = "template.obj";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub config: SceneConfig,
    pub cameras: Vec<CameraDoc>,
    pub motion: MotionDoc,
    pub held_out: Vec<usize>,
    pub template: String,
    pub gt: Vec<String>,
    pub images: Vec<Vec<String>>,
    pub depths: Vec<Vec<String>>,
}

fn frame_paths(frames: usize, cams: usize) -> (Vec<String>, Vec<Vec<String>>, Vec<Vec<String>>) {
    let gt = (0..frames).map(|f| format!("gt/f{f}.ply")).collect();
    let img = (0..frames)
        .map(|f| (0..cams).map(|c| format!("img/f{f}_c{c}.png")).collect())
        .collect();
    let depth = (0..frames)
        .map(|f| (0..cams).map(|c| format!("depth/f{f}_c{c}.pfm")).collect())
        .collect();
    (gt, img, depth)
}

pub fn save_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["gt", "img", "depth"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mesh = &scene.model.mesh;
    save_mesh(mesh, &mesh.vertices, dir.join(TEMPLATE_FILE))?;
    let (gt, images, depths) = frame_paths(scene.frame_count(), scene.cameras.len());
    let uv = Some((mesh.uvs.as_slice(), mesh.face_uvs.as_slice()));
    for (f, p) in gt.iter().enumerate() {
        write_ply(dir.join(p), &scene.gt_positions[f], &mesh.faces, uv)?;
    }
    let jobs: Vec<(usize, usize)> = (0..scene.frame_count())
        .flat_map(|f| (0..scene.cameras.len()).map(move |c| (f, c)))
        .collect();
    jobs.par_iter().try_for_each(|&(f, c)| -> Result<()> {
        write_png(dir.join(&images[f][c]), &scene.images[f][c])?;
        scene.depths[f][c].write_pfm(dir.join(&depths[f][c]))
    })?;
    let file = SceneFile {
        config: scene.config.clone(),
        cameras: scene.cameras.iter().map(CameraDoc::from).collect(),
        motion: MotionDoc::from_motion(&scene.model.skeleton, &scene.poses),
        held_out: scene.held_out_cameras(),
        template: TEMPLATE_FILE.into(),
        gt,
        images,
        depths,
    };
    fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<SyntheticScene> {
    let dir = dir.as_ref();
    let scene_path = dir.join(SCENE_FILE);
    if !scene_path.exists() {
        return Err(Error::Missing(scene_path.display().to_string()));
    }
    let file: SceneFile = serde_json::from_str(&fs::read_to_string(&scene_path)?)?;
    let mut config = file.config.clone();
    config.held_out = Some(file.held_out.clone());
    config.validate()?;
    let mesh = load_mesh(dir.join(&file.template))?;
    let (skeleton, poses) = file.motion.to_motion()?;
    let model = TemplateModel::new(mesh, skeleton)?;
    let (_, params, _) = build_template(config.preset, config.segments())?;
    let cameras = file.cameras.iter().map(|d| d.to_camera()).collect::<Result<Vec<_>>>()?;
    if poses.len() != file.gt.len() || file.images.len() != file.gt.len() || file.depths.len() != file.gt.len() {
        return Err(Error::invalid("scene file frame counts disagree"));
    }
    let nv = model.mesh.vertex_count();
    let gt_positions = file
        .gt
        .iter()
        .map(|p| {
            let g = load_positions(dir.join(p))?;
            VertexField(g.clone()).check_len(nv, "GT vertices")?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_canonical = poses
        .iter()
        .zip(&gt_positions)
        .map(|(pose, g)| {
            let blended = model.pose_transforms(pose)?;
            Ok(VertexField(
                g.iter()
                    .zip(&blended)
                    .map(|(p, (r, t))| r.try_inverse().map(|ri| ri * (p - t)).unwrap_or(*p))
                    .collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let images = file
        .images
        .par_iter()
        .map(|row| row.iter().map(|p| read_png(dir.join(p))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let depths = file
        .depths
        .par_iter()
        .map(|row| row.iter().map(|p| DepthMap::read_pfm(dir.join(p))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        config,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_scene;

    #[test]
    fn scene_roundtrip() {
        let cfg = SceneConfig {
            frames: 2,
            cameras: 3,
            image_size: 32,
            held_out: Some(vec![1]),
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene(&s, dir.path()).unwrap();
        assert!(dir.path().join("img/f1_c2.png").exists());
        assert!(dir.path().join("depth/f0_c0.pfm").exists());
        let l = load_scene(dir.path()).unwrap();
        assert_eq!(l.gt_positions, s.gt_positions);
        assert_eq!(l.images, s.images);
        assert_eq!(l.depths, s.depths);
        assert_eq!(l.model.mesh.faces, s.model.mesh.faces);
        assert_eq!(l.held_out_cameras(), vec![1]);
        for (a, b) in l.gt_canonical.iter().zip(&s.gt_canonical) {
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_scene_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Missing(_))));
    }
}
