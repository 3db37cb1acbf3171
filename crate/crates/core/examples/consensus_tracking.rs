//! Vertex correspondences from tracking: the template is rendered, its vertices
//! tracked into every training view, lifted through depth, reduced to one
//! consensus view per vertex and gated at 3 cm. Outliers are injected to show
//! the gate at work.
//!
//! Run with `cargo run --release --example consensus_tracking`.

use surfalign::camera::unproject_texture;
use surfalign::deformation::DeformationState;
use surfalign::pipeline::{frame_geometry, vertex_correspondences, PipelineConfig};
use surfalign::synth::{generate_scene, SceneConfig};
use surfalign::Vec3;

fn main() -> surfalign::Result<()> {
    let scene = generate_scene(&SceneConfig {
        frames: 3,
        ..SceneConfig::default()
    })?;
    // skinning only: the template drifts away from the true surface
    let init: Vec<_> = (0..scene.frame_count()).map(|_| DeformationState::for_model(&scene.model)).collect();
    let posed: Vec<Vec<Vec3>> = frame_geometry(&scene, &init)?.into_iter().map(|g| g.1 .0).collect();

    for outliers in [0.0, 0.2] {
        let mut cfg = PipelineConfig::default();
        cfg.tracker.outlier_rate = outliers;
        let train = scene.training_cameras();
        let cams: Vec<_> = train.iter().map(|&c| scene.cameras[c].clone()).collect();
        let imgs: Vec<_> = train.iter().map(|&c| scene.images[0][c].clone()).collect();
        let tex = unproject_texture(&scene.model.mesh, &posed[0], &cams, &imgs, 128, cfg.visibility_eps)?;
        let sets = vertex_correspondences(&scene, &cfg, &posed, &tex, cfg.seed)?;
        for (f, set) in sets.iter().enumerate() {
            let err: f64 = set.pairs.iter().map(|p| (p.target - scene.gt_positions[f][p.id]).norm()).sum::<f64>()
                / set.len().max(1) as f64;
            let far = set.pairs.iter().map(|p| (p.anchor - p.target).norm()).fold(0.0, f64::max);
            println!(
                "outliers {:>3.0}% frame {f}: {} of {} vertices kept, target error {:.4} m, max anchor distance {far:.4} m",
                outliers * 100.0,
                set.len(),
                posed[f].len(),
                err
            );
        }
    }
    Ok(())
}
