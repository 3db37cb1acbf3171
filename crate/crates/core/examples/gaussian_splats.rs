//! Gaussian texture: one splat per covered texel, initialized flat on the
//! ground-truth surface with colors unprojected from the training views, then
//! rendered from a held-out camera.
//!
//! Run with `cargo run --release --example gaussian_splats`.

use surfalign::camera::write_png;
use surfalign::gaussian::{image_metrics, pose_texture, render_splats, texel_skinning};
use surfalign::pipeline::{frame_geometry, initial_texture, PipelineConfig};
use surfalign::synth::{generate_scene, SceneConfig};

fn main() -> surfalign::Result<()> {
    let scene = generate_scene(&SceneConfig {
        frames: 1,
        ..SceneConfig::default()
    })?;
    let cfg = PipelineConfig::default();
    let states = scene.gt_states();
    let (tex, anchors) = initial_texture(&scene, &cfg, &states)?;
    println!(
        "{}x{} texture, {} covered texels",
        tex.resolution,
        tex.resolution,
        tex.covered_count()
    );
    let geo = frame_geometry(&scene, &states)?;
    let transforms = texel_skinning(&anchors, &scene.model, &scene.poses[0])?;
    let splats = pose_texture(&tex, &anchors, &scene.model.mesh, &geo[0].0, &transforms, None)?;
    for c in scene.held_out_cameras() {
        let out = render_splats(&splats, &scene.cameras[c]);
        let img = out.image.quantized();
        let m = image_metrics(&img, &scene.images[0][c])?;
        let path = std::env::temp_dir().join(format!("surfalign_splats_c{c}.png"));
        write_png(&path, &img)?;
        println!("held-out camera {c}: PSNR {:.2} dB, SSIM {:.3} -> {}", m.psnr, m.ssim, path.display());
    }
    Ok(())
}
