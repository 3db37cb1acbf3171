//! Rasterizes the ground-truth surface of a synthetic scene, then lifts every
//! covered pixel back to 3D through the depth map and checks it lands on the
//! rasterized face.
//!
//! Run with `cargo run --release --example rasterize_and_lift`.

use surfalign::camera::{rasterize, write_png};
use surfalign::synth::{generate_scene, SceneConfig};
use surfalign::Vec2;

fn main() -> surfalign::Result<()> {
    let scene = generate_scene(&SceneConfig {
        frames: 1,
        ..SceneConfig::default()
    })?;
    let mesh = &scene.model.mesh;
    let gt = &scene.gt_positions[0];
    for (c, cam) in scene.cameras.iter().enumerate().take(3) {
        let buf = rasterize(mesh, gt, cam, None);
        let (mut n, mut worst) = (0usize, 0.0f64);
        for y in 0..buf.height() {
            for x in 0..buf.width() {
                let px = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let Some((face, bary)) = buf.hit_at(px) else { continue };
                let surface = mesh.interpolate(gt, face, bary);
                let lifted = cam.unproject(px, buf.depth.get(x, y) as f64)?;
                worst = worst.max((lifted - surface).norm());
                n += 1;
            }
        }
        println!("camera {c}: {n} covered pixels, max lift error {worst:.2e} m");
    }
    let path = std::env::temp_dir().join("surfalign_view0.png");
    write_png(&path, &scene.images[0][0])?;
    println!("observed image of camera 0 -> {}", path.display());
    Ok(())
}
