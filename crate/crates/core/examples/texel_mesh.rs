//! Meshes the texel grid of a Gaussian texture with seams stitched, so the
//! splat means of a closed garment form a watertight band.
//!
//! Run with `cargo run --release --example texel_mesh`.

use surfalign::gaussian::{pose_texture, texel_skinning, texels_to_mesh};
use surfalign::mesh::write_obj;
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
    let geo = frame_geometry(&scene, &states)?;
    let tr = texel_skinning(&anchors, &scene.model, &scene.poses[0])?;
    let splats = pose_texture(&tex, &anchors, &scene.model.mesh, &geo[0].0, &tr, None)?;
    let tm = texels_to_mesh(&tex, &splats, &scene.model.mesh)?;
    println!(
        "{} vertices, {} faces ({} grid, {} stitching), {} boundary edges, {} on seams, {} duplicate faces",
        tm.vertices.len(),
        tm.faces.len(),
        tm.grid_faces,
        tm.faces.len() - tm.grid_faces,
        tm.boundary_edges().len(),
        tm.seam_boundary_edges().len(),
        tm.duplicate_faces()
    );
    let path = std::env::temp_dir().join("surfalign_texels.obj");
    write_obj(&path, &tm.vertices, &tm.faces, None, None)?;
    println!("wrote {}", path.display());
    Ok(())
}
