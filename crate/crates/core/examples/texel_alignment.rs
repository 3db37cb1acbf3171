//! Texel alignment and super-resolution on top of a skinning-only template:
//! the texel stage fits shared splat appearance plus per-frame offsets with and
//! without the texel correspondence term, then the 2x residual stage refines
//! the better texture.
//!
//! Run with `cargo run --release --example texel_alignment [iterations]`.

use surfalign::deformation::DeformationState;
use surfalign::pipeline::{run_stage_sr, run_stage_texel, PipelineConfig};
use surfalign::synth::{evaluate_splats, generate_scene, SceneConfig};

fn main() -> surfalign::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(240);
    let scene = generate_scene(&SceneConfig::default())?;
    let init: Vec<_> = (0..scene.frame_count()).map(|_| DeformationState::for_model(&scene.model)).collect();
    let mut cfg = PipelineConfig::default();
    cfg.texel.iterations = iterations;
    cfg.sr.iterations = iterations / 2;

    let mut image_only = cfg.clone();
    image_only.texel.weights.cor_tex = 0.0;
    let plain = run_stage_texel(&scene, &image_only, &init)?;
    let m = evaluate_splats(&scene, "texel", &init, &plain.texture, &plain.anchors, &plain.offsets)?;
    println!("image loss only:      PSNR {:.2} dB, texel drift {:.4} m", m.psnr, m.drift);

    let texel = run_stage_texel(&scene, &cfg, &init)?;
    let pairs: usize = texel.correspondences.iter().map(|s| s.len()).sum();
    let m = evaluate_splats(&scene, "texel", &init, &texel.texture, &texel.anchors, &texel.offsets)?;
    println!("with correspondences: PSNR {:.2} dB, texel drift {:.4} m ({pairs} texel pairs)", m.psnr, m.drift);

    let sr = run_stage_sr(&scene, &cfg, &init, &texel)?;
    let m = evaluate_splats(&scene, "sr", &init, &sr.texture, &sr.anchors, &sr.offsets)?;
    println!(
        "super-resolved {}x{}: PSNR {:.2} dB over {} texels",
        sr.texture.resolution,
        sr.texture.resolution,
        m.psnr,
        sr.texture.covered_count()
    );
    Ok(())
}
