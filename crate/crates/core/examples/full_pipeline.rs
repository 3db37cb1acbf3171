//! End to end through the library: generate a scene, save and reload it, run
//! all four alignment stages, evaluate and export. Equivalent to
//! `surfalign all --out <dir>`; expect a few minutes on one core.
//!
//! Run with `cargo run --release --example full_pipeline [out_dir]`.

use surfalign::pipeline::{PipelineConfig, StageId};
use surfalign::synth::{align_scene, evaluate_run, export_run, generate_scene, load_scene, save_scene, SceneConfig};

fn main() -> surfalign::Result<()> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("surfalign_full"));
    let (scene_dir, run_dir) = (out.join("scene"), out.join("run"));

    save_scene(&generate_scene(&SceneConfig::default())?, &scene_dir)?;
    let scene = load_scene(&scene_dir)?;
    let cfg = PipelineConfig::default();
    let manifest = align_scene(&scene, &cfg, &run_dir, &StageId::ALL)?;
    for r in &manifest.rounds {
        println!("vertex round {}: {} correspondences, drift {:.4} -> {:.4} m", r.round, r.correspondences, r.drift_before, r.drift);
    }
    println!("{:<7} {:>11} {:>9} {:>7}", "stage", "chamfer", "drift", "psnr");
    for m in evaluate_run(&scene, &cfg, &run_dir)? {
        println!("{:<7} {:>11.3e} {:>9.5} {:>7.2}", m.stage, m.chamfer, m.drift, m.psnr);
    }
    let files = export_run(&scene, &run_dir)?;
    println!("{} exported files under {}", files.len(), run_dir.join("export").display());
    Ok(())
}
