//! Command-line front end: `generate`, `align`, `evaluate`, `export` and `all`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::pipeline::{PipelineConfig, StageId, TrackerKind};
use crate::synth::{
    align_scene, evaluate_run, export_run, generate_scene, load_scene, save_scene, Preset, SceneConfig, StageMetrics,
};

#[derive(Parser, Debug)]
#[command(name = "surfalign", version, about = "Multi-level template surface alignment on synthetic scenes")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Generate(GenerateArgs),
    /// Run alignment stages on a scene.
    Align(AlignArgs),
    /// Write metrics.csv for a run directory.
    Evaluate(RunArgs),
    /// Write meshes and renders for a run directory.
    Export(RunArgs),
    /// Generate, align every stage, evaluate and export.
    All(AllArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    #[arg(long, default_value = "cylinder-skirt")]
    pub preset: Preset,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub cams: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Scene config file (TOML or JSON); flags override it.
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value = "scene")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// Pipeline config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tracker: Option<TrackerKind>,
    /// Overrides the pipeline seed.
    #[arg(long = "pipeline-seed")]
    pub pipeline_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long, default_value = "scene")]
    pub scene: PathBuf,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// depth, vertex, texel, sr or all.
    #[arg(long, default_value = "all")]
    pub stage: String,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, default_value = "scene")]
    pub scene: PathBuf,
    #[arg(long, default_value = "run")]
    pub run: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct AllArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Receives `scene/` and `run/`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn load_scene_config(a: &SceneArgs) -> Result<SceneConfig> {
    let mut cfg = match &a.scene_config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str::<SceneConfig>(&text)?
            } else {
                toml::from_str::<SceneConfig>(&text).map_err(|e| Error::invalid(format!("scene config {}: {e}", p.display())))?
            }
        }
        None => SceneConfig::preset(a.preset),
    };
    if a.scene_config.is_some() {
        cfg.preset = a.preset;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.cams {
        cfg.cameras = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.image_size {
        cfg.image_size = v;
    }
    Ok(cfg)
}

fn load_pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = a.tracker {
        cfg.tracker.kind = t;
    }
    if let Some(s) = a.pipeline_seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_stages(s: &str) -> Result<Vec<StageId>> {
    if s == "all" {
        return Ok(StageId::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn print_metrics(rows: &[StageMetrics]) {
    println!("{:<8} {:>12} {:>10} {:>8} {:>7}", "stage", "chamfer", "drift", "psnr", "ssim");
    for r in rows {
        println!("{:<8} {:>12.4e} {:>10.5} {:>8.2} {:>7.4}", r.stage, r.chamfer, r.drift, r.psnr, r.ssim);
    }
}

fn generate(a: &SceneArgs, out: &Path) -> Result<()> {
    let cfg = load_scene_config(a)?;
    let scene = generate_scene(&cfg)?;
    save_scene(&scene, out)?;
    println!(
        "wrote {} frames x {} cameras to {}",
        scene.frame_count(),
        scene.cameras.len(),
        out.display()
    );
    Ok(())
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(&a.scene, &a.out),
        Command::Align(a) => {
            let cfg = load_pipeline_config(&a.pipeline)?;
            let stages = parse_stages(&a.stage)?;
            let scene = load_scene(&a.scene)?;
            let m = align_scene(&scene, &cfg, &a.out, &stages)?;
            println!("stages {:?} written to {}", m.stages, a.out.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let cfg = load_pipeline_config(&a.pipeline)?;
            let scene = load_scene(&a.scene)?;
            print_metrics(&evaluate_run(&scene, &cfg, &a.run)?);
            Ok(())
        }
        Command::Export(a) => {
            let scene = load_scene(&a.scene)?;
            let files = export_run(&scene, &a.run)?;
            println!("exported {} files", files.len());
            Ok(())
        }
        Command::All(a) => {
            let cfg = load_pipeline_config(&a.pipeline)?;
            let (scene_dir, run_dir) = (a.out.join("scene"), a.out.join("run"));
            generate(&a.scene, &scene_dir)?;
            let scene = load_scene(&scene_dir)?;
            align_scene(&scene, &cfg, &run_dir, &StageId::ALL)?;
            print_metrics(&evaluate_run(&scene, &cfg, &run_dir)?);
            let files = export_run(&scene, &run_dir)?;
            println!("exported {} files", files.len());
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs the command. Returns the
/// process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
