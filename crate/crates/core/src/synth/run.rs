//! Stage driver over a run directory. Every stage reads its inputs from the
//! files written by the previous stage, so running stages one at a time and
//! all at once produce the same outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::{evaluate_splats, evaluate_states, render_splat_views, write_metrics_csv, StageMetrics};
use super::SyntheticScene;
use crate::camera::write_png;
use crate::deformation::{read_states, write_states, DeformationState};
use crate::error::{Error, Result};
use crate::gaussian::{
    init_texel_anchors, pose_texture, read_offsets, read_texture, texel_skinning, texels_to_mesh,
    write_offsets, write_texture, GaussianTexture, TexelAnchors,
};
use crate::mesh::{save_mesh, write_obj};
use crate::pipeline::{
    frame_geometry, run_stage_depth, run_stage_sr, run_stage_texel, run_stage_vertex, write_trace_csv, PipelineConfig,
    RegressorReport, RoundReport, StageId, TexelResult, TraceEntry,
};
use crate::tracking::write_correspondences_csv;

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
}

impl RunOutputs {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        RunOutputs {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn states(&self, stage: StageId) -> PathBuf {
        self.dir.join(format!("states_{}.bin", stage.name()))
    }

    pub fn texture(&self, stage: StageId) -> PathBuf {
        self.dir.join(format!("texture_{}.bin", stage.name()))
    }

    pub fn offsets(&self, stage: StageId) -> PathBuf {
        self.dir.join(format!("offsets_{}.bin", stage.name()))
    }

    pub fn trace(&self, stage: StageId) -> PathBuf {
        self.dir.join(format!("trace_{}.csv", stage.name()))
    }

    pub fn correspondences(&self, stage: StageId) -> PathBuf {
        self.dir.join(format!("correspondences_{}.csv", stage.name()))
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn export_dir(&self) -> PathBuf {
        self.dir.join("export")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<String>,
    /// Output name to path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub metrics: Vec<StageMetrics>,
    pub regressor: Option<RegressorReport>,
    pub rounds: Vec<RoundReport>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Checks that the manifest was produced with `cfg`.
    pub fn verify(&self, cfg: &PipelineConfig) -> Result<()> {
        let h = config_hash(cfg);
        if h != self.config_sha256 {
            return Err(Error::invalid(format!(
                "run directory was produced with config {} but the current config hashes to {h}",
                self.config_sha256
            )));
        }
        Ok(())
    }

    fn record(&mut self, stage: StageId, key: &str, path: &Path, outputs: &RunOutputs) {
        let rel = path.strip_prefix(&outputs.dir).unwrap_or(path);
        self.outputs.insert(key.to_string(), rel.to_string_lossy().into_owned());
        let name = stage.name().to_string();
        if !self.stages.contains(&name) {
            self.stages.push(name);
        }
    }
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(format!("{what} ({}); run the previous stage first", path.display())))
    }
}

fn flatten_traces(stage: StageId, per_frame: &[Vec<crate::pipeline::LossReport>], frames: usize) -> Vec<TraceEntry> {
    per_frame
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.iter().enumerate().map(move |(i, r)| (stage, Some(k % frames.max(1)), i, *r)))
        .collect()
}

/// Reloads the texel-stage result from the run directory.
fn load_texel(scene: &SyntheticScene, cfg: &PipelineConfig, out: &RunOutputs) -> Result<TexelResult> {
    require(&out.texture(StageId::Texel), "texel texture")?;
    require(&out.offsets(StageId::Texel), "texel offsets")?;
    let texture = read_texture(out.texture(StageId::Texel))?;
    let offsets = read_offsets(out.offsets(StageId::Texel))?;
    let anchors = init_texel_anchors(&scene.model.mesh, cfg.texel_resolution);
    if anchors.mask() != texture.mask {
        return Err(Error::invalid("texel texture coverage does not match the template"));
    }
    Ok(TexelResult {
        texture,
        anchors,
        offsets,
        correspondences: Vec::new(),
        trace: Vec::new(),
    })
}

/// Anchors of a stored texture: texel coverage restricted to the texture mask.
fn anchors_for(scene: &SyntheticScene, tex: &GaussianTexture) -> TexelAnchors {
    init_texel_anchors(&scene.model.mesh, tex.resolution).restricted(&tex.mask)
}

/// Runs `stages` (in pipeline order) and writes their outputs under `dir`.
pub fn align_scene(
    scene: &SyntheticScene,
    cfg: &PipelineConfig,
    dir: impl AsRef<Path>,
    stages: &[StageId],
) -> Result<RunManifest> {
    cfg.validate()?;
    let out = RunOutputs::new(dir);
    fs::create_dir_all(&out.dir)?;
    let hash = config_hash(cfg);
    let mut manifest = match RunManifest::load(out.manifest()) {
        Ok(m) if m.config_sha256 == hash => m,
        _ => RunManifest {
            config_sha256: hash,
            seed: cfg.seed,
            ..RunManifest::default()
        },
    };
    fs::write(out.config(), cfg.to_toml())?;
    let nf = scene.frame_count();
    for stage in StageId::ALL.into_iter().filter(|s| stages.contains(s)) {
        log::info!("stage {}", stage.name());
        match stage {
            StageId::Depth => {
                let r = run_stage_depth(scene, cfg)?;
                write_states(out.states(stage), &r.states)?;
                write_trace_csv(out.trace(stage), &flatten_traces(stage, &r.traces, nf))?;
                manifest.regressor = r.regressor;
                manifest.record(stage, "states_depth", &out.states(stage), &out);
            }
            StageId::Vertex => {
                require(&out.states(StageId::Depth), "depth-stage states")?;
                let init = read_states(out.states(StageId::Depth))?;
                let r = run_stage_vertex(scene, cfg, &init)?;
                write_states(out.states(stage), &r.states)?;
                write_trace_csv(out.trace(stage), &flatten_traces(stage, &r.traces, nf))?;
                write_correspondences_csv(out.correspondences(stage), &r.correspondences)?;
                manifest.rounds = r.rounds;
                manifest.record(stage, "states_vertex", &out.states(stage), &out);
                manifest.record(stage, "correspondences_vertex", &out.correspondences(stage), &out);
            }
            StageId::Texel => {
                require(&out.states(StageId::Vertex), "vertex-stage states")?;
                let states = read_states(out.states(StageId::Vertex))?;
                let r = run_stage_texel(scene, cfg, &states)?;
                write_texture(out.texture(stage), &r.texture)?;
                write_offsets(out.offsets(stage), &r.offsets)?;
                let trace: Vec<TraceEntry> = r.trace.iter().enumerate().map(|(i, (f, t))| (stage, Some(*f), i, *t)).collect();
                write_trace_csv(out.trace(stage), &trace)?;
                write_correspondences_csv(out.correspondences(stage), &r.correspondences)?;
                manifest.record(stage, "texture_texel", &out.texture(stage), &out);
                manifest.record(stage, "offsets_texel", &out.offsets(stage), &out);
            }
            StageId::Sr => {
                require(&out.states(StageId::Vertex), "vertex-stage states")?;
                let states = read_states(out.states(StageId::Vertex))?;
                let texel = load_texel(scene, cfg, &out)?;
                let r = run_stage_sr(scene, cfg, &states, &texel)?;
                write_texture(out.texture(stage), &r.texture)?;
                write_offsets(out.offsets(stage), &r.offsets)?;
                let trace: Vec<TraceEntry> = r.trace.iter().enumerate().map(|(i, (f, t))| (stage, Some(*f), i, *t)).collect();
                write_trace_csv(out.trace(stage), &trace)?;
                manifest.record(stage, "texture_sr", &out.texture(stage), &out);
                manifest.record(stage, "offsets_sr", &out.offsets(stage), &out);
            }
        }
        manifest.save(out.manifest())?;
    }
    Ok(manifest)
}

/// Evaluates every stage output present in `dir` and writes `metrics.csv`, one
/// row per stage starting with the undeformed initialization.
pub fn evaluate_run(scene: &SyntheticScene, cfg: &PipelineConfig, dir: impl AsRef<Path>) -> Result<Vec<StageMetrics>> {
    let out = RunOutputs::new(dir);
    let init: Vec<DeformationState> = (0..scene.frame_count()).map(|_| DeformationState::for_model(&scene.model)).collect();
    let (res, eps) = (cfg.static_texture_resolution, cfg.visibility_eps);
    let mut rows = vec![evaluate_states(scene, "init", &init, res, eps)?];
    for stage in [StageId::Depth, StageId::Vertex] {
        if out.states(stage).exists() {
            let states = read_states(out.states(stage))?;
            rows.push(evaluate_states(scene, stage.name(), &states, res, eps)?);
        }
    }
    for stage in [StageId::Texel, StageId::Sr] {
        if out.texture(stage).exists() {
            require(&out.states(StageId::Vertex), "vertex-stage states")?;
            require(&out.offsets(stage), "texel offsets")?;
            let states = read_states(out.states(StageId::Vertex))?;
            let tex = read_texture(out.texture(stage))?;
            let offsets = read_offsets(out.offsets(stage))?;
            let anchors = anchors_for(scene, &tex);
            rows.push(evaluate_splats(scene, stage.name(), &states, &tex, &anchors, &offsets)?);
        }
    }
    write_metrics_csv(out.metrics(), &rows)?;
    let mut manifest = RunManifest::load(out.manifest()).unwrap_or_else(|_| RunManifest {
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        ..RunManifest::default()
    });
    manifest.metrics = rows.clone();
    manifest.outputs.insert("metrics".into(), "metrics.csv".into());
    manifest.save(out.manifest())?;
    Ok(rows)
}

/// Writes per-frame OBJ/PLY meshes of the latest geometry stage, the texel mesh
/// of the latest texel stage and held-out PNG renders under `dir/export`.
pub fn export_run(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = RunOutputs::new(dir);
    let exp = out.export_dir();
    fs::create_dir_all(&exp)?;
    let mut written = Vec::new();
    let geo_stage = [StageId::Vertex, StageId::Depth]
        .into_iter()
        .find(|s| out.states(*s).exists())
        .ok_or_else(|| Error::Missing("no depth or vertex states to export; run align first".into()))?;
    let states = read_states(out.states(geo_stage))?;
    let geo = frame_geometry(scene, &states)?;
    for (f, (_, posed)) in geo.iter().enumerate() {
        for ext in ["obj", "ply"] {
            let p = exp.join(format!("{}_f{f}.{ext}", geo_stage.name()));
            save_mesh(&scene.model.mesh, posed, &p)?;
            written.push(p);
        }
    }
    let tex_stage = [StageId::Sr, StageId::Texel].into_iter().find(|s| out.texture(*s).exists());
    if let Some(stage) = tex_stage {
        require(&out.offsets(stage), "texel offsets")?;
        let tex = read_texture(out.texture(stage))?;
        let offsets = read_offsets(out.offsets(stage))?;
        let anchors = anchors_for(scene, &tex);
        let mesh = &scene.model.mesh;
        for (f, (canonical, _)) in geo.iter().enumerate() {
            let tr = texel_skinning(&anchors, &scene.model, &scene.poses[f])?;
            let splats = pose_texture(&tex, &anchors, mesh, canonical, &tr, offsets.get(f).map(|o| o.as_slice()))?;
            let tm = texels_to_mesh(&tex, &splats, mesh)?;
            let p = exp.join(format!("texels_{}_f{f}.obj", stage.name()));
            write_obj(&p, &tm.vertices, &tm.faces, Some((&tm.uvs, &tm.faces)), None)?;
            written.push(p);
        }
        let renders = render_splat_views(scene, &states, &tex, &anchors, &offsets)?;
        for (f, row) in renders.iter().enumerate() {
            for (img, c) in row.iter().zip(scene.held_out_cameras()) {
                let p = exp.join(format!("render_{}_f{f}_c{c}.png", stage.name()));
                write_png(&p, img)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
