//! Loss assembly, the optimizer and the four training stages.
//!
//! Lengths inside the objectives are measured in `length_scale` units (default
//! millimeters): Chamfer and correspondence terms scale with its square, the
//! Laplacian terms linearly, the normal term not at all. Loss reports carry the
//! scaled values. The texel stages sit next to unitless image losses and keep
//! their correspondence term in meters.

mod losses;
mod nn;
mod optim;
mod stages;

pub use losses::{corr_loss, corr_loss_with_grad, spatial_losses, SpatialContext, SpatialGrads, SpatialTerms};
pub use nn::{chamfer, chamfer_against, chamfer_average, chamfer_with_grad, SpatialGrid, SurfaceSampler};
pub use optim::{cosine_lr, optimize, renormalize_quaternions, Adam};
pub use stages::{
    frame_geometry, initial_texture, run_stage_depth, run_stage_sr, run_stage_texel, run_stage_vertex, texel_correspondences,
    sr_initial, vertex_correspondences, DepthResult, RegressorReport, RoundReport, SrResult, TexelResult, VertexResult,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    Depth,
    Vertex,
    Texel,
    Sr,
}

impl StageId {
    pub const ALL: [StageId; 4] = [StageId::Depth, StageId::Vertex, StageId::Texel, StageId::Sr];

    pub fn name(self) -> &'static str {
        match self {
            StageId::Depth => "depth",
            StageId::Vertex => "vertex",
            StageId::Texel => "texel",
            StageId::Sr => "sr",
        }
    }
}

impl std::str::FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageId::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}` (expected depth, vertex, texel or sr)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub chamfer: f64,
    pub lapz: f64,
    pub lap: f64,
    pub norm: f64,
    pub cor_vrt: f64,
    pub cor_tex: f64,
    pub l1: f64,
    pub ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            chamfer: 0.01,
            lapz: 0.1,
            lap: 0.01,
            norm: 2.5,
            cor_vrt: 0.02,
            cor_tex: 0.2,
            l1: 0.8,
            ssim: 0.2,
        }
    }
}

impl LossWeights {
    /// Default weights with the terms a stage does not use set to zero.
    pub fn for_stage(stage: StageId) -> Self {
        let d = LossWeights::default();
        let none = LossWeights {
            chamfer: 0.0,
            lapz: 0.0,
            lap: 0.0,
            norm: 0.0,
            cor_vrt: 0.0,
            cor_tex: 0.0,
            l1: 0.0,
            ssim: 0.0,
        };
        match stage {
            StageId::Depth => LossWeights { cor_vrt: 0.0, cor_tex: 0.0, l1: 0.0, ssim: 0.0, ..d },
            StageId::Vertex => LossWeights { cor_tex: 0.0, l1: 0.0, ssim: 0.0, ..d },
            StageId::Texel => LossWeights { cor_tex: d.cor_tex, l1: d.l1, ssim: d.ssim, ..none },
            StageId::Sr => LossWeights { l1: d.l1, ssim: d.ssim, ..none },
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.chamfer, self.lapz, self.lap, self.norm, self.cor_vrt, self.cor_tex, self.l1, self.ssim];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageId,
    pub iterations: usize,
    pub lr: f64,
    #[serde(default = "yes")]
    pub cosine: bool,
    pub weights: LossWeights,
    #[serde(default = "one")]
    pub rounds: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl StageConfig {
    pub fn default_for(stage: StageId) -> Self {
        let (iterations, lr, rounds) = match stage {
            StageId::Depth => (300, 1e-3, 1),
            StageId::Vertex => (200, 1e-3, 2),
            StageId::Texel => (480, 1e-2, 1),
            StageId::Sr => (240, 5e-3, 1),
        };
        StageConfig {
            stage,
            iterations,
            lr,
            cosine: true,
            weights: LossWeights::for_stage(stage),
            rounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("{} stage learning rate must be non-negative", self.stage.name())));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrackerKind {
    #[default]
    Oracle,
    Longterm,
}

impl std::str::FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TrackerKind::Oracle),
            "longterm" => Ok(TrackerKind::Longterm),
            _ => Err(Error::invalid(format!("unknown tracker `{s}` (expected oracle or longterm)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub kind: TrackerKind,
    /// Pixel noise standard deviation.
    pub noise_sigma: f64,
    pub outlier_rate: f64,
    /// Per-frame random-walk step of the long-term tracker, pixels.
    pub step_sigma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            kind: TrackerKind::Oracle,
            noise_sigma: 0.2,
            outlier_rate: 0.02,
            step_sigma: 0.5,
        }
    }
}

/// Everything the aligner reads from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub length_scale: f64,
    /// Barycentric lattice level of the Chamfer surface samples.
    pub sample_level: usize,
    pub gate: f64,
    pub visibility_eps: f64,
    pub tracker: TrackerConfig,
    pub static_texture_resolution: usize,
    pub texel_resolution: usize,
    /// Step multiplier of the per-frame texel offsets relative to the texel lr.
    pub offset_step: f64,
    pub regressor_window: usize,
    pub regressor_lambda: f64,
    pub depth: StageConfig,
    pub vertex: StageConfig,
    pub texel: StageConfig,
    pub sr: StageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            length_scale: 1000.0,
            sample_level: 2,
            gate: crate::tracking::DEFAULT_GATE,
            visibility_eps: crate::camera::DEFAULT_VISIBILITY_EPS,
            tracker: TrackerConfig::default(),
            static_texture_resolution: 128,
            texel_resolution: 32,
            offset_step: 20.0,
            regressor_window: 3,
            regressor_lambda: 1e-4,
            depth: StageConfig::default_for(StageId::Depth),
            vertex: StageConfig::default_for(StageId::Vertex),
            texel: StageConfig::default_for(StageId::Texel),
            sr: StageConfig::default_for(StageId::Sr),
        }
    }
}

impl PipelineConfig {
    pub fn stage(&self, id: StageId) -> &StageConfig {
        match id {
            StageId::Depth => &self.depth,
            StageId::Vertex => &self.vertex,
            StageId::Texel => &self.texel,
            StageId::Sr => &self.sr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for id in StageId::ALL {
            let s = self.stage(id);
            if s.stage != id {
                return Err(Error::invalid(format!("config section `{}` declares stage `{}`", id.name(), s.stage.name())));
            }
            s.validate()?;
        }
        if !(self.length_scale > 0.0) {
            return Err(Error::invalid("length_scale must be positive"));
        }
        if self.texel_resolution == 0 || self.static_texture_resolution == 0 {
            return Err(Error::invalid("texture resolutions must be positive"));
        }
        Ok(())
    }

    /// Reads a TOML (`.toml`) or JSON config. Missing keys, including ones inside
    /// a stage table, take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let given: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            let v: toml::Value = toml::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
            serde_json::to_value(v)?
        };
        let mut merged = serde_json::to_value(PipelineConfig::default())?;
        merge(&mut merged, given);
        let cfg: PipelineConfig =
            serde_json::from_value(merged).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Per-term loss values and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub chamfer: f64,
    pub lap: f64,
    pub lapz: f64,
    pub norm: f64,
    pub cor_vrt: f64,
    pub cor_tex: f64,
    pub l1: f64,
    pub ssim: f64,
    pub total: f64,
}

impl LossReport {
    fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("chamfer", self.chamfer),
            ("lap", self.lap),
            ("lapz", self.lapz),
            ("norm", self.norm),
            ("cor_vrt", self.cor_vrt),
            ("cor_tex", self.cor_tex),
            ("l1", self.l1),
            ("ssim", self.ssim),
        ]
    }

    /// Sets `total` to the weighted sum of the terms.
    pub fn weighted(mut self, w: &LossWeights) -> Self {
        self.total = w.chamfer * self.chamfer
            + w.lap * self.lap
            + w.lapz * self.lapz
            + w.norm * self.norm
            + w.cor_vrt * self.cor_vrt
            + w.cor_tex * self.cor_tex
            + w.l1 * self.l1
            + w.ssim * self.ssim;
        self
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.terms() {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }
        if !self.total.is_finite() {
            return Err(Error::NonFinite { term: "total".into() });
        }
        Ok(())
    }

    /// Termwise sum, used to accumulate reports over frames.
    pub fn add(&mut self, o: &LossReport) {
        self.chamfer += o.chamfer;
        self.lap += o.lap;
        self.lapz += o.lapz;
        self.norm += o.norm;
        self.cor_vrt += o.cor_vrt;
        self.cor_tex += o.cor_tex;
        self.l1 += o.l1;
        self.ssim += o.ssim;
        self.total += o.total;
    }
}

/// One loss-trace entry: stage, frame (`-1` for shared steps), iteration, report.
pub type TraceEntry = (StageId, Option<usize>, usize, LossReport);

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "stage", "frame", "iteration", "chamfer", "lap", "lapz", "norm", "cor_vrt", "cor_tex", "l1", "ssim", "total",
    ])?;
    for (stage, frame, it, r) in trace {
        let mut row = vec![stage.name().to_string(), frame.map_or(-1, |f| f as i64).to_string(), it.to_string()];
        for v in [r.chamfer, r.lap, r.lapz, r.norm, r.cor_vrt, r.cor_tex, r.l1, r.ssim, r.total] {
            row.push(v.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
