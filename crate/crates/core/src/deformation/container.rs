use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DeformationState;
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StateHeader {
    pub kind: String,
    pub frames: usize,
    pub nodes: usize,
    pub vertices: usize,
    pub latent_dim: usize,
    /// Per-frame record order.
    pub layout: Vec<String>,
}

/// Writes a frame-major `f32` sequence of states.
pub fn write_states(path: impl AsRef<Path>, states: &[DeformationState]) -> Result<()> {
    let first = states.first().ok_or_else(|| Error::invalid("no states to write"))?;
    let header = StateHeader {
        kind: "deformation_states".into(),
        frames: states.len(),
        nodes: first.rotations.len(),
        vertices: first.deltas.len(),
        latent_dim: first.latent.len(),
        layout: ["rotations_wxyz", "translations", "deltas", "latent"].map(String::from).to_vec(),
    };
    let mut data = Vec::new();
    for s in states {
        if s.rotations.len() != header.nodes || s.deltas.len() != header.vertices || s.latent.len() != header.latent_dim {
            return Err(Error::invalid("states in a sequence must share their sizes"));
        }
        data.extend(s.params().iter().map(|&v| v as f32));
        data.extend(s.latent.iter().map(|&v| v as f32));
    }
    write_container(path, &header, &data)
}

pub fn read_states(path: impl AsRef<Path>) -> Result<Vec<DeformationState>> {
    let (h, data): (StateHeader, Vec<f32>) = read_container(path)?;
    if h.kind != "deformation_states" {
        return Err(Error::invalid(format!("expected a deformation_states container, found `{}`", h.kind)));
    }
    let p = DeformationState::param_count(h.nodes, h.vertices);
    let stride = p + h.latent_dim;
    if data.len() != stride * h.frames {
        return Err(Error::dim("state container values", stride * h.frames, data.len()));
    }
    data.chunks(stride)
        .map(|c| {
            let v: Vec<f64> = c.iter().map(|&x| x as f64).collect();
            DeformationState::from_params(&v[..p], h.nodes, h.vertices, v[p..].to_vec())
        })
        .collect()
}
