use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaussianTexture, CHANNEL_NAMES, STORED_CHANNELS};
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::math::Vec3;

const TEXTURE_KIND: &str = "gaussian_texture";
const OFFSETS_KIND: &str = "texel_offsets";

/// Payload: the coverage plane, then one `R x R` plane per stored channel.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TextureHeader {
    pub kind: String,
    pub resolution: usize,
    pub channels: Vec<String>,
    pub stored_channels: usize,
    pub offset_limit: f64,
}

pub fn write_texture(path: impl AsRef<Path>, tex: &GaussianTexture) -> Result<()> {
    let header = TextureHeader {
        kind: TEXTURE_KIND.into(),
        resolution: tex.resolution,
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        stored_channels: STORED_CHANNELS,
        offset_limit: tex.offset_limit,
    };
    let n = tex.resolution * tex.resolution;
    let mut data = Vec::with_capacity(n * (STORED_CHANNELS + 1));
    data.extend(tex.mask.iter().map(|&m| if m { 1.0f32 } else { 0.0 }));
    for c in 0..STORED_CHANNELS {
        data.extend((0..n).map(|k| tex.params[k * STORED_CHANNELS + c] as f32));
    }
    write_container(path, &header, &data)
}

pub fn read_texture(path: impl AsRef<Path>) -> Result<GaussianTexture> {
    let (h, data): (TextureHeader, Vec<f32>) = read_container(path)?;
    if h.kind != TEXTURE_KIND || h.stored_channels != STORED_CHANNELS {
        return Err(Error::invalid(format!("not a {STORED_CHANNELS}-channel gaussian texture container")));
    }
    let n = h.resolution * h.resolution;
    if data.len() != n * (STORED_CHANNELS + 1) {
        return Err(Error::dim("texture payload", n * (STORED_CHANNELS + 1), data.len()));
    }
    let mut tex = GaussianTexture::empty(h.resolution);
    tex.offset_limit = h.offset_limit;
    tex.mask = data[..n].iter().map(|&v| v != 0.0).collect();
    for c in 0..STORED_CHANNELS {
        for k in 0..n {
            tex.params[k * STORED_CHANNELS + c] = data[(c + 1) * n + k] as f64;
        }
    }
    Ok(tex)
}

#[derive(Serialize, Deserialize)]
struct OffsetsHeader {
    kind: String,
    frames: usize,
    texels: usize,
}

/// Per-frame raw offsets of the covered texels.
pub fn write_offsets(path: impl AsRef<Path>, offsets: &[Vec<Vec3>]) -> Result<()> {
    let texels = offsets.first().map_or(0, |o| o.len());
    if let Some(bad) = offsets.iter().find(|o| o.len() != texels) {
        return Err(Error::dim("texel offsets per frame", texels, bad.len()));
    }
    let header = OffsetsHeader {
        kind: OFFSETS_KIND.into(),
        frames: offsets.len(),
        texels,
    };
    let data: Vec<f32> = offsets.iter().flatten().flat_map(|v| v.iter().map(|&x| x as f32).collect::<Vec<_>>()).collect();
    write_container(path, &header, &data)
}

pub fn read_offsets(path: impl AsRef<Path>) -> Result<Vec<Vec<Vec3>>> {
    let (h, data): (OffsetsHeader, Vec<f32>) = read_container(path)?;
    if h.kind != OFFSETS_KIND {
        return Err(Error::invalid("not a texel offsets container"));
    }
    if data.len() != h.frames * h.texels * 3 {
        return Err(Error::dim("offsets payload", h.frames * h.texels * 3, data.len()));
    }
    Ok(data
        .chunks(h.texels * 3)
        .take(h.frames)
        .map(|f| f.chunks(3).map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_and_offsets_round_trip() {
        let mut t = GaussianTexture::empty(4);
        for k in [1usize, 5, 6, 15] {
            t.mask[k] = true;
            for (c, v) in t.texel_mut(k).iter_mut().enumerate() {
                *v = (k * 100 + c) as f64 * 0.25;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        write_texture(&p, &t).unwrap();
        assert_eq!(read_texture(&p).unwrap(), t);

        let offs = vec![vec![Vec3::new(0.5, -1.0, 2.0); 3], vec![Vec3::new(0.25, 0.0, -0.5); 3]];
        let q = dir.path().join("o.bin");
        write_offsets(&q, &offs).unwrap();
        assert_eq!(read_offsets(&q).unwrap(), offs);
        assert!(read_texture(&q).is_err());
    }
}
