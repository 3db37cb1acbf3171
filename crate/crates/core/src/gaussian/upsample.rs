use super::{GaussianTexture, STORED_CHANNELS};
use crate::error::{Error, Result};

/// Bilinear parents of child texel `i` at twice the resolution: indices into the
/// parent row and their weights (half-texel aligned, border clamped).
fn parents(i: usize, r: usize) -> [(usize, f64); 2] {
    let x = (i as f64 + 0.5) / 2.0 - 0.5;
    let x0 = x.floor();
    let f = x - x0;
    let clamp = |v: f64| v.clamp(0.0, (r - 1) as f64) as usize;
    [(clamp(x0), 1.0 - f), (clamp(x0 + 1.0), f)]
}

/// Child coverage: covered iff all four bilinear parents are covered.
pub fn upsample_mask(mask: &[bool], r: usize) -> Vec<bool> {
    let r2 = 2 * r;
    let mut out = vec![false; r2 * r2];
    for j in 0..r2 {
        let py = parents(j, r);
        for i in 0..r2 {
            let px = parents(i, r);
            out[j * r2 + i] = py.iter().all(|&(y, _)| px.iter().all(|&(x, _)| mask[y * r + x]));
        }
    }
    out
}

/// Bilinear upsampling of every raw channel plus `residual`. The result is
/// covered where the conservative mask and `residual.mask` agree.
pub fn upsample_texture(tex: &GaussianTexture, residual: &GaussianTexture) -> Result<GaussianTexture> {
    let r = tex.resolution;
    let r2 = 2 * r;
    if residual.resolution != r2 {
        return Err(Error::dim("residual resolution", r2, residual.resolution));
    }
    let mask = upsample_mask(&tex.mask, r);
    let mut out = GaussianTexture::empty(r2);
    out.offset_limit = tex.offset_limit;
    for j in 0..r2 {
        let py = parents(j, r);
        for i in 0..r2 {
            let k = j * r2 + i;
            if !(mask[k] && residual.mask[k]) {
                continue;
            }
            out.mask[k] = true;
            let px = parents(i, r);
            let dst = &mut out.params[k * STORED_CHANNELS..(k + 1) * STORED_CHANNELS];
            dst.copy_from_slice(residual.texel(k));
            for &(y, wy) in &py {
                for &(x, wx) in &px {
                    let w = wx * wy;
                    if w == 0.0 {
                        continue;
                    }
                    for (d, s) in dst.iter_mut().zip(tex.texel(y * r + x)) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    Ok(out)
}
