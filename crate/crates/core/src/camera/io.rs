use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camera, ColorImage, DepthMap};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub fn write_png(path: impl AsRef<Path>, img: &ColorImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (k, px) in buf.pixels_mut().enumerate() {
        let p = img.pixels[k];
        *px = image::Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    buf.save(path).map_err(|e| Error::Image(e.to_string()))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    Ok(ColorImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect(),
    })
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 4 * data.len());
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(out, "{tag}\n{width} {height}\n-1.0\n")?;
    // rows are stored bottom to top
    for y in (0..height).rev() {
        for v in &data[y * width * channels..(y + 1) * width * channels] {
            out.extend(v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut header = Vec::new();
    for line_no in 1..=3 {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or(Error::Parse {
            line: line_no,
            msg: "truncated PFM header".into(),
        })?;
        header.push(String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string());
        pos += end + 1;
    }
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown PFM tag `{other}`"),
            })
        }
    };
    let dims: Vec<usize> = header[1].split_whitespace().filter_map(|t| t.parse().ok()).collect();
    if dims.len() != 2 {
        return Err(Error::Parse {
            line: 2,
            msg: "expected `width height`".into(),
        });
    }
    let scale: f64 = header[2].parse().map_err(|_| Error::Parse {
        line: 3,
        msg: "bad scale".into(),
    })?;
    let (w, h) = (dims[0], dims[1]);
    let n = w * h * channels;
    if bytes.len() - pos < 4 * n {
        return Err(Error::Parse {
            line: 4,
            msg: format!("PFM body holds {} bytes, expected {}", bytes.len() - pos, 4 * n),
        });
    }
    let raw: Vec<f32> = bytes[pos..pos + 4 * n]
        .chunks_exact(4)
        .map(|c| {
            let a: [u8; 4] = c.try_into().unwrap();
            if scale < 0.0 {
                f32::from_le_bytes(a)
            } else {
                f32::from_be_bytes(a)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(n);
    for y in (0..h).rev() {
        data.extend_from_slice(&raw[y * w * channels..(y + 1) * w * channels]);
    }
    Ok((w, h, channels, data))
}

impl DepthMap {
    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pfm(path.as_ref(), self.width, self.height, 1, &self.data)
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
        let (width, height, c, data) = read_pfm(path.as_ref())?;
        if c != 1 {
            return Err(Error::invalid("depth PFM must have one channel"));
        }
        Ok(DepthMap { width, height, data })
    }
}

pub fn write_pfm_color(path: impl AsRef<Path>, img: &ColorImage) -> Result<()> {
    let data: Vec<f32> = img.pixels.iter().flat_map(|p| p.map(|c| c as f32)).collect();
    write_pfm(path.as_ref(), img.width, img.height, 3, &data)
}

pub fn read_pfm_color(path: impl AsRef<Path>) -> Result<ColorImage> {
    let (width, height, c, data) = read_pfm(path.as_ref())?;
    if c != 3 {
        return Err(Error::invalid("color PFM must have three channels"));
    }
    Ok(ColorImage {
        width,
        height,
        pixels: data.chunks(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect(),
    })
}

/// JSON form of a camera: intrinsics, 3x4 world-to-camera extrinsics, image size.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraDoc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsics: [[f64; 4]; 3],
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraDoc {
    fn from(c: &Camera) -> Self {
        let mut e = [[0.0; 4]; 3];
        for (r, row) in e.iter_mut().enumerate() {
            for k in 0..3 {
                row[k] = c.rotation[(r, k)];
            }
            row[3] = c.translation[r];
        }
        CameraDoc {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            extrinsics: e,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraDoc {
    pub fn to_camera(&self) -> Result<Camera> {
        let e = &self.extrinsics;
        let r = Mat3::from_fn(|i, j| e[i][j]);
        let t = Vec3::new(e[0][3], e[1][3], e[2][3]);
        Camera::new(self.fx, self.fy, self.cx, self.cy, r, t, self.width, self.height)
    }
}

pub fn write_cameras(path: impl AsRef<Path>, cams: &[Camera]) -> Result<()> {
    let docs: Vec<CameraDoc> = cams.iter().map(CameraDoc::from).collect();
    fs::write(path, serde_json::to_string_pretty(&docs)?)?;
    Ok(())
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let docs: Vec<CameraDoc> = serde_json::from_str(&fs::read_to_string(path)?)?;
    docs.iter().map(|d| d.to_camera()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap {
            width: 3,
            height: 2,
            data: vec![1.0, 2.0, f32::INFINITY, 4.5, 5.25, 6.0],
        };
        let p = dir.path().join("d.pfm");
        d.write_pfm(&p).unwrap();
        assert_eq!(DepthMap::read_pfm(&p).unwrap(), d);

        let img = ColorImage {
            width: 2,
            height: 2,
            pixels: vec![[0.0, 0.5, 1.0], [1.0, 0.0, 0.2], [0.3, 0.3, 0.3], [0.9, 0.1, 0.0]],
        };
        let q = dir.path().join("i.png");
        write_png(&q, &img).unwrap();
        assert_eq!(read_png(&q).unwrap(), img.quantized());
        let c = dir.path().join("i.pfm");
        write_pfm_color(&c, &img).unwrap();
        let back = read_pfm_color(&c).unwrap();
        assert!(back.pixels.iter().zip(&img.pixels).all(|(a, b)| (0..3).all(|k| (a[k] - b[k]).abs() < 1e-7)));
    }

    #[test]
    fn cameras_round_trip() {
        let cam = Camera::look_at(Vec3::new(1.0, 0.5, -2.0), Vec3::zeros(), Vec3::y(), 120.0, 64, 48).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cams.json");
        write_cameras(&p, &[cam.clone()]).unwrap();
        let back = read_cameras(&p).unwrap();
        assert_eq!(back[0], cam);
    }
}
