use crate::camera::ColorImage;
use crate::error::{Error, Result};

const WIN: usize = 11;
const HALF: usize = WIN / 2;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
}

fn check(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dim("image pixels", a.width * a.height, b.width * b.height));
    }
    Ok(())
}

pub fn image_metrics(a: &ColorImage, b: &ColorImage) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        l1: l1_loss(a, b)?.0,
        ssim: ssim(a, b)?,
        psnr: psnr(a, b)?,
    })
}

/// Mean absolute error over pixels and channels, with its gradient in `pred`.
pub fn l1_loss(pred: &ColorImage, gt: &ColorImage) -> Result<(f64, Vec<[f64; 3]>)> {
    check(pred, gt)?;
    let n = (pred.pixels.len() * 3) as f64;
    let mut sum = 0.0;
    let grad = pred
        .pixels
        .iter()
        .zip(&gt.pixels)
        .map(|(p, g)| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                let d = p[c] - g[c];
                sum += d.abs();
                out[c] = if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                };
            }
            out
        })
        .collect();
    Ok((sum / n, grad))
}

/// `10 log10(1 / MSE)` on the unit range, capped at 99 dB.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    check(a, b)?;
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (a.pixels.len() * 3) as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn kernel() -> [f64; WIN] {
    let mut k = [0.0; WIN];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Gaussian filter evaluated only where the whole window fits.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> Vec<f64> {
    let (vw, vh) = (w - WIN + 1, h - WIN + 1);
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            tmp[y * vw + x] = (0..WIN).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            out[y * vw + x] = (0..WIN).map(|i| k[i] * tmp[(y + i) * vw + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> Vec<f64> {
    let (vw, vh) = (w - WIN + 1, h - WIN + 1);
    let mut tmp = vec![0.0; vw * h];
    for y in 0..vh {
        for x in 0..vw {
            for i in 0..WIN {
                tmp[(y + i) * vw + x] += k[i] * g[y * vw + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..vw {
            for i in 0..WIN {
                out[y * w + x + i] += k[i] * tmp[y * vw + x];
            }
        }
    }
    out
}

fn channel(img: &ColorImage, c: usize) -> Vec<f64> {
    img.pixels.iter().map(|p| p[c]).collect()
}

fn ssim_impl(pred: &ColorImage, gt: &ColorImage, want_grad: bool) -> Result<(f64, Vec<[f64; 3]>)> {
    check(pred, gt)?;
    let (w, h) = (pred.width, pred.height);
    if w < WIN || h < WIN {
        return Err(Error::invalid(format!("SSIM needs images of at least {WIN}x{WIN}, got {w}x{h}")));
    }
    let k = kernel();
    let nvalid = (w - WIN + 1) * (h - WIN + 1);
    let norm = (3 * nvalid) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![[0.0; 3]; w * h] } else { Vec::new() };
    for c in 0..3 {
        let x = channel(pred, c);
        let y = channel(gt, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let mut da = vec![0.0; nvalid];
        let mut db = vec![0.0; nvalid];
        let mut dc = vec![0.0; nvalid];
        for i in 0..nvalid {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * (exy[i] - ux * uy) + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                da[i] = s * (2.0 * uy / a1 - 2.0 * ux / b1 + 2.0 * ux / b2 - 2.0 * uy / a2) / norm;
                db[i] = -s / b2 / norm;
                dc[i] = 2.0 * s / a2 / norm;
            }
        }
        if want_grad {
            let ga = filter_valid_adjoint(&da, w, h, &k);
            let gb = filter_valid_adjoint(&db, w, h, &k);
            let gc = filter_valid_adjoint(&dc, w, h, &k);
            for p in 0..w * h {
                grad[p][c] = ga[p] + 2.0 * x[p] * gb[p] + y[p] * gc[p];
            }
        }
    }
    Ok((total / norm, grad))
}

/// Mean SSIM over channels and full-window positions (11x11 Gaussian window,
/// sigma 1.5, unit data range).
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// `1 - SSIM` and its gradient in `pred`.
pub fn ssim_loss(pred: &ColorImage, gt: &ColorImage) -> Result<(f64, Vec<[f64; 3]>)> {
    let (s, g) = ssim_impl(pred, gt, true)?;
    Ok((1.0 - s, g.into_iter().map(|v| v.map(|x| -x)).collect()))
}
