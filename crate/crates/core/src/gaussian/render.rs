//! Point-sampled EWA splatting with front-to-back alpha compositing on a black
//! background, and its exact reverse-mode gradient.

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use super::pose::{SplatGrad, SplatSet};
use super::sh::{sh_basis, sh_color, SH_COEFFS};
use crate::camera::{Camera, ColorImage};
use crate::math::{Mat3, Vec2, Vec3};

const TILE: usize = 16;
const NEAR: f64 = 0.01;
const DILATION: f64 = 0.3;
const MAX_ALPHA: f64 = 0.99;
const MIN_ALPHA: f64 = 1.0 / 255.0;
const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: ColorImage,
    /// Accumulated opacity per pixel.
    pub alpha: Vec<f64>,
}

struct Projected {
    splat: usize,
    depth: f64,
    cam_point: Vec3,
    jac: Matrix2x3<f64>,
    mean: Vec2,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    clamped: [bool; 3],
    basis: [f64; SH_COEFFS],
}

struct Binned {
    projected: Vec<Projected>,
    /// Front-to-back projected indices per tile.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn project(splats: &SplatSet, cam: &Camera) -> Binned {
    let w = cam.rotation;
    let origin = cam.origin();
    let mut projected: Vec<(Projected, [usize; 4])> = (0..splats.len())
        .into_par_iter()
        .filter_map(|i| {
            let t = cam.to_camera(&splats.means[i]);
            if !(t.z > NEAR) {
                return None;
            }
            let jac = Matrix2x3::new(cam.fx / t.z, 0.0, -cam.fx * t.x / (t.z * t.z), 0.0, cam.fy / t.z, -cam.fy * t.y / (t.z * t.z));
            let tw = jac * w;
            let cov2 = tw * splats.covariances[i] * tw.transpose() + Matrix2::identity() * DILATION;
            let det = cov2.determinant();
            if !(det > 0.0) {
                return None;
            }
            let conic = Matrix2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det;
            let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
            let lambda = mid + (mid * mid - det).max(0.0).sqrt();
            let radius = 3.0 * lambda.sqrt();
            let mean = Vec2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
            // pixel centers sit at integer + 0.5
            let x0 = (mean.x - radius - 0.5).ceil().max(0.0);
            let x1 = (mean.x + radius - 0.5).floor().min(cam.width as f64 - 1.0);
            let y0 = (mean.y - radius - 0.5).ceil().max(0.0);
            let y1 = (mean.y + radius - 0.5).floor().min(cam.height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            let dir = (splats.means[i] - origin).normalize();
            let basis = sh_basis(&dir);
            let (color, clamped) = sh_color(&splats.sh[i], &basis);
            let bbox = [x0 as usize / TILE, x1 as usize / TILE, y0 as usize / TILE, y1 as usize / TILE];
            Some((
                Projected {
                    splat: i,
                    depth: t.z,
                    cam_point: t,
                    jac,
                    mean,
                    conic,
                    opacity: splats.opacities[i],
                    color,
                    clamped,
                    basis,
                },
                bbox,
            ))
        })
        .collect();
    projected.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.splat.cmp(&b.0.splat)));
    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, (_, b)) in projected.iter().enumerate() {
        for ty in b[2]..=b[3] {
            for tx in b[0]..=b[1] {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Binned {
        projected: projected.into_iter().map(|p| p.0).collect(),
        tiles,
        tiles_x,
    }
}

/// `(list position, alpha, gaussian)` of every splat blended at a pixel.
type Contribs = Vec<(usize, f64, f64)>;

fn composite(pixel: Vec2, list: &[u32], projected: &[Projected], contribs: &mut Contribs) -> ([f64; 3], f64) {
    contribs.clear();
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for (pos, &k) in list.iter().enumerate() {
        let p = &projected[k as usize];
        let d = pixel - p.mean;
        let power = -0.5 * (d.transpose() * p.conic * d)[0];
        if power > 0.0 {
            continue;
        }
        let g = power.exp();
        let alpha = (p.opacity * g).min(MAX_ALPHA);
        if alpha < MIN_ALPHA {
            continue;
        }
        for c in 0..3 {
            color[c] += t * alpha * p.color[c];
        }
        contribs.push((pos, alpha, g));
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (color, t)
}

fn tile_pixels(tile: usize, tiles_x: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let (w, h) = (cam.width, cam.height);
    (ty * TILE..((ty + 1) * TILE).min(h)).flat_map(move |y| (tx * TILE..((tx + 1) * TILE).min(w)).map(move |x| (x, y)))
}

pub fn render_splats(splats: &SplatSet, cam: &Camera) -> RenderOutput {
    let binned = project(splats, cam);
    let per_tile: Vec<Vec<(usize, [f64; 3], f64)>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut contribs = Vec::new();
            tile_pixels(tile, binned.tiles_x, cam)
                .map(|(x, y)| {
                    let (c, t) = composite(Vec2::new(x as f64 + 0.5, y as f64 + 0.5), list, &binned.projected, &mut contribs);
                    (y * cam.width + x, c, 1.0 - t)
                })
                .collect()
        })
        .collect();
    let mut image = ColorImage::new(cam.width, cam.height, [0.0; 3]);
    let mut alpha = vec![0.0; cam.width * cam.height];
    for (i, c, a) in per_tile.into_iter().flatten() {
        image.pixels[i] = c;
        alpha[i] = a;
    }
    RenderOutput { image, alpha }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vec2,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Gradient of `sum(grad_image * image)` with respect to the splats. The SH
/// view direction is treated as constant.
pub fn render_splats_backward(splats: &SplatSet, cam: &Camera, grad_image: &[[f64; 3]]) -> SplatGrad {
    assert_eq!(grad_image.len(), cam.width * cam.height, "gradient image size");
    let binned = project(splats, cam);
    let per_tile: Vec<Vec<ScreenGrad>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut acc = vec![ScreenGrad::default(); list.len()];
            let mut contribs = Vec::new();
            for (x, y) in tile_pixels(tile, binned.tiles_x, cam) {
                let dl = grad_image[y * cam.width + x];
                if dl == [0.0; 3] {
                    continue;
                }
                let pixel = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let (_, t_final) = composite(pixel, list, &binned.projected, &mut contribs);
                let mut t = t_final;
                let mut behind = [0.0; 3];
                for &(pos, alpha, g) in contribs.iter().rev() {
                    let p = &binned.projected[list[pos] as usize];
                    t /= 1.0 - alpha;
                    let a = &mut acc[pos];
                    let mut d_alpha = 0.0;
                    for c in 0..3 {
                        a.color[c] += alpha * t * dl[c];
                        d_alpha += dl[c] * (p.color[c] * t - behind[c] / (1.0 - alpha));
                        behind[c] += p.color[c] * alpha * t;
                    }
                    if p.opacity * g >= MAX_ALPHA {
                        continue;
                    }
                    a.opacity += d_alpha * g;
                    let d_power = d_alpha * p.opacity * g;
                    let d = pixel - p.mean;
                    let cd = p.conic * d;
                    a.mean += cd * d_power;
                    a.conic[0] += -0.5 * d.x * d.x * d_power;
                    a.conic[1] += -d.x * d.y * d_power;
                    a.conic[2] += -0.5 * d.y * d.y * d_power;
                }
            }
            acc
        })
        .collect();
    let mut screen = vec![ScreenGrad::default(); binned.projected.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (pos, g) in acc.iter().enumerate() {
            let s = &mut screen[binned.tiles[tile][pos] as usize];
            s.mean += g.mean;
            for c in 0..3 {
                s.conic[c] += g.conic[c];
                s.color[c] += g.color[c];
            }
            s.opacity += g.opacity;
        }
    }
    let w = cam.rotation;
    let chained: Vec<(usize, Vec3, Mat3, f64, [f64; 3 * SH_COEFFS])> = binned
        .projected
        .par_iter()
        .zip(&screen)
        .map(|(p, sg)| {
            let i = p.splat;
            let ga = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
            let g2 = -p.conic * ga * p.conic;
            let tw = p.jac * w;
            let cov = splats.covariances[i];
            let d_cov = tw.transpose() * g2 * tw;
            let d_tw = (g2 + g2.transpose()) * tw * cov;
            let d_jac = d_tw * w.transpose();
            let (x, y, z) = (p.cam_point.x, p.cam_point.y, p.cam_point.z);
            let (fx, fy) = (cam.fx, cam.fy);
            let mut d_t = p.jac.transpose() * sg.mean;
            d_t.x += d_jac[(0, 2)] * (-fx / (z * z));
            d_t.y += d_jac[(1, 2)] * (-fy / (z * z));
            d_t.z += d_jac[(0, 0)] * (-fx / (z * z))
                + d_jac[(0, 2)] * (2.0 * fx * x / (z * z * z))
                + d_jac[(1, 1)] * (-fy / (z * z))
                + d_jac[(1, 2)] * (2.0 * fy * y / (z * z * z));
            let d_mean = w.transpose() * d_t;
            let mut d_sh = [0.0; 3 * SH_COEFFS];
            for c in 0..3 {
                if p.clamped[c] {
                    continue;
                }
                for k in 0..SH_COEFFS {
                    d_sh[k * 3 + c] = p.basis[k] * sg.color[c];
                }
            }
            (i, d_mean, d_cov, sg.opacity, d_sh)
        })
        .collect();
    let mut out = SplatGrad::zeros(splats.len());
    for (i, dm, dc, dop, dsh) in chained {
        out.means[i] = dm;
        out.covariances[i] = dc;
        out.opacities[i] = dop;
        out.sh[i] = dsh;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::SH_C0;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(40.0, 40.0, 16.0, 16.0, Mat3::identity(), Vec3::zeros(), 32, 32).unwrap()
    }

    fn splat_set(items: &[(Vec3, f64, f64, [f64; 3])]) -> SplatSet {
        SplatSet {
            texel_ids: (0..items.len()).collect(),
            means: items.iter().map(|s| s.0).collect(),
            covariances: items.iter().map(|s| Mat3::identity() * s.1 * s.1).collect(),
            opacities: items.iter().map(|s| s.2).collect(),
            sh: items
                .iter()
                .map(|s| {
                    let mut sh = [0.0; 48];
                    for c in 0..3 {
                        sh[c] = (s.3[c] - 0.5) / SH_C0;
                    }
                    sh
                })
                .collect(),
            posing: vec![Mat3::identity(); items.len()],
        }
    }

    #[test]
    fn single_splat_peaks_at_center_and_decays() {
        let s = splat_set(&[(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.9, [1.0, 1.0, 1.0])]);
        let out = render_splats(&s, &cam());
        let a = |x: usize, y: usize| out.alpha[y * 32 + x];
        // the mean projects to (16, 16), the corner shared by pixels 15 and 16
        let peak = a(15, 15);
        assert!((a(16, 16) - peak).abs() < 1e-12 && (a(15, 16) - peak).abs() < 1e-12);
        for r in 1..8 {
            assert!(a(16 + r, 16) < a(15 + r, 16));
            assert!(a(16, 16 + r) < a(16, 15 + r));
        }
        assert!(peak > 0.8);
    }

    #[test]
    fn front_splat_occludes_back_one() {
        let s = splat_set(&[
            (Vec3::new(0.0, 0.0, 3.0), 0.3, 1.0, [0.0, 0.0, 1.0]),
            (Vec3::new(0.0, 0.0, 2.0), 0.3, 1.0, [1.0, 0.0, 0.0]),
        ]);
        let c = render_splats(&s, &cam()).image.get(16, 16);
        assert!(c[0] > 0.98 && c[2] < 0.02, "{c:?}");
    }

    #[test]
    fn translucent_pair_matches_hand_compositing() {
        let c1 = [0.9, 0.2, 0.1];
        let c2 = [0.1, 0.3, 0.8];
        let s = splat_set(&[(Vec3::new(0.0, 0.0, 2.0), 0.2, 0.4, c1), (Vec3::new(0.01, 0.0, 3.0), 0.3, 0.6, c2)]);
        let cm = cam();
        let out = render_splats(&s, &cm);
        let pixel = Vec2::new(16.5, 16.5);
        let alpha_of = |k: usize| {
            let t = cm.to_camera(&s.means[k]);
            let j = cm.projection_jacobian(&s.means[k]);
            let cov = j * s.covariances[k] * j.transpose() + Matrix2::identity() * 0.3;
            let m = Vec2::new(cm.fx * t.x / t.z + cm.cx, cm.fy * t.y / t.z + cm.cy);
            let d = pixel - m;
            s.opacities[k] * (-0.5 * (d.transpose() * cov.try_inverse().unwrap() * d)[0]).exp()
        };
        let (a1, a2) = (alpha_of(0), alpha_of(1));
        let got = out.image.get(16, 16);
        for c in 0..3 {
            let expect = a1 * c1[c] + (1.0 - a1) * a2 * c2[c];
            assert!((got[c] - expect).abs() < 1e-12);
        }
        assert!((out.alpha[16 * 32 + 16] - (1.0 - (1.0 - a1) * (1.0 - a2))).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_of_scene_and_camera_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items: Vec<_> = (0..20)
            .map(|_| {
                (
                    Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(1.5..2.5)),
                    rng.random_range(0.03..0.1),
                    rng.random_range(0.3..0.95),
                    [rng.random(), rng.random(), rng.random()],
                )
            })
            .collect();
        let s = splat_set(&items);
        let c = cam();
        let r = Rotation3::from_euler_angles(0.4, -0.2, 0.9).into_inner();
        let t = Vec3::new(1.0, -2.0, 0.5);
        let moved = s.transformed(&r, &t);
        let rc = c.rotation * r.transpose();
        let c2 = Camera::new(c.fx, c.fy, c.cx, c.cy, rc, c.translation - rc * t, c.width, c.height).unwrap();
        let a = render_splats(&s, &c).image;
        let b = render_splats(&moved, &c2).image;
        for (p, q) in a.pixels.iter().zip(&b.pixels) {
            assert!((0..3).all(|k| (p[k] - q[k]).abs() <= 1e-5));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Camera::look_at(Vec3::new(0.3, -0.2, -2.0), Vec3::zeros(), Vec3::y(), 30.0, 20, 20).unwrap();
        let n = 6;
        let mut s = splat_set(
            &(0..n)
                .map(|_| {
                    (
                        Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
                        rng.random_range(0.08..0.15),
                        rng.random_range(0.3..0.8),
                        [rng.random(), rng.random(), rng.random()],
                    )
                })
                .collect::<Vec<_>>(),
        );
        for k in 0..n {
            let a = Mat3::from_fn(|_, _| rng.random_range(-0.1..0.1));
            s.covariances[k] += a * a.transpose();
            for v in s.sh[k][3..].iter_mut() {
                *v = 0.0;
            }
        }
        let wimg: Vec<[f64; 3]> = (0..400).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let loss = |s: &SplatSet| {
            let img = render_splats(s, &c).image;
            img.pixels.iter().zip(&wimg).map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2]).sum::<f64>()
        };
        let g = render_splats_backward(&s, &c, &wimg);
        let h = 1e-6;
        let check = |fd: f64, an: f64, what: &str| {
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-2), "{what}: fd {fd} analytic {an}");
        };
        for k in 0..n {
            for a in 0..3 {
                let mut p = s.clone();
                p.means[k][a] += h;
                let mut m = s.clone();
                m.means[k][a] -= h;
                check((loss(&p) - loss(&m)) / (2.0 * h), g.means[k][a], "mean");
            }
            for (a, b) in [(0, 0), (0, 1), (1, 1), (2, 2), (0, 2)] {
                let mut p = s.clone();
                p.covariances[k][(a, b)] += h;
                p.covariances[k][(b, a)] += if a == b { 0.0 } else { h };
                let mut m = s.clone();
                m.covariances[k][(a, b)] -= h;
                m.covariances[k][(b, a)] -= if a == b { 0.0 } else { h };
                let an = g.covariances[k][(a, b)] + if a == b { 0.0 } else { g.covariances[k][(b, a)] };
                check((loss(&p) - loss(&m)) / (2.0 * h), an, "cov");
            }
            let mut p = s.clone();
            p.opacities[k] += h;
            let mut m = s.clone();
            m.opacities[k] -= h;
            check((loss(&p) - loss(&m)) / (2.0 * h), g.opacities[k], "opacity");
            for ch in 0..3 {
                let mut p = s.clone();
                p.sh[k][ch] += h;
                let mut m = s.clone();
                m.sh[k][ch] -= h;
                check((loss(&p) - loss(&m)) / (2.0 * h), g.sh[k][ch], "sh");
            }
        }
    }
}
