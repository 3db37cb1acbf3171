//! Library results against direct, unoptimized reference computations.

mod common;

use common::{random_points, rng};
use rand::Rng;
use surfalign::camera::{rasterize, ColorImage, StaticTexture};
use surfalign::gaussian::{init_texel_anchors, psnr, ssim};
use surfalign::math::Vec2;
use surfalign::pipeline::{chamfer, SpatialGrid};
use surfalign::synth::{build_template, generate_scene, Preset, SceneConfig};
use surfalign::tracking::{select_consensus, Correspondence3D};
use surfalign::Vec3;

fn noise_image(seed: u64, w: usize, h: usize) -> ColorImage {
    let mut r = rng(seed);
    let mut img = ColorImage::new(w, h, [0.0; 3]);
    for p in img.pixels.iter_mut() {
        *p = [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
    }
    img
}

/// SSIM from explicit 11x11 weighted window sums at every full-window position.
fn ssim_reference(a: &ColorImage, b: &ColorImage) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut n = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[i] * g[j] / (gs * gs);
                        let x = a.get(x0 + i, y0 + j)[c];
                        let y = b.get(x0 + i, y0 + j)[c];
                        mx += wgt * x;
                        my += wgt * y;
                        sxx += wgt * x * x;
                        syy += wgt * y * y;
                        sxy += wgt * x * y;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

#[test]
fn ssim_matches_direct_window_sums() {
    let a = noise_image(1, 23, 17);
    let mut b = a.clone();
    let mut r = rng(2);
    for p in b.pixels.iter_mut() {
        for v in p.iter_mut() {
            *v = (*v + r.random_range(-0.2..0.2)).clamp(0.0, 1.0);
        }
    }
    let s = ssim(&a, &b).unwrap();
    assert!((s - ssim_reference(&a, &b)).abs() < 1e-12, "{s}");
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let c = noise_image(3, 23, 17);
    assert!((ssim(&a, &c).unwrap() - ssim_reference(&a, &c)).abs() < 1e-12);
}

#[test]
fn ssim_rejects_images_smaller_than_the_window() {
    let a = noise_image(1, 10, 30);
    assert!(ssim(&a, &a).is_err());
}

#[test]
fn psnr_of_a_known_error() {
    let a = ColorImage::new(8, 6, [0.5; 3]);
    let b = ColorImage::new(8, 6, [0.6; 3]);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    assert!(psnr(&a, &ColorImage::new(6, 8, [0.5; 3])).is_err());
}

fn bary_2d(t: [Vec2; 3], p: Vec2) -> [f64; 3] {
    let d = (t[1] - t[0]).perp(&(t[2] - t[0]));
    let b1 = (p - t[0]).perp(&(t[2] - t[0])) / d;
    let b2 = (t[1] - t[0]).perp(&(p - t[0])) / d;
    [1.0 - b1 - b2, b1, b2]
}

#[test]
fn texel_coverage_matches_a_scan_over_faces() {
    for preset in [Preset::CylinderSkirt, Preset::BentPlaneCape, Preset::SphereShirt] {
        let (mesh, _, _) = build_template(preset, [10, 6]).unwrap();
        let r = 24;
        let anchors = init_texel_anchors(&mesh, r);
        for k in 0..r * r {
            let uv = StaticTexture::texel_center(r, k % r, k / r);
            let brute = (0..mesh.faces.len()).find_map(|f| {
                let t = [mesh.corner_uv(f, 0), mesh.corner_uv(f, 1), mesh.corner_uv(f, 2)];
                let b = bary_2d(t, uv);
                b.iter().all(|&v| v >= -1e-12).then_some((f, b))
            });
            match (anchors.hits[k], brute) {
                (None, None) => {}
                (Some(h), Some((f, b))) => {
                    assert_eq!(h.face, f, "{preset:?} texel {k}");
                    for c in 0..3 {
                        assert!((h.bary[c] - b[c]).abs() < 1e-9);
                    }
                }
                (h, b) => panic!("{preset:?} texel {k}: locator {h:?} vs scan {b:?}"),
            }
        }
    }
}

/// Nearest ray-triangle hit distance, Möller–Trumbore.
fn ray_hit(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let (e1, e2) = (b - a, c - a);
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let s = o - a;
    let u = s.dot(&p) / det;
    let q = s.cross(&e1);
    let v = d.dot(&q) / det;
    let t = e2.dot(&q) / det;
    (u >= -1e-9 && v >= -1e-9 && u + v <= 1.0 + 1e-9 && t > 0.0).then_some(t)
}

#[test]
fn raster_depth_matches_ray_casting() {
    let scene = generate_scene(&SceneConfig {
        preset: Preset::SphereShirt,
        frames: 1,
        cameras: 3,
        image_size: 40,
        ..SceneConfig::default()
    })
    .unwrap();
    let mesh = &scene.model.mesh;
    let pos = &scene.gt_positions[0];
    for cam in &scene.cameras {
        let buf = rasterize(mesh, pos, cam, None);
        let o = cam.origin();
        let mut covered = 0;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let px = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let d = cam.unproject(px, 1.0).unwrap() - o;
                let hit = mesh
                    .faces
                    .iter()
                    .filter_map(|f| ray_hit(o, d, pos[f[0]], pos[f[1]], pos[f[2]]))
                    .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))));
                let stored = buf.depth.get(x, y);
                match hit {
                    // unit camera-z direction, so t is the camera depth
                    Some(t) => {
                        assert!(stored.is_finite(), "pixel ({x},{y}) missed");
                        assert!((stored as f64 - t).abs() < 1e-6 * t, "({x},{y}): {stored} vs {t}");
                        covered += 1;
                    }
                    None => assert!(!stored.is_finite(), "pixel ({x},{y}) spurious"),
                }
            }
        }
        assert!(covered > 100);
    }
}

fn consensus_reference(cands: &[Correspondence3D], vis: &[bool]) -> Option<usize> {
    let mut idx: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].valid && vis[i] && cands[i].score > 0.0).collect();
    idx.sort_by(|&a, &b| cands[b].score.total_cmp(&cands[a].score).then(a.cmp(&b)));
    idx.first().copied()
}

#[test]
fn consensus_picks_the_best_visible_view() {
    let mut r = rng(5);
    for _ in 0..2000 {
        let n = r.random_range(1..7);
        let cands: Vec<Correspondence3D> = (0..n)
            .map(|v| Correspondence3D {
                target: Vec3::new(v as f64, 0.0, 0.0),
                view: v,
                // a coarse score grid makes ties common
                score: (r.random_range(-2..5) as f64) / 4.0,
                valid: r.random_bool(0.8),
            })
            .collect();
        let vis: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
        let got = select_consensus(&cands, &vis).map(|c| c.view);
        assert_eq!(got, consensus_reference(&cands, &vis));
    }
}

#[test]
fn grid_nearest_matches_brute_force() {
    let mut r = rng(9);
    let mut cloud = random_points(&mut r, 400, 0.5);
    // a dense cluster and exact duplicates stress cell sizing and ties
    cloud.extend(random_points(&mut r, 100, 0.01));
    cloud.push(cloud[3]);
    let grid = SpatialGrid::auto(&cloud);
    for q in random_points(&mut r, 300, 0.8).iter().chain(&cloud[..50]) {
        let brute = cloud
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        assert_eq!(grid.nearest(q), Some(brute));
    }
}

#[test]
fn chamfer_matches_brute_force() {
    let mut r = rng(13);
    let a = random_points(&mut r, 150, 0.4);
    let b = random_points(&mut r, 90, 0.4);
    let side = |x: &[Vec3], y: &[Vec3]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    let want = side(&a, &b) + side(&b, &a);
    let got = chamfer(&a, &b).unwrap();
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
}
