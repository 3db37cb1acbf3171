use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Uniform hash grid for exact nearest-neighbor queries.
pub struct SpatialGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> SpatialGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        SpatialGrid { points, cell, cells, lo, hi }
    }

    /// Cell size from the bounding box so that cells hold a few points each.
    pub fn auto(points: &'a [Vec3]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = (hi - lo).max().max(1e-9);
        let cell = ext / (points.len() as f64).cbrt().max(1.0);
        Self::new(points, cell.max(ext * 1e-6))
    }

    /// Index and squared distance of the nearest point; ties go to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        for ring in 0..=max_ring {
            // shells cost ~ring² lookups; past the occupied-cell count a scan is cheaper
            if ring > 1 && (2 * ring + 1).pow(3) as usize > 8 * self.cells.len() {
                return self.scan(q, best);
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let Some(list) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                        for &i in list {
                            let d = (self.points[i as usize] - q).norm_squared();
                            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && (i as usize) < bi)) {
                                best = Some((i as usize, d));
                            }
                        }
                    }
                }
            }
            // every point outside the scanned rings is at least `ring * cell` away
            if let Some((_, bd)) = best {
                let reach = ring as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best
    }

    fn scan(&self, q: &Vec3, mut best: Option<(usize, f64)>) -> Option<(usize, f64)> {
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                best = Some((i, d));
            }
        }
        best
    }
}

fn key(p: &Vec3, cell: f64) -> [i64; 3] {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

fn directed(a: &[Vec3], grid: &SpatialGrid<'_>) -> Vec<(usize, f64)> {
    a.par_iter().map(|p| grid.nearest(p).expect("non-empty grid")).collect()
}

/// `mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(chamfer_with_grad(a, b)?.0)
}

/// Chamfer distance and its gradient with respect to `a`.
pub fn chamfer_with_grad(a: &[Vec3], b: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    let gb = SpatialGrid::auto(b);
    chamfer_against(a, b, &gb)
}

/// [`chamfer_with_grad`] with a prebuilt grid over `b`.
pub fn chamfer_against(a: &[Vec3], b: &[Vec3], grid_b: &SpatialGrid<'_>) -> Result<(f64, Vec<Vec3>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    let ga = SpatialGrid::auto(a);
    let ab = directed(a, grid_b);
    let ba = directed(b, &ga);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut grad: Vec<Vec3> = a.iter().zip(&ab).map(|(p, &(j, _))| (p - b[j]) * (2.0 / na)).collect();
    for (q, &(i, _)) in b.iter().zip(&ba) {
        grad[i] += (a[i] - q) * (2.0 / nb);
    }
    let value = ab.iter().map(|x| x.1).sum::<f64>() / na + ba.iter().map(|x| x.1).sum::<f64>() / nb;
    Ok((value, grad))
}

/// Symmetric average `(mean_a + mean_b) / 2` of squared nearest distances, as
/// reported by the evaluation.
pub fn chamfer_average(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(0.5 * chamfer(a, b)?)
}

/// Points on a triangle mesh at barycentric lattice positions with denominator
/// `level`, each stored once (vertices, edge interiors, face interiors).
#[derive(Clone, Debug)]
pub struct SurfaceSampler {
    pub entries: Vec<Vec<(usize, f64)>>,
    pub vertex_count: usize,
}

impl SurfaceSampler {
    pub fn new(faces: &[[usize; 3]], vertex_count: usize, level: usize) -> Self {
        let level = level.max(1);
        let mut entries: Vec<Vec<(usize, f64)>> = (0..vertex_count).map(|v| vec![(v, 1.0)]).collect();
        let mut edges: Vec<[usize; 2]> = faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                [a.min(b), a.max(b)]
            }))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let l = level as f64;
        for [a, b] in edges {
            for s in 1..level {
                let t = s as f64 / l;
                entries.push(vec![(a, 1.0 - t), (b, t)]);
            }
        }
        for f in faces {
            for i in 1..level {
                for j in 1..level - i {
                    let (u, v) = (i as f64 / l, j as f64 / l);
                    entries.push(vec![(f[0], 1.0 - u - v), (f[1], u), (f[2], v)]);
                }
            }
        }
        SurfaceSampler { entries, vertex_count }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&self, positions: &[Vec3]) -> Vec<Vec3> {
        self.entries
            .iter()
            .map(|e| e.iter().fold(Vec3::zeros(), |acc, &(v, w)| acc + positions[v] * w))
            .collect()
    }

    pub fn backward(&self, grad_samples: &[Vec3]) -> Vec<Vec3> {
        let mut g = vec![Vec3::zeros(); self.vertex_count];
        for (e, gs) in self.entries.iter().zip(grad_samples) {
            for &(v, w) in e {
                g[v] += gs * w;
            }
        }
        g
    }
}
