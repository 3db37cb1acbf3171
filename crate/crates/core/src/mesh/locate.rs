use super::TemplateMesh;
use crate::math::Vec2;

/// Tolerance on barycentric coordinates so points on shared edges hit both faces.
const BARY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UvHit {
    pub face: usize,
    pub bary: [f64; 3],
}

/// Uniform grid over UV space bucketing faces by their UV bounding box.
#[derive(Clone, Debug)]
pub struct UvLocator {
    n: usize,
    cells: Vec<Vec<usize>>,
    tris: Vec<[Vec2; 3]>,
}

impl UvLocator {
    pub fn new(mesh: &TemplateMesh) -> Self {
        let nf = mesh.faces.len();
        let n = ((nf as f64).sqrt().ceil() as usize).clamp(1, 256);
        let mut cells = vec![Vec::new(); n * n];
        let tris: Vec<[Vec2; 3]> = (0..nf)
            .map(|f| [mesh.corner_uv(f, 0), mesh.corner_uv(f, 1), mesh.corner_uv(f, 2)])
            .collect();
        let cell = |x: f64| ((x * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        for (f, t) in tris.iter().enumerate() {
            let (lo, hi) = bbox(t);
            // widen by the tolerance so edge points land in every touching cell
            let (x0, x1) = (cell(lo.x - 1e-9), cell(hi.x + 1e-9));
            let (y0, y1) = (cell(lo.y - 1e-9), cell(hi.y + 1e-9));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    cells[y * n + x].push(f);
                }
            }
        }
        UvLocator { n, cells, tris }
    }

    pub fn lookup(&self, uv: Vec2) -> Option<UvHit> {
        let n = self.n as f64;
        let cx = ((uv.x * n).floor() as isize).clamp(0, self.n as isize - 1) as usize;
        let cy = ((uv.y * n).floor() as isize).clamp(0, self.n as isize - 1) as usize;
        // faces are pushed in ascending order, so the first hit has the lowest id
        self.cells[cy * self.n + cx]
            .iter()
            .find_map(|&f| barycentric_in(&self.tris[f], uv).map(|bary| UvHit { face: f, bary }))
    }
}

fn bbox(t: &[Vec2; 3]) -> (Vec2, Vec2) {
    let lo = Vec2::new(t[0].x.min(t[1].x).min(t[2].x), t[0].y.min(t[1].y).min(t[2].y));
    let hi = Vec2::new(t[0].x.max(t[1].x).max(t[2].x), t[0].y.max(t[1].y).max(t[2].y));
    (lo, hi)
}

/// Barycentric coordinates of `p` in triangle `t` if it lies inside (edges inclusive).
/// Degenerate triangles never contain anything.
pub fn barycentric_in(t: &[Vec2; 3], p: Vec2) -> Option<[f64; 3]> {
    let cross = |a: Vec2, b: Vec2| a.x * b.y - a.y * b.x;
    let area = cross(t[1] - t[0], t[2] - t[0]);
    if area.abs() < 1e-300 {
        return None;
    }
    let b0 = cross(t[1] - p, t[2] - p) / area;
    let b1 = cross(t[2] - p, t[0] - p) / area;
    let b2 = 1.0 - b0 - b1;
    if b0 >= -BARY_EPS && b1 >= -BARY_EPS && b2 >= -BARY_EPS {
        Some([b0, b1, b2])
    } else {
        None
    }
}

/// UV-space triangle containing `uv`, lowest face id on ties, or `None` on a miss.
pub fn barycentric_lookup(mesh: &TemplateMesh, uv: Vec2) -> Option<UvHit> {
    mesh.locator().lookup(uv)
}
