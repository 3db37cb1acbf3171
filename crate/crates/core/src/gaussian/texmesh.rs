use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{GaussianTexture, SplatSet};
use crate::camera::StaticTexture;
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};
use crate::mesh::{boundary_edges, SeamChain, TemplateMesh};

/// Triangle mesh over covered texels, one vertex per texel at its splat mean.
#[derive(Clone, Debug)]
pub struct TexelMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Vec<Vec2>,
    /// Texel index of each vertex.
    pub texels: Vec<usize>,
    /// Boundary vertices on the two sides of each stitched seam, in chain order.
    pub seam_sides: Vec<[Vec<usize>; 2]>,
    /// Number of leading faces that come from the texel grid.
    pub grid_faces: usize,
}

impl TexelMesh {
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        boundary_edges(&self.faces)
    }

    /// Boundary edges joining two vertices on the same side of a seam.
    pub fn seam_boundary_edges(&self) -> Vec<[usize; 2]> {
        let sides: Vec<HashSet<usize>> = self
            .seam_sides
            .iter()
            .flat_map(|s| s.iter().map(|v| v.iter().copied().collect()))
            .collect();
        self.boundary_edges()
            .into_iter()
            .filter(|e| sides.iter().any(|s| s.contains(&e[0]) && s.contains(&e[1])))
            .collect()
    }

    pub fn duplicate_faces(&self) -> usize {
        let mut seen = HashSet::new();
        self.faces
            .iter()
            .filter(|f| {
                let mut k = **f;
                k.sort_unstable();
                !seen.insert(k)
            })
            .count()
    }
}

fn check_seam_dag(chains: &[SeamChain]) -> Result<()> {
    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<usize, usize>, v: usize) -> usize {
        let p = *parent.entry(v).or_insert(v);
        if p == v {
            return v;
        }
        let r = find(parent, p);
        parent.insert(v, r);
        r
    }
    for (i, c) in chains.iter().enumerate() {
        if c.is_closed() {
            return Err(Error::SeamCycle(format!("seam chain {i} is closed")));
        }
        let vs = c.vertices();
        let (a, b) = (find(&mut parent, vs[0]), find(&mut parent, *vs.last().unwrap()));
        if a == b {
            return Err(Error::SeamCycle(format!("seam chain {i} closes a loop")));
        }
        parent.insert(a, b);
    }
    Ok(())
}

/// Arclength parameter of the closest polyline point and the distance to it.
fn project_polyline(line: &[Vec2], p: Vec2) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut s0 = 0.0;
    for w in line.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        let t = if len > 0.0 { ((p - w[0]).dot(&d) / (len * len)).clamp(0.0, 1.0) } else { 0.0 };
        let dist = (w[0] + d * t - p).norm();
        if dist < best.0 {
            best = (dist, s0 + t * len);
        }
        s0 += len;
    }
    (best.1, best.0)
}

/// Triangulates the covered texel grid, then closes each seam by zipping the
/// boundary vertices of its two sides, always adding the shorter 3D rung.
pub fn texels_to_mesh(tex: &GaussianTexture, splats: &SplatSet, mesh: &TemplateMesh) -> Result<TexelMesh> {
    check_seam_dag(&mesh.seams)?;
    let r = tex.resolution;
    let covered = tex.covered();
    if covered != splats.texel_ids {
        return Err(Error::invalid("splat set does not match the texture coverage"));
    }
    let mut vid = vec![usize::MAX; r * r];
    for (n, &k) in covered.iter().enumerate() {
        vid[k] = n;
    }
    let mut faces = Vec::new();
    for j in 0..r.saturating_sub(1) {
        for i in 0..r - 1 {
            let (a, b, c, d) = (vid[j * r + i], vid[j * r + i + 1], vid[(j + 1) * r + i], vid[(j + 1) * r + i + 1]);
            if a != usize::MAX && b != usize::MAX && c != usize::MAX {
                faces.push([a, b, c]);
            }
            if b != usize::MAX && d != usize::MAX && c != usize::MAX {
                faces.push([b, d, c]);
            }
        }
    }
    let grid_faces = faces.len();
    let uvs: Vec<Vec2> = covered.iter().map(|&k| StaticTexture::texel_center(r, k % r, k / r)).collect();
    let on_boundary: BTreeSet<usize> = boundary_edges(&faces).iter().flatten().copied().collect();
    let band = 1.0 / r as f64;
    let pos = &splats.means;

    let mut directed: HashSet<(usize, usize)> = HashSet::new();
    let mut keys: HashSet<[usize; 3]> = HashSet::new();
    for f in &faces {
        for k in 0..3 {
            directed.insert((f[k], f[(k + 1) % 3]));
        }
        let mut s = *f;
        s.sort_unstable();
        keys.insert(s);
    }
    let mut seam_sides = Vec::new();
    for chain in &mesh.seams {
        let side = |line: Vec<Vec2>| -> Vec<usize> {
            let mut hits: Vec<(f64, f64, usize)> = on_boundary
                .iter()
                .filter_map(|&v| {
                    let (s, d) = project_polyline(&line, uvs[v]);
                    (d < band).then_some((s, d, v))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
            hits.into_iter().map(|h| h.2).collect()
        };
        let a = side(chain.left_polyline(mesh));
        let b = side(chain.right_polyline(mesh));
        if a.is_empty() || b.is_empty() {
            seam_sides.push([a, b]);
            continue;
        }
        let (mut i, mut j) = (0, 0);
        while i + 1 < a.len() || j + 1 < b.len() {
            let advance_a = if i + 1 == a.len() {
                false
            } else if j + 1 == b.len() {
                true
            } else {
                (pos[a[i + 1]] - pos[b[j]]).norm() <= (pos[a[i]] - pos[b[j + 1]]).norm()
            };
            let tri = if advance_a {
                i += 1;
                [a[i - 1], a[i], b[j]]
            } else {
                j += 1;
                [a[i], b[j], b[j - 1]]
            };
            let mut key = tri;
            key.sort_unstable();
            if key[0] == key[1] || key[1] == key[2] || keys.contains(&key) {
                continue;
            }
            let same = (0..3).filter(|&k| directed.contains(&(tri[k], tri[(k + 1) % 3]))).count();
            let opposite = (0..3).filter(|&k| directed.contains(&(tri[(k + 1) % 3], tri[k]))).count();
            let tri = if same > opposite { [tri[1], tri[0], tri[2]] } else { tri };
            for k in 0..3 {
                directed.insert((tri[k], tri[(k + 1) % 3]));
            }
            keys.insert(key);
            faces.push(tri);
        }
        seam_sides.push([a, b]);
    }
    Ok(TexelMesh {
        vertices: pos.clone(),
        faces,
        uvs,
        texels: covered,
        seam_sides,
        grid_faces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn flat_splats(tex: &GaussianTexture) -> SplatSet {
        let r = tex.resolution;
        let ids = tex.covered();
        SplatSet {
            means: ids.iter().map(|&k| Vec3::new((k % r) as f64, (k / r) as f64, 0.0)).collect(),
            covariances: vec![Mat3::identity(); ids.len()],
            opacities: vec![1.0; ids.len()],
            sh: vec![[0.0; 48]; ids.len()],
            posing: vec![Mat3::identity(); ids.len()],
            texel_ids: ids,
        }
    }

    fn plane_mesh() -> TemplateMesh {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
        let uv = v.iter().map(|p| Vec2::new(p.x, p.y)).collect();
        let f = vec![[0, 1, 2], [0, 2, 3]];
        TemplateMesh::new(v, f.clone(), uv, f, vec![vec![(0, 1.0)]; 4]).unwrap()
    }

    #[test]
    fn full_block_gives_eight_consistent_triangles() {
        let mut tex = GaussianTexture::empty(3);
        tex.mask = vec![true; 9];
        let m = texels_to_mesh(&tex, &flat_splats(&tex), &plane_mesh()).unwrap();
        assert_eq!(m.faces.len(), 8);
        for f in &m.faces {
            let n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(&(m.vertices[f[2]] - m.vertices[f[0]]));
            assert!(n.z > 0.0);
        }
        assert_eq!(m.duplicate_faces(), 0);
        assert_eq!(m.boundary_edges().len(), 8);
    }

    #[test]
    fn hole_is_preserved() {
        let mut tex = GaussianTexture::empty(5);
        tex.mask = vec![true; 25];
        tex.mask[12] = false;
        let m = texels_to_mesh(&tex, &flat_splats(&tex), &plane_mesh()).unwrap();
        let center_neighbors = [7usize, 11, 13, 17];
        let texel_of: Vec<usize> = m.texels.clone();
        let inner: usize = m
            .boundary_edges()
            .iter()
            .filter(|e| e.iter().all(|&v| center_neighbors.contains(&texel_of[v]) || [6, 8, 16, 18].contains(&texel_of[v])))
            .count();
        assert!(inner >= 4);
        assert_eq!(m.grid_faces, m.faces.len());
    }
}
