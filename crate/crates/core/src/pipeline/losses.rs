use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{build_laplacian, LaplacianOperator, TemplateMesh, VertexField};
use crate::tracking::CorrespondenceSet;

/// Values of the three mesh regularizers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpatialTerms {
    pub lap: f64,
    pub lapz: f64,
    pub norm: f64,
}

/// Gradients of each regularizer with respect to the posed vertices.
#[derive(Clone, Debug)]
pub struct SpatialGrads {
    pub lap: Vec<Vec3>,
    pub lapz: Vec<Vec3>,
    pub norm: Vec<Vec3>,
}

/// Precomputed Laplacian and face adjacency of a mesh.
#[derive(Clone, Debug)]
pub struct SpatialContext {
    pub faces: Vec<[usize; 3]>,
    pub laplacian: LaplacianOperator,
    pub adjacency: Vec<Vec<usize>>,
}

impl SpatialContext {
    pub fn new(mesh: &TemplateMesh) -> Self {
        SpatialContext {
            faces: mesh.faces.clone(),
            laplacian: build_laplacian(mesh),
            adjacency: mesh.face_adjacency(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.laplacian.size()
    }

    pub fn evaluate(&self, posed: &[Vec3], skinned_only: &[Vec3]) -> Result<SpatialTerms> {
        Ok(self.evaluate_impl(posed, skinned_only, false)?.0)
    }

    pub fn evaluate_with_grad(&self, posed: &[Vec3], skinned_only: &[Vec3]) -> Result<(SpatialTerms, SpatialGrads)> {
        let (t, g) = self.evaluate_impl(posed, skinned_only, true)?;
        Ok((t, g.expect("gradient requested")))
    }

    fn evaluate_impl(
        &self,
        posed: &[Vec3],
        skinned_only: &[Vec3],
        want_grad: bool,
    ) -> Result<(SpatialTerms, Option<SpatialGrads>)> {
        let n = self.vertex_count();
        if posed.len() != n {
            return Err(Error::dim("posed vertices", n, posed.len()));
        }
        if skinned_only.len() != n {
            return Err(Error::dim("skinned vertices", n, skinned_only.len()));
        }
        let lp = self.laplacian.apply(posed);
        let ls = self.laplacian.apply(skinned_only);
        let inv_n = 1.0 / n.max(1) as f64;
        let unit = |v: Vec3| {
            let l = v.norm();
            if l > 0.0 {
                v / l
            } else {
                Vec3::zeros()
            }
        };
        let diff: Vec<Vec3> = lp.iter().zip(&ls).map(|(a, b)| a - b).collect();
        let lap = diff.iter().map(|d| d.norm()).sum::<f64>() * inv_n;
        let lapz = lp.iter().map(|d| d.norm()).sum::<f64>() * inv_n;

        let raw: Vec<Vec3> = self
            .faces
            .iter()
            .map(|f| (posed[f[1]] - posed[f[0]]).cross(&(posed[f[2]] - posed[f[0]])))
            .collect();
        let normals: Vec<Vec3> = raw.iter().map(|c| unit(*c)).collect();
        let active = self.adjacency.iter().filter(|a| !a.is_empty()).count();
        let mut norm = 0.0;
        let mut dn = vec![Vec3::zeros(); self.faces.len()];
        if active > 0 {
            let inv_f = 1.0 / active as f64;
            for (i, adj) in self.adjacency.iter().enumerate() {
                if adj.is_empty() {
                    continue;
                }
                let w = inv_f / adj.len() as f64;
                for &j in adj {
                    norm += w * (1.0 - normals[i].dot(&normals[j]));
                    if want_grad {
                        dn[i] -= normals[j] * w;
                        dn[j] -= normals[i] * w;
                    }
                }
            }
        }
        let terms = SpatialTerms { lap, lapz, norm };
        if !want_grad {
            return Ok((terms, None));
        }
        let g_lap = self.laplacian.apply_transpose(&diff.iter().map(|d| unit(*d) * inv_n).collect::<Vec<_>>());
        let g_lapz = self.laplacian.apply_transpose(&lp.iter().map(|d| unit(*d) * inv_n).collect::<Vec<_>>());
        let mut g_norm = vec![Vec3::zeros(); n];
        for (f, face) in self.faces.iter().enumerate() {
            let len = raw[f].norm();
            if len == 0.0 {
                continue;
            }
            let nf = normals[f];
            let dc = (dn[f] - nf * nf.dot(&dn[f])) / len;
            let e1 = posed[face[1]] - posed[face[0]];
            let e2 = posed[face[2]] - posed[face[0]];
            let g1 = e2.cross(&dc);
            let g2 = dc.cross(&e1);
            g_norm[face[1]] += g1;
            g_norm[face[2]] += g2;
            g_norm[face[0]] -= g1 + g2;
        }
        Ok((
            terms,
            Some(SpatialGrads {
                lap: g_lap,
                lapz: g_lapz,
                norm: g_norm,
            }),
        ))
    }
}

/// `(lap, lapz, norm)` for posed vertices against the skinned undeformed template.
pub fn spatial_losses(mesh: &TemplateMesh, posed: &VertexField, skinned_only: &VertexField) -> Result<(f64, f64, f64)> {
    posed.check_len(mesh.vertex_count(), "posed vertices")?;
    skinned_only.check_len(mesh.vertex_count(), "skinned vertices")?;
    let t = SpatialContext::new(mesh).evaluate(posed, skinned_only)?;
    Ok((t.lap, t.lapz, t.norm))
}

/// Sum of squared anchor-target distances over the pairs of `set`; pair ids
/// index into `anchors`.
pub fn corr_loss(anchors: &[Vec3], set: &CorrespondenceSet) -> f64 {
    corr_loss_with_grad(anchors, set).0
}

pub fn corr_loss_with_grad(anchors: &[Vec3], set: &CorrespondenceSet) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::zeros(); anchors.len()];
    if set.is_empty() {
        log::warn!("frame {}: no valid {:?} correspondences", set.frame, set.kind);
        return (0.0, grad);
    }
    let mut total = 0.0;
    for p in &set.pairs {
        let d = anchors[p.id] - p.target;
        total += d.norm_squared();
        grad[p.id] += d * 2.0;
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::{AnchorKind, CorrespondencePair};

    fn cube() -> TemplateMesh {
        let v: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let mut f = Vec::new();
        for q in quads {
            f.push([q[0], q[1], q[2]]);
            f.push([q[0], q[2], q[3]]);
        }
        let uv = vec![crate::math::Vec2::zeros(); 1];
        let fu = vec![[0, 0, 0]; f.len()];
        TemplateMesh::new(v, f, uv, fu, vec![vec![(0, 1.0)]; 8]).unwrap()
    }

    #[test]
    fn cube_normal_term_by_enumeration() {
        let m = cube();
        let (_, _, norm) = spatial_losses(&m, &m.rest_positions(), &m.rest_positions()).unwrap();
        let adj = m.face_adjacency();
        let mut expect = 0.0;
        for (i, a) in adj.iter().enumerate() {
            let ni = crate::mesh::face_normal(&m.vertices, m.faces[i]);
            let s: f64 = a.iter().map(|&j| 1.0 - ni.dot(&crate::mesh::face_normal(&m.vertices, m.faces[j]))).sum();
            expect += s / a.len() as f64;
        }
        expect /= adj.len() as f64;
        assert!((norm - expect).abs() < 1e-12);
        // one coplanar and two perpendicular neighbors per triangle
        assert!((norm - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn corr_loss_arithmetic() {
        let mut set = CorrespondenceSet::empty(0, AnchorKind::Vertex, 0.03);
        let a = vec![Vec3::zeros(), Vec3::x()];
        assert_eq!(corr_loss(&a, &set), 0.0);
        set.pairs.push(CorrespondencePair {
            id: 1,
            anchor: a[1],
            target: Vec3::new(1.01, 0.0, 0.0),
            view: 0,
            score: 1.0,
        });
        assert!((corr_loss(&a, &set) - 1e-4).abs() < 1e-15);
    }
}
