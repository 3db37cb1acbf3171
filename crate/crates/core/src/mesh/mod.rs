//! Canonical template mesh, vertex fields, the uniform Laplacian and UV atlas helpers.

mod io;
mod locate;

use std::collections::{BTreeMap, HashMap};
use std::ops::{Deref, DerefMut};
use std::sync::OnceLock;

pub use io::{load_mesh, load_positions, save_mesh, write_obj, write_ply};
pub use locate::{barycentric_lookup, UvHit, UvLocator};

use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

/// Per-vertex sparse joint weights: `(joint, weight)` pairs.
pub type SkinWeights = Vec<Vec<(usize, f64)>>;

/// Per-vertex 3D vectors (positions, offsets or normals) aligned with a mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VertexField(pub Vec<Vec3>);

impl VertexField {
    pub fn zeros(n: usize) -> Self {
        VertexField(vec![Vec3::zeros(); n])
    }

    pub fn check_len(&self, expected: usize, what: &'static str) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::dim(what, expected, self.0.len()));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }
}

impl Deref for VertexField {
    type Target = Vec<Vec3>;
    fn deref(&self) -> &Vec<Vec3> {
        &self.0
    }
}

impl DerefMut for VertexField {
    fn deref_mut(&mut self) -> &mut Vec<Vec3> {
        &mut self.0
    }
}

impl From<Vec<Vec3>> for VertexField {
    fn from(v: Vec<Vec3>) -> Self {
        VertexField(v)
    }
}

/// One edge of a UV seam: a 3D edge whose two incident faces use different UV
/// corners. `left_uv` belongs to the face that traverses `vertices[0] -> vertices[1]`
/// in its winding order, `right_uv` to the opposite face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeamEdge {
    pub vertices: [usize; 2],
    pub left_face: usize,
    pub right_face: usize,
    pub left_uv: [usize; 2],
    pub right_uv: [usize; 2],
}

/// A maximal chain of seam edges, directed from its first to its last vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeamChain {
    pub edges: Vec<SeamEdge>,
}

impl SeamChain {
    pub fn vertices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.edges.iter().map(|e| e.vertices[0]).collect();
        if let Some(last) = self.edges.last() {
            out.push(last.vertices[1]);
        }
        out
    }

    pub fn is_closed(&self) -> bool {
        match (self.edges.first(), self.edges.last()) {
            (Some(a), Some(b)) => a.vertices[0] == b.vertices[1],
            _ => false,
        }
    }

    /// UV polyline of the left side of the seam, one point per chain vertex.
    pub fn left_polyline(&self, mesh: &TemplateMesh) -> Vec<Vec2> {
        Self::polyline(mesh, self.edges.iter().map(|e| e.left_uv))
    }

    pub fn right_polyline(&self, mesh: &TemplateMesh) -> Vec<Vec2> {
        Self::polyline(mesh, self.edges.iter().map(|e| e.right_uv))
    }

    fn polyline(mesh: &TemplateMesh, sides: impl Iterator<Item = [usize; 2]>) -> Vec<Vec2> {
        let mut out = Vec::new();
        for (k, side) in sides.enumerate() {
            if k == 0 {
                out.push(mesh.uvs[side[0]]);
            }
            out.push(mesh.uvs[side[1]]);
        }
        out
    }
}

/// The rest-shape template every stage deforms.
#[derive(Clone, Debug)]
pub struct TemplateMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Vec<Vec2>,
    /// Per-corner indices into `uvs`, parallel to `faces`.
    pub face_uvs: Vec<[usize; 3]>,
    pub skin_weights: SkinWeights,
    pub seams: Vec<SeamChain>,
    locator: OnceLock<UvLocator>,
}

impl TemplateMesh {
    /// Builds a mesh, validating indices, UV range, skin weights and edge-manifoldness,
    /// and detecting UV seams.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        uvs: Vec<Vec2>,
        face_uvs: Vec<[usize; 3]>,
        skin_weights: SkinWeights,
    ) -> Result<Self> {
        let nv = vertices.len();
        if face_uvs.len() != faces.len() {
            return Err(Error::dim("face uv corners", faces.len(), face_uvs.len()));
        }
        if skin_weights.len() != nv {
            return Err(Error::dim("skin weights", nv, skin_weights.len()));
        }
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                if v >= nv {
                    return Err(Error::invalid(format!(
                        "face {f} references vertex {v} but the mesh has {nv} vertices"
                    )));
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::invalid(format!("face {f} repeats a vertex")));
            }
            for &t in &face_uvs[f] {
                if t >= uvs.len() {
                    return Err(Error::invalid(format!(
                        "face {f} references uv {t} but the mesh has {} uvs",
                        uvs.len()
                    )));
                }
            }
        }
        for (i, uv) in uvs.iter().enumerate() {
            if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                return Err(Error::invalid(format!("uv {i} = ({}, {}) outside [0,1]^2", uv.x, uv.y)));
            }
        }
        for (i, w) in skin_weights.iter().enumerate() {
            if w.iter().any(|&(_, x)| x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid(format!("vertex {i} has a negative skin weight")));
            }
            let s: f64 = w.iter().map(|&(_, x)| x).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("skin weights of vertex {i} sum to {s}")));
            }
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for face in &faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if let Some(((a, b), n)) = edge_count.iter().find(|(_, &n)| n > 2) {
            return Err(Error::invalid(format!(
                "edge ({a}, {b}) is shared by {n} faces; the mesh must be edge-manifold"
            )));
        }
        let mut mesh = TemplateMesh {
            vertices,
            faces,
            uvs,
            face_uvs,
            skin_weights,
            seams: Vec::new(),
            locator: OnceLock::new(),
        };
        mesh.seams = detect_seams(&mesh);
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn rest_positions(&self) -> VertexField {
        VertexField(self.vertices.clone())
    }

    pub fn corner_uv(&self, face: usize, corner: usize) -> Vec2 {
        self.uvs[self.face_uvs[face][corner]]
    }

    /// Sorted unique undirected edges.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                [a.min(b), a.max(b)]
            }))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Sorted neighbor lists per vertex (1-ring over mesh edges).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertex_count()];
        for [a, b] in self.edges() {
            nb[a].push(b);
            nb[b].push(a);
        }
        for n in &mut nb {
            n.sort_unstable();
        }
        nb
    }

    /// For every face, the faces sharing an edge with it (ascending ids).
    pub fn face_adjacency(&self) -> Vec<Vec<usize>> {
        let mut by_edge: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (f, face) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
            }
        }
        let mut adj = vec![Vec::new(); self.faces.len()];
        for faces in by_edge.values() {
            if faces.len() == 2 {
                adj[faces[0]].push(faces[1]);
                adj[faces[1]].push(faces[0]);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Edges used by exactly one face.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        boundary_edges(&self.faces)
    }

    pub fn median_edge_length(&self, positions: &[Vec3]) -> f64 {
        let mut lens: Vec<f64> = self
            .edges()
            .iter()
            .map(|[a, b]| (positions[*a] - positions[*b]).norm())
            .collect();
        if lens.is_empty() {
            return 0.0;
        }
        lens.sort_by(|a, b| a.total_cmp(b));
        lens[lens.len() / 2]
    }

    /// Point at barycentric coordinates of a face for the given positions.
    pub fn interpolate(&self, positions: &[Vec3], face: usize, bary: [f64; 3]) -> Vec3 {
        let f = self.faces[face];
        positions[f[0]] * bary[0] + positions[f[1]] * bary[1] + positions[f[2]] * bary[2]
    }

    pub fn locator(&self) -> &UvLocator {
        self.locator.get_or_init(|| UvLocator::new(self))
    }
}

/// Edges used by exactly one face of a triangle list.
pub fn boundary_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut count: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry([a.min(b), a.max(b)]).or_default() += 1;
        }
    }
    count.into_iter().filter(|(_, n)| *n == 1).map(|(e, _)| e).collect()
}

fn detect_seams(mesh: &TemplateMesh) -> Vec<SeamChain> {
    // directed edge (a, b) -> (face, uv of a, uv of b)
    let mut directed: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        let t = mesh.face_uvs[f];
        for k in 0..3 {
            let k1 = (k + 1) % 3;
            directed.insert((face[k], face[k1]), (f, [t[k], t[k1]]));
        }
    }
    let mut seam_edges: BTreeMap<(usize, usize), SeamEdge> = BTreeMap::new();
    for (&(a, b), &(fl, uvl)) in &directed {
        if a > b {
            continue;
        }
        if let Some(&(fr, uvr)) = directed.get(&(b, a)) {
            // right face traverses b -> a, so its uv pair is [uv(b), uv(a)]
            let right = [uvr[1], uvr[0]];
            if uvl != right {
                seam_edges.insert(
                    (a, b),
                    SeamEdge {
                        vertices: [a, b],
                        left_face: fl,
                        right_face: fr,
                        left_uv: uvl,
                        right_uv: right,
                    },
                );
            }
        }
    }
    if seam_edges.is_empty() {
        return Vec::new();
    }
    let mut incident: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(a, b) in seam_edges.keys() {
        incident.entry(a).or_default().push((a, b));
        incident.entry(b).or_default().push((a, b));
    }
    let mut used: std::collections::BTreeSet<(usize, usize)> = Default::default();
    let mut chains = Vec::new();
    let walk = |start: usize,
                first: (usize, usize),
                used: &mut std::collections::BTreeSet<(usize, usize)>|
     -> SeamChain {
        let mut edges = Vec::new();
        let mut cur = start;
        let mut key = first;
        loop {
            used.insert(key);
            let e = &seam_edges[&key];
            let oriented = if e.vertices[0] == cur {
                e.clone()
            } else {
                SeamEdge {
                    vertices: [e.vertices[1], e.vertices[0]],
                    left_face: e.right_face,
                    right_face: e.left_face,
                    left_uv: [e.right_uv[1], e.right_uv[0]],
                    right_uv: [e.left_uv[1], e.left_uv[0]],
                }
            };
            cur = oriented.vertices[1];
            edges.push(oriented);
            if incident[&cur].len() != 2 {
                break;
            }
            match incident[&cur].iter().find(|k| !used.contains(k)) {
                Some(&next) => key = next,
                None => break,
            }
        }
        SeamChain { edges }
    };
    for (&v, inc) in &incident {
        if inc.len() == 2 {
            continue;
        }
        for &k in inc {
            if !used.contains(&k) {
                chains.push(walk(v, k, &mut used));
            }
        }
    }
    // whatever is left consists of closed loops
    for &k in seam_edges.keys() {
        if !used.contains(&k) {
            chains.push(walk(k.0, k, &mut used));
        }
    }
    chains
}

/// Area-weighted vertex normals with a validity flag per vertex.
#[derive(Clone, Debug)]
pub struct VertexNormals {
    pub normals: VertexField,
    pub valid: Vec<bool>,
}

pub fn compute_vertex_normals(mesh: &TemplateMesh, positions: &VertexField) -> Result<VertexNormals> {
    positions.check_len(mesh.vertex_count(), "positions")?;
    let mut acc = vec![Vec3::zeros(); mesh.vertex_count()];
    for f in &mesh.faces {
        let (a, b, c) = (positions[f[0]], positions[f[1]], positions[f[2]]);
        // |cross| = 2 * area, so summing raw cross products is area weighting
        let n = (b - a).cross(&(c - a));
        for &v in f {
            acc[v] += n;
        }
    }
    let mut valid = vec![true; acc.len()];
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                n / len
            } else {
                valid[i] = false;
                Vec3::zeros()
            }
        })
        .collect::<Vec<_>>();
    Ok(VertexNormals {
        normals: VertexField(normals),
        valid,
    })
}

/// Unit normal of one face (zero for degenerate faces).
pub fn face_normal(positions: &[Vec3], face: [usize; 3]) -> Vec3 {
    let n = (positions[face[1]] - positions[face[0]]).cross(&(positions[face[2]] - positions[face[0]]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

/// Uniform graph Laplacian `(L x)_i = x_i - mean_{j in N(i)} x_j` in CSR form.
#[derive(Clone, Debug)]
pub struct LaplacianOperator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn build_laplacian(mesh: &TemplateMesh) -> LaplacianOperator {
    let nb = mesh.vertex_neighbors();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (i, n) in nb.iter().enumerate() {
        if n.is_empty() {
            log::warn!("vertex {i} is isolated; its Laplacian row is zero");
        } else {
            let w = 1.0 / n.len() as f64;
            // keep columns sorted, the diagonal slotted in order
            let mut row: Vec<(usize, f64)> = n.iter().map(|&j| (j, -w)).collect();
            row.push((i, 1.0));
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    LaplacianOperator { row_ptr, cols, vals }
}

impl LaplacianOperator {
    pub fn size(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn apply(&self, x: &[Vec3]) -> Vec<Vec3> {
        (0..self.size())
            .map(|i| self.row(i).fold(Vec3::zeros(), |acc, (j, w)| acc + x[j] * w))
            .collect()
    }

    /// `L^T g`, used to pull gradients back through the operator.
    pub fn apply_transpose(&self, g: &[Vec3]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.size()];
        for (i, gi) in g.iter().enumerate().take(self.size()) {
            for (j, w) in self.row(i) {
                out[j] += gi * w;
            }
        }
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }
}
