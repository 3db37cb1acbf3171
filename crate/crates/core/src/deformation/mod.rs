//! The drivable template: embedded-graph deformation, per-vertex offsets,
//! skinning, a linear motion regressor and a PCA shape subspace.

mod container;
mod regressor;
mod subspace;

pub use container::{read_states, write_states, StateHeader};
pub use regressor::{
    fit_linear, fit_regressor, latents_from_residuals, training_residual, MotionRegressor, RegressorOptions,
};
pub use subspace::{fit_subspace, project_subspace, DeformationSubspace};

use nalgebra::{Quaternion, UnitQuaternion};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::{apply_blended, blend_transforms, skinning_transforms, SkeletalPose, Skeleton};
use crate::math::{
    contract_rotation_grad, normalize_quat, normalize_quat_backward, quat_from_array, quat_to_array,
    rotation_matrix, Mat3, Vec3,
};
use crate::mesh::{TemplateMesh, VertexField};

pub const LATENT_DIM: usize = 16;
const NODE_NEIGHBORS: usize = 4;

/// Coarse deformation nodes with per-vertex influence weights.
#[derive(Clone, Debug)]
pub struct EmbeddedGraph {
    /// Template vertex each node was sampled at.
    pub node_vertices: Vec<usize>,
    /// Rest positions `g_k`.
    pub nodes: Vec<Vec3>,
    /// Per-vertex `(node, weight)`, rows summing to 1.
    pub influence: Vec<Vec<(usize, f64)>>,
    /// Each node's nearest other nodes.
    pub edges: Vec<Vec<usize>>,
}

impl EmbeddedGraph {
    /// Farthest-point sampled graph with `max(8, V/50)` nodes (capped at `V`).
    pub fn build(mesh: &TemplateMesh) -> Result<Self> {
        let n = mesh.vertex_count();
        Self::with_nodes(mesh, (n / 50).max(8).min(n))
    }

    pub fn with_nodes(mesh: &TemplateMesh, count: usize) -> Result<Self> {
        let v = &mesh.vertices;
        if v.is_empty() || count == 0 {
            return Err(Error::invalid("embedded graph needs at least one vertex and one node"));
        }
        let count = count.min(v.len());
        let mut picked = vec![0usize];
        let mut dist: Vec<f64> = v.iter().map(|p| (p - v[0]).norm_squared()).collect();
        while picked.len() < count {
            // first index of the maximum keeps sampling deterministic
            let (next, _) = dist
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
            picked.push(next);
            for (d, p) in dist.iter_mut().zip(v) {
                *d = d.min((p - v[next]).norm_squared());
            }
        }
        let nodes: Vec<Vec3> = picked.iter().map(|&i| v[i]).collect();
        let influence = v.iter().map(|p| influence_row(p, &nodes)).collect();
        let edges = (0..nodes.len())
            .map(|k| {
                let mut others: Vec<(f64, usize)> = (0..nodes.len())
                    .filter(|&j| j != k)
                    .map(|j| ((nodes[j] - nodes[k]).norm(), j))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.iter().take(NODE_NEIGHBORS).map(|&(_, j)| j).collect()
            })
            .collect();
        Ok(EmbeddedGraph {
            node_vertices: picked,
            nodes,
            influence,
            edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Truncated Gaussian over the `k` nearest nodes; sigma is half the distance to
/// the next-nearest node so the cutoff weight is small but nonzero.
fn influence_row(p: &Vec3, nodes: &[Vec3]) -> Vec<(usize, f64)> {
    let mut d: Vec<(f64, usize)> = nodes.iter().enumerate().map(|(k, g)| ((p - g).norm(), k)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = NODE_NEIGHBORS.min(d.len());
    let dmax = d.get(k).map(|x| x.0).unwrap_or(d[k - 1].0).max(1e-12);
    let sigma = 0.5 * dmax;
    let mut row: Vec<(usize, f64)> = d[..k]
        .iter()
        .map(|&(dist, j)| (j, (-(dist * dist) / (2.0 * sigma * sigma)).exp()))
        .collect();
    let s: f64 = row.iter().map(|x| x.1).sum();
    if s > 1e-300 {
        for r in &mut row {
            r.1 /= s;
        }
    } else {
        row = vec![(d[0].1, 1.0)];
    }
    row.sort_by_key(|r| r.0);
    row
}

/// Per-frame deformation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationState {
    /// Node rotations `A_f`, stored as (nominally unit) quaternions.
    pub rotations: Vec<Quaternion<f64>>,
    /// Node translations `T_f` in meters.
    pub translations: Vec<Vec3>,
    /// Per-vertex offsets added after the graph deformation.
    pub deltas: VertexField,
    pub latent: Vec<f64>,
}

impl DeformationState {
    pub fn zero(nodes: usize, vertices: usize) -> Self {
        DeformationState {
            rotations: vec![Quaternion::identity(); nodes],
            translations: vec![Vec3::zeros(); nodes],
            deltas: VertexField::zeros(vertices),
            latent: vec![0.0; LATENT_DIM],
        }
    }

    pub fn for_model(model: &TemplateModel) -> Self {
        Self::zero(model.graph.node_count(), model.mesh.vertex_count())
    }

    /// Length of [`DeformationState::params`] (latent excluded).
    pub fn param_count(nodes: usize, vertices: usize) -> usize {
        7 * nodes + 3 * vertices
    }

    /// Flat parameter vector: quaternions `(w, x, y, z)`, then translations, then deltas.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::param_count(self.rotations.len(), self.deltas.len()));
        for q in &self.rotations {
            out.extend(quat_to_array(q));
        }
        for t in &self.translations {
            out.extend(t.iter());
        }
        for d in self.deltas.iter() {
            out.extend(d.iter());
        }
        out
    }

    pub fn from_params(p: &[f64], nodes: usize, vertices: usize, latent: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(nodes, vertices);
        if p.len() != expected {
            return Err(Error::dim("deformation parameters", expected, p.len()));
        }
        let (q, rest) = p.split_at(4 * nodes);
        let (t, d) = rest.split_at(3 * nodes);
        Ok(DeformationState {
            rotations: q.chunks(4).map(|c| quat_from_array([c[0], c[1], c[2], c[3]])).collect(),
            translations: t.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            deltas: VertexField(d.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()),
            latent,
        })
    }

    /// Offsets of the quaternion blocks inside [`DeformationState::params`].
    pub fn quaternion_offsets(nodes: usize) -> Vec<usize> {
        (0..nodes).map(|k| 4 * k).collect()
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = normalize_quat(q).0;
        }
    }
}

/// Gradient of a scalar with respect to a [`DeformationState`] (latent excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct StateGrad {
    pub rotations: Vec<[f64; 4]>,
    pub translations: Vec<Vec3>,
    pub deltas: Vec<Vec3>,
}

impl StateGrad {
    pub fn zero(nodes: usize, vertices: usize) -> Self {
        StateGrad {
            rotations: vec![[0.0; 4]; nodes],
            translations: vec![Vec3::zeros(); nodes],
            deltas: vec![Vec3::zeros(); vertices],
        }
    }

    /// Same layout as [`DeformationState::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for q in &self.rotations {
            out.extend(q);
        }
        for t in &self.translations {
            out.extend(t.iter());
        }
        for d in &self.deltas {
            out.extend(d.iter());
        }
        out
    }
}

fn unit_rotations(rotations: &[Quaternion<f64>]) -> Vec<Mat3> {
    rotations
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let (u, n) = normalize_quat(q);
            if (n - 1.0).abs() > 1e-3 {
                log::warn!("node {k} rotation has norm {n:.6}; normalizing");
            }
            rotation_matrix(&u)
        })
        .collect()
}

/// `v'_i = sum_k w_ik [R(A_k)(v_i - g_k) + g_k + T_k]`.
pub fn apply_embedded_deformation(
    mesh: &TemplateMesh,
    graph: &EmbeddedGraph,
    rotations: &[Quaternion<f64>],
    translations: &[Vec3],
) -> Result<VertexField> {
    let n = graph.node_count();
    if rotations.len() != n {
        return Err(Error::dim("node rotations", n, rotations.len()));
    }
    if translations.len() != n {
        return Err(Error::dim("node translations", n, translations.len()));
    }
    if graph.influence.len() != mesh.vertex_count() {
        return Err(Error::dim("graph influence rows", mesh.vertex_count(), graph.influence.len()));
    }
    let r = unit_rotations(rotations);
    Ok(VertexField(
        mesh.vertices
            .par_iter()
            .zip(&graph.influence)
            .map(|(v, row)| {
                // same as sum_k w (R (v - g) + g + T) since the weights sum to one,
                // but exact for identity parameters
                let d = row.iter().fold(Vec3::zeros(), |acc, &(k, w)| {
                    let off = v - graph.nodes[k];
                    acc + (r[k] * off - off + translations[k]) * w
                });
                v + d
            })
            .collect(),
    ))
}

/// Pulls `dL/dv'` back to raw node quaternions and translations.
pub fn embedded_deformation_backward(
    mesh: &TemplateMesh,
    graph: &EmbeddedGraph,
    rotations: &[Quaternion<f64>],
    grad_out: &[Vec3],
) -> (Vec<[f64; 4]>, Vec<Vec3>) {
    let n = graph.node_count();
    let mut grad_r = vec![Mat3::zeros(); n];
    let mut grad_t = vec![Vec3::zeros(); n];
    for ((v, row), g) in mesh.vertices.iter().zip(&graph.influence).zip(grad_out) {
        for &(k, w) in row {
            grad_t[k] += g * w;
            grad_r[k] += (g * w) * (v - graph.nodes[k]).transpose();
        }
    }
    let grad_q = rotations
        .iter()
        .zip(&grad_r)
        .map(|(q, gr)| {
            let (u, _) = normalize_quat(q);
            normalize_quat_backward(q, contract_rotation_grad(&u, gr))
        })
        .collect();
    (grad_q, grad_t)
}

/// Template mesh, its deformation graph and the skeleton that poses it.
#[derive(Clone, Debug)]
pub struct TemplateModel {
    pub mesh: TemplateMesh,
    pub graph: EmbeddedGraph,
    pub skeleton: Skeleton,
}

impl TemplateModel {
    pub fn new(mesh: TemplateMesh, skeleton: Skeleton) -> Result<Self> {
        let graph = EmbeddedGraph::build(&mesh)?;
        let joints = skeleton.joint_count();
        for (i, w) in mesh.skin_weights.iter().enumerate() {
            if w.iter().any(|&(j, _)| j >= joints) {
                return Err(Error::invalid(format!("vertex {i} is skinned to a joint outside the skeleton")));
            }
        }
        Ok(TemplateModel { mesh, graph, skeleton })
    }

    /// Per-vertex blended skinning transforms for a pose.
    pub fn pose_transforms(&self, pose: &SkeletalPose) -> Result<Vec<(Mat3, Vec3)>> {
        let t = skinning_transforms(&self.skeleton, pose)?;
        blend_transforms(&self.mesh.skin_weights, &t)
    }

    /// Skinned rest template, the `V~_f` used by the Laplacian regularizer.
    pub fn skinned_rest(&self, pose: &SkeletalPose) -> Result<VertexField> {
        Ok(apply_blended(&self.mesh.vertices, &self.pose_transforms(pose)?))
    }
}

/// Canonical and posed vertices of the deformed template.
pub fn deform_template(
    model: &TemplateModel,
    state: &DeformationState,
    pose: &SkeletalPose,
) -> Result<(VertexField, VertexField)> {
    let blended = model.pose_transforms(pose)?;
    deform_template_with(model, state, &blended)
}

/// [`deform_template`] with precomputed per-vertex skinning transforms.
pub fn deform_template_with(
    model: &TemplateModel,
    state: &DeformationState,
    blended: &[(Mat3, Vec3)],
) -> Result<(VertexField, VertexField)> {
    state.deltas.check_len(model.mesh.vertex_count(), "vertex deltas")?;
    let mut canonical = apply_embedded_deformation(&model.mesh, &model.graph, &state.rotations, &state.translations)?;
    for (c, d) in canonical.iter_mut().zip(state.deltas.iter()) {
        *c += d;
    }
    let posed = apply_blended(&canonical, blended);
    Ok((canonical, posed))
}

/// Pulls gradients on canonical and/or posed vertices back to the state.
pub fn deform_template_backward(
    model: &TemplateModel,
    state: &DeformationState,
    blended: &[(Mat3, Vec3)],
    grad_canonical: Option<&[Vec3]>,
    grad_posed: Option<&[Vec3]>,
) -> StateGrad {
    let nv = model.mesh.vertex_count();
    let mut g = vec![Vec3::zeros(); nv];
    if let Some(gc) = grad_canonical {
        for (a, b) in g.iter_mut().zip(gc) {
            *a += b;
        }
    }
    if let Some(gp) = grad_posed {
        for ((a, b), (r, _)) in g.iter_mut().zip(gp).zip(blended) {
            *a += r.transpose() * b;
        }
    }
    let (rotations, translations) = embedded_deformation_backward(&model.mesh, &model.graph, &state.rotations, &g);
    StateGrad {
        rotations,
        translations,
        deltas: g,
    }
}

/// Rotation about `axis` by `angle` as a raw quaternion.
pub fn axis_angle_quat(axis: &Vec3, angle: f64) -> Quaternion<f64> {
    *UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).quaternion()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec2;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn grid_mesh(n: usize) -> TemplateMesh {
        let mut v = Vec::new();
        let mut uv = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                v.push(Vec3::new(x, y, 0.1 * (x * 3.0).sin()));
                uv.push(Vec2::new(x, y));
            }
        }
        let mut f = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                f.push([a, a + 1, a + n + 1]);
                f.push([a, a + n + 1, a + n]);
            }
        }
        let w = (0..n * n)
            .map(|k| {
                let y = (k / n) as f64 / (n - 1) as f64;
                vec![(0, 1.0 - y), (1, y)]
            })
            .collect();
        TemplateMesh::new(v, f.clone(), uv, f, w).unwrap()
    }

    #[test]
    fn graph_influence_rows_are_normalized() {
        let m = grid_mesh(12);
        let g = EmbeddedGraph::build(&m).unwrap();
        assert_eq!(g.node_count(), 8);
        for row in &g.influence {
            assert!(!row.is_empty());
            assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_parameters_reproduce_rest() {
        let m = grid_mesh(6);
        let g = EmbeddedGraph::build(&m).unwrap();
        let n = g.node_count();
        let out = apply_embedded_deformation(&m, &g, &vec![Quaternion::identity(); n], &vec![Vec3::zeros(); n]).unwrap();
        for (a, b) in out.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-14);
        }
        let t = Vec3::new(0.1, -0.2, 0.3);
        let moved = apply_embedded_deformation(&m, &g, &vec![Quaternion::identity(); n], &vec![t; n]).unwrap();
        for (a, b) in moved.iter().zip(&m.vertices) {
            assert!((a - (b + t)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_node_rotates_about_its_position() {
        let m = grid_mesh(4);
        let g = EmbeddedGraph::with_nodes(&m, 1).unwrap();
        let q = axis_angle_quat(&Vec3::z(), FRAC_PI_2);
        let out = apply_embedded_deformation(&m, &g, &[q], &[Vec3::zeros()]).unwrap();
        let c = g.nodes[0];
        for (a, v) in out.iter().zip(&m.vertices) {
            let d = v - c;
            let expected = c + Vec3::new(-d.y, d.x, d.z);
            assert!((a - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_state_identity_pose_is_identity() {
        let m = grid_mesh(5);
        let skel = Skeleton::chain(2, Vec3::zeros(), Vec3::y(), 0.5);
        let model = TemplateModel::new(m, skel).unwrap();
        let mut s = DeformationState::for_model(&model);
        let (c, p) = deform_template(&model, &s, &SkeletalPose::identity(2)).unwrap();
        assert_eq!(c.0, model.mesh.vertices);
        assert_eq!(p.0, model.mesh.vertices);
        let k = Vec3::new(0.01, 0.02, -0.03);
        s.deltas = VertexField(vec![k; model.mesh.vertex_count()]);
        let (c, _) = deform_template(&model, &s, &SkeletalPose::identity(2)).unwrap();
        for (a, b) in c.iter().zip(&model.mesh.vertices) {
            assert!((a - (b + k)).norm() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut s = DeformationState::zero(3, 4);
        s.rotations[1] = axis_angle_quat(&Vec3::x(), 0.3);
        s.translations[2] = Vec3::new(1.0, 2.0, 3.0);
        s.deltas[3] = Vec3::new(-1.0, 0.5, 0.25);
        let p = s.params();
        assert_eq!(p.len(), DeformationState::param_count(3, 4));
        let back = DeformationState::from_params(&p, 3, 4, s.latent.clone()).unwrap();
        assert_eq!(back, s);
    }
}
