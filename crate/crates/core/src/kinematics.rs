//! Skeletons, pose windows and dual-quaternion skinning.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::mesh::VertexField;

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest transform from this joint's frame to its parent's (world for the root).
    pub rest: Isometry3<f64>,
}

#[derive(Clone, Debug)]
pub struct Skeleton {
    joints: Vec<Joint>,
    order: Vec<usize>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let roots: Vec<usize> = (0..joints.len()).filter(|&j| joints[j].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::invalid(format!("skeleton needs exactly one root, found {}", roots.len())));
        }
        for (j, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= joints.len() {
                    return Err(Error::invalid(format!("joint {j} has unknown parent {p}")));
                }
            }
        }
        // breadth-first from the root; any joint not reached sits on a cycle
        let mut order = vec![roots[0]];
        let mut k = 0;
        while k < order.len() {
            let p = order[k];
            order.extend((0..joints.len()).filter(|&j| joints[j].parent == Some(p)));
            k += 1;
        }
        if order.len() != joints.len() {
            return Err(Error::invalid("skeleton parent links contain a cycle"));
        }
        Ok(Skeleton { joints, order })
    }

    /// A straight chain of `n` joints spaced `bone` apart along `axis`.
    pub fn chain(n: usize, origin: Vec3, axis: Vec3, bone: f64) -> Self {
        let joints = (0..n)
            .map(|j| Joint {
                name: format!("joint{j}"),
                parent: j.checked_sub(1),
                rest: Isometry3::from_parts(
                    Translation3::from(if j == 0 { origin } else { axis.normalize() * bone }),
                    UnitQuaternion::identity(),
                ),
            })
            .collect();
        Skeleton::new(joints).expect("chain skeleton is a valid tree")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Pose degrees of freedom: one quaternion per joint plus the root translation.
    pub fn dof_count(&self) -> usize {
        4 * self.joints.len() + 3
    }

    pub fn rest_globals(&self) -> Vec<Isometry3<f64>> {
        self.globals(&SkeletalPose::identity(self.joint_count()))
    }

    fn globals(&self, pose: &SkeletalPose) -> Vec<Isometry3<f64>> {
        let mut g = vec![Isometry3::identity(); self.joints.len()];
        for &j in &self.order {
            let joint = &self.joints[j];
            let local = joint.rest * Isometry3::from_parts(Translation3::identity(), pose.rotations[j]);
            g[j] = match joint.parent {
                Some(p) => g[p] * local,
                None => Translation3::from(pose.root_translation) * local,
            };
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletalPose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vec3,
}

impl SkeletalPose {
    pub fn identity(joints: usize) -> Self {
        SkeletalPose {
            rotations: vec![UnitQuaternion::identity(); joints],
            root_translation: Vec3::zeros(),
        }
    }
}

/// Unit dual quaternion `real + eps * dual` encoding a rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualQuaternion {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuaternion {
    pub fn identity() -> Self {
        DualQuaternion {
            real: Quaternion::identity(),
            dual: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let r = *iso.rotation.quaternion();
        let t = iso.translation.vector;
        let tq = Quaternion::new(0.0, t.x, t.y, t.z);
        DualQuaternion {
            real: r,
            dual: tq * r * 0.5,
        }
    }

    pub fn from_rotation_translation(r: UnitQuaternion<f64>, t: Vec3) -> Self {
        Self::from_isometry(&Isometry3::from_parts(Translation3::from(t), r))
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.real)
    }

    pub fn translation(&self) -> Vec3 {
        let t = self.dual * self.real.conjugate() * 2.0;
        Vec3::new(t.i, t.j, t.k)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation()), self.rotation())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Composition `self * other` (apply `other` first).
    pub fn compose(&self, other: &DualQuaternion) -> DualQuaternion {
        DualQuaternion {
            real: self.real * other.real,
            dual: self.real * other.dual + self.dual * other.real,
        }
    }

    /// Divides by the real-part norm and removes the dual component along the real part.
    pub fn normalized(&self) -> DualQuaternion {
        let n = self.real.norm();
        let real = self.real / n;
        let dual = self.dual / n;
        let d = real.coords.dot(&dual.coords);
        DualQuaternion {
            real,
            dual: dual - real * d,
        }
    }

    pub fn rigidity_residual(&self) -> f64 {
        self.real.coords.dot(&self.dual.coords)
    }
}

/// World transform of every joint for the given pose.
pub fn pose_to_global_transforms(skel: &Skeleton, pose: &SkeletalPose) -> Result<Vec<DualQuaternion>> {
    if pose.rotations.len() != skel.joint_count() {
        return Err(Error::dim("pose joint rotations", skel.joint_count(), pose.rotations.len()));
    }
    Ok(skel.globals(pose).iter().map(DualQuaternion::from_isometry).collect())
}

/// Per-joint transforms mapping rest-pose world points to posed world points.
pub fn skinning_transforms(skel: &Skeleton, pose: &SkeletalPose) -> Result<Vec<DualQuaternion>> {
    if pose.rotations.len() != skel.joint_count() {
        return Err(Error::dim("pose joint rotations", skel.joint_count(), pose.rotations.len()));
    }
    let posed = skel.globals(pose);
    let rest = skel.rest_globals();
    Ok(posed
        .iter()
        .zip(&rest)
        .map(|(g, r)| DualQuaternion::from_isometry(&(g * r.inverse())))
        .collect())
}

/// Blended rigid transform for one weight set, as (rotation matrix, translation).
pub fn blend_transform(weights: &[(usize, f64)], transforms: &[DualQuaternion]) -> Option<(Mat3, Vec3)> {
    let pivot = weights
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))?;
    let pivot_real = transforms[pivot.0].real;
    let mut acc = DualQuaternion {
        real: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        dual: Quaternion::new(0.0, 0.0, 0.0, 0.0),
    };
    for &(j, w) in weights {
        if w == 0.0 {
            continue;
        }
        let dq = transforms[j];
        let s = if dq.real.coords.dot(&pivot_real.coords) < 0.0 { -w } else { w };
        acc.real += dq.real * s;
        acc.dual += dq.dual * s;
    }
    if acc.real.norm() < 1e-12 {
        return None;
    }
    let b = acc.normalized();
    Some((b.rotation().to_rotation_matrix().into_inner(), b.translation()))
}

/// Per-vertex blended rigid transforms. Posing is `R_i p + t_i`, so these also give
/// the Jacobian of posed positions with respect to canonical ones.
pub fn blend_transforms(
    weights: &[Vec<(usize, f64)>],
    transforms: &[DualQuaternion],
) -> Result<Vec<(Mat3, Vec3)>> {
    for (i, w) in weights.iter().enumerate() {
        if let Some(&(j, _)) = w.iter().find(|(j, _)| *j >= transforms.len()) {
            return Err(Error::invalid(format!("vertex {i} references joint {j} of {}", transforms.len())));
        }
    }
    weights
        .par_iter()
        .enumerate()
        .map(|(i, w)| blend_transform(w, transforms).ok_or(Error::ZeroWeight(i)))
        .collect()
}

pub fn apply_blended(positions: &[Vec3], blended: &[(Mat3, Vec3)]) -> VertexField {
    VertexField(
        positions
            .iter()
            .zip(blended)
            .map(|(p, (r, t))| r * p + t)
            .collect(),
    )
}

/// Dual-quaternion skinning of `positions`.
pub fn dq_skin(
    positions: &VertexField,
    weights: &[Vec<(usize, f64)>],
    transforms: &[DualQuaternion],
) -> Result<VertexField> {
    positions.check_len(weights.len(), "positions vs skin weights")?;
    let blended = blend_transforms(weights, transforms)?;
    Ok(apply_blended(positions, &blended))
}

/// `k` consecutive poses with root translation expressed relative to the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionWindow {
    pub poses: Vec<SkeletalPose>,
}

impl MotionWindow {
    /// Flattened feature vector: sign-canonical quaternion components per pose and
    /// joint, followed by the relative root translations.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.poses {
            for q in &p.rotations {
                let q = q.quaternion();
                let s = if q.w < 0.0 { -1.0 } else { 1.0 };
                out.extend([q.w * s, q.i * s, q.j * s, q.k * s]);
            }
        }
        for p in &self.poses {
            out.extend(p.root_translation.iter());
        }
        out
    }
}

/// Builds the window ending at the last given pose, padding with the first pose
/// when fewer than `k` are available.
pub fn normalize_window(poses: &[SkeletalPose], k: usize) -> Result<MotionWindow> {
    if poses.is_empty() {
        return Err(Error::invalid("cannot build a motion window from no poses"));
    }
    if k == 0 {
        return Err(Error::invalid("motion window length must be at least 1"));
    }
    let start = poses.len().saturating_sub(k);
    let mut window: Vec<SkeletalPose> = Vec::with_capacity(k);
    for _ in poses.len()..k {
        window.push(poses[0].clone());
    }
    window.extend_from_slice(&poses[start..]);
    let origin = window[k - 1].root_translation;
    for p in &mut window {
        p.root_translation -= origin;
    }
    Ok(MotionWindow { poses: window })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JointDoc {
    pub name: String,
    pub parent: Option<usize>,
    /// `[w, x, y, z]`
    pub rest_rotation: [f64; 4],
    pub rest_translation: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PoseDoc {
    /// One `[w, x, y, z]` per joint.
    pub rotations: Vec<[f64; 4]>,
    pub root: [f64; 3],
}

/// JSON form of a skeleton plus its pose sequence.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MotionDoc {
    pub joints: Vec<JointDoc>,
    pub poses: Vec<PoseDoc>,
}

impl MotionDoc {
    pub fn from_motion(skel: &Skeleton, poses: &[SkeletalPose]) -> Self {
        let q4 = |q: &UnitQuaternion<f64>| [q.w, q.i, q.j, q.k];
        MotionDoc {
            joints: skel
                .joints
                .iter()
                .map(|j| JointDoc {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest_rotation: q4(&j.rest.rotation),
                    rest_translation: j.rest.translation.vector.into(),
                })
                .collect(),
            poses: poses
                .iter()
                .map(|p| PoseDoc {
                    rotations: p.rotations.iter().map(q4).collect(),
                    root: p.root_translation.into(),
                })
                .collect(),
        }
    }

    pub fn to_motion(&self) -> Result<(Skeleton, Vec<SkeletalPose>)> {
        let unit = |a: [f64; 4]| UnitQuaternion::from_quaternion(Quaternion::new(a[0], a[1], a[2], a[3]));
        let skel = Skeleton::new(
            self.joints
                .iter()
                .map(|j| Joint {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest: Isometry3::from_parts(Translation3::from(Vec3::from(j.rest_translation)), unit(j.rest_rotation)),
                })
                .collect(),
        )?;
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(f, p)| {
                if p.rotations.len() != skel.joint_count() {
                    return Err(Error::invalid(format!(
                        "pose {f} has {} rotations for {} joints",
                        p.rotations.len(),
                        skel.joint_count()
                    )));
                }
                Ok(SkeletalPose {
                    rotations: p.rotations.iter().map(|&q| unit(q)).collect(),
                    root_translation: Vec3::from(p.root),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((skel, poses))
    }
}
