use nalgebra::{DMatrix, DVector};

use super::TemplateModel;
use crate::error::{Error, Result};
use crate::kinematics::{apply_blended, SkeletalPose};
use crate::math::Vec3;
use crate::mesh::VertexField;

/// Mean canonical shape plus the top `m` principal directions of the training frames.
#[derive(Clone, Debug)]
pub struct DeformationSubspace {
    pub mean: Vec<Vec3>,
    /// `3V x m`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Singular values of the centered data, largest first (all of them, not just `m`).
    pub singular_values: Vec<f64>,
}

impl DeformationSubspace {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Closest in-span canonical shape.
    pub fn reconstruct(&self, canonical: &VertexField) -> Result<VertexField> {
        canonical.check_len(self.mean.len(), "canonical vertices")?;
        let x = DVector::from_iterator(
            3 * self.mean.len(),
            canonical.iter().zip(&self.mean).flat_map(|(c, m)| (c - m).iter().copied().collect::<Vec<_>>()),
        );
        let coeff = self.components.tr_mul(&x);
        let y = &self.components * coeff;
        Ok(VertexField(
            self.mean
                .iter()
                .enumerate()
                .map(|(i, m)| m + Vec3::new(y[3 * i], y[3 * i + 1], y[3 * i + 2]))
                .collect(),
        ))
    }
}

pub fn fit_subspace(frames: &[VertexField], m: usize) -> Result<DeformationSubspace> {
    if frames.is_empty() {
        return Err(Error::invalid("fit_subspace needs at least one frame"));
    }
    if m > frames.len() {
        return Err(Error::invalid(format!(
            "subspace dimension {m} exceeds the {} available frames",
            frames.len()
        )));
    }
    let nv = frames[0].len();
    for f in frames {
        f.check_len(nv, "frame vertices")?;
    }
    let n = frames.len();
    let mean: Vec<Vec3> = (0..nv)
        .map(|i| frames.iter().map(|f| f[i]).sum::<Vec3>() / n as f64)
        .collect();
    let data = DMatrix::from_fn(n, 3 * nv, |r, c| frames[r][c / 3][c % 3] - mean[c / 3][c % 3]);
    let svd = data.svd(false, true);
    let sv = svd.singular_values;
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let components = DMatrix::from_fn(3 * nv, m, |r, c| vt[(order[c], r)]);
    Ok(DeformationSubspace {
        mean,
        components,
        singular_values: order.iter().map(|&k| sv[k]).collect(),
    })
}

/// Projects a canonical shape onto the subspace and poses it.
pub fn project_subspace(
    sub: &DeformationSubspace,
    model: &TemplateModel,
    canonical: &VertexField,
    pose: &SkeletalPose,
) -> Result<VertexField> {
    let c = sub.reconstruct(canonical)?;
    Ok(apply_blended(&c, &model.pose_transforms(pose)?))
}
