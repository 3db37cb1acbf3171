use nalgebra::Quaternion;
use rayon::prelude::*;

use super::sh::SH_COEFFS;
use super::{clamp_offset, clamp_offset_derivative, GaussianTexture, TexelAnchors, LOG_SCALE, OFFSET, OPACITY, ROTATION, SH, STORED_CHANNELS};
use crate::deformation::TemplateModel;
use crate::error::{Error, Result};
use crate::kinematics::{blend_transforms, skinning_transforms, SkeletalPose};
use crate::math::{contract_rotation_grad, normalize_quat, normalize_quat_backward, rotation_matrix, sigmoid, Mat3, Vec3};
use crate::mesh::TemplateMesh;

/// Posed splats of the covered texels, in ascending texel order.
#[derive(Clone, Debug)]
pub struct SplatSet {
    pub texel_ids: Vec<usize>,
    pub means: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    pub opacities: Vec<f64>,
    /// Coefficient-major SH, evaluated per view at render time.
    pub sh: Vec<[f64; 3 * SH_COEFFS]>,
    /// Blended skinning rotation of each splat.
    pub posing: Vec<Mat3>,
}

impl SplatSet {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Applies a rigid motion to every splat.
    pub fn transformed(&self, r: &Mat3, t: &Vec3) -> SplatSet {
        let mut out = self.clone();
        for k in 0..out.len() {
            out.means[k] = r * self.means[k] + t;
            out.covariances[k] = r * self.covariances[k] * r.transpose();
            out.posing[k] = r * self.posing[k];
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SplatGrad {
    pub means: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    /// With respect to the activated opacity.
    pub opacities: Vec<f64>,
    pub sh: Vec<[f64; 3 * SH_COEFFS]>,
}

impl SplatGrad {
    pub fn zeros(n: usize) -> Self {
        SplatGrad {
            means: vec![Vec3::zeros(); n],
            covariances: vec![Mat3::zeros(); n],
            opacities: vec![0.0; n],
            sh: vec![[0.0; 3 * SH_COEFFS]; n],
        }
    }

    pub fn add(&mut self, other: &SplatGrad) {
        for k in 0..self.means.len() {
            self.means[k] += other.means[k];
            self.covariances[k] += other.covariances[k];
            self.opacities[k] += other.opacities[k];
            for (a, b) in self.sh[k].iter_mut().zip(&other.sh[k]) {
                *a += b;
            }
        }
    }
}

/// Gradient with respect to the raw texture parameters, same layout as
/// [`GaussianTexture::params`]. The offset channels hold the gradient of whichever
/// offsets were used for posing.
#[derive(Clone, Debug)]
pub struct TextureGrad {
    pub params: Vec<f64>,
}

impl TextureGrad {
    /// Offset gradients of covered texels, ascending texel order.
    pub fn offsets(&self, texel_ids: &[usize]) -> Vec<Vec3> {
        texel_ids
            .iter()
            .map(|&k| {
                let b = k * STORED_CHANNELS + OFFSET;
                Vec3::new(self.params[b], self.params[b + 1], self.params[b + 2])
            })
            .collect()
    }
}

/// Blended skinning transform of each covered texel for `pose`.
pub fn texel_skinning(anchors: &TexelAnchors, model: &TemplateModel, pose: &SkeletalPose) -> Result<Vec<(Mat3, Vec3)>> {
    let joints = skinning_transforms(&model.skeleton, pose)?;
    blend_transforms(&anchors.skin_weights(&model.mesh), &joints)
}

fn local_factor(t: &[f64]) -> (Quaternion<f64>, Mat3, Mat3) {
    let q = Quaternion::new(t[ROTATION], t[ROTATION + 1], t[ROTATION + 2], t[ROTATION + 3]);
    let (u, _) = normalize_quat(&q);
    let rq = rotation_matrix(&u);
    let s = Mat3::from_diagonal(&Vec3::new(t[LOG_SCALE].exp(), t[LOG_SCALE + 1].exp(), t[LOG_SCALE + 2].exp()));
    (q, rq, s)
}

/// Poses the texture: canonical position is the barycentric base position plus
/// the clamped offset, then the texel's blended rigid transform moves the mean and
/// rotates the covariance. `offsets` overrides the stored raw offsets.
pub fn pose_texture(
    tex: &GaussianTexture,
    anchors: &TexelAnchors,
    mesh: &TemplateMesh,
    canonical: &[Vec3],
    texel_transforms: &[(Mat3, Vec3)],
    offsets: Option<&[Vec3]>,
) -> Result<SplatSet> {
    if anchors.resolution != tex.resolution {
        return Err(Error::dim("anchor resolution", tex.resolution, anchors.resolution));
    }
    if canonical.len() != mesh.vertex_count() {
        return Err(Error::dim("canonical vertices", mesh.vertex_count(), canonical.len()));
    }
    let ids = anchors.covered();
    if ids.iter().any(|&k| !tex.mask[k]) || ids.len() != tex.covered_count() {
        return Err(Error::invalid("texture mask differs from anchor coverage"));
    }
    if texel_transforms.len() != ids.len() {
        return Err(Error::dim("texel transforms", ids.len(), texel_transforms.len()));
    }
    if let Some(o) = offsets {
        if o.len() != ids.len() {
            return Err(Error::dim("texel offsets", ids.len(), o.len()));
        }
    }
    let base = anchors.base_positions(mesh, canonical);
    let per: Vec<_> = ids
        .par_iter()
        .enumerate()
        .map(|(n, &k)| {
            let t = tex.texel(k);
            let raw = offsets.map(|o| o[n]).unwrap_or_else(|| tex.raw_offset(k));
            let x = base[n] + clamp_offset(&raw, tex.offset_limit);
            let (r, tr) = &texel_transforms[n];
            let (_, rq, s) = local_factor(t);
            let m = r * rq * s;
            let mut sh = [0.0; 3 * SH_COEFFS];
            sh.copy_from_slice(&t[SH..SH + 3 * SH_COEFFS]);
            (r * x + tr, m * m.transpose(), sigmoid(t[OPACITY]), sh, *r)
        })
        .collect();
    let mut out = SplatSet {
        texel_ids: ids,
        means: Vec::with_capacity(per.len()),
        covariances: Vec::with_capacity(per.len()),
        opacities: Vec::with_capacity(per.len()),
        sh: Vec::with_capacity(per.len()),
        posing: Vec::with_capacity(per.len()),
    };
    for (mu, cov, o, sh, r) in per {
        out.means.push(mu);
        out.covariances.push(cov);
        out.opacities.push(o);
        out.sh.push(sh);
        out.posing.push(r);
    }
    Ok(out)
}

/// Pulls splat gradients back to the raw texture parameters. Geometry
/// (base positions and skinning) is held fixed.
pub fn pose_texture_backward(
    tex: &GaussianTexture,
    splats: &SplatSet,
    grad: &SplatGrad,
    offsets: Option<&[Vec3]>,
) -> TextureGrad {
    let mut params = vec![0.0; tex.params.len()];
    let per: Vec<[f64; STORED_CHANNELS]> = splats
        .texel_ids
        .par_iter()
        .enumerate()
        .map(|(n, &k)| {
            let t = tex.texel(k);
            let mut g = [0.0; STORED_CHANNELS];
            let r = splats.posing[n];
            let raw = offsets.map(|o| o[n]).unwrap_or_else(|| tex.raw_offset(k));
            let dx = r.transpose() * grad.means[n];
            let dd = dx.component_mul(&clamp_offset_derivative(&raw, tex.offset_limit));
            g[OFFSET..OFFSET + 3].copy_from_slice(dd.as_slice());

            let (q, rq, s) = local_factor(t);
            let gs = grad.covariances[n];
            let m = r * rq * s;
            let dm = (gs + gs.transpose()) * m;
            let drq = r.transpose() * dm * s;
            let ds = (r * rq).transpose() * dm;
            for a in 0..3 {
                g[LOG_SCALE + a] = ds[(a, a)] * s[(a, a)];
            }
            let (u, _) = normalize_quat(&q);
            let du = contract_rotation_grad(&u, &drq);
            let dq = normalize_quat_backward(&q, du);
            g[ROTATION..ROTATION + 4].copy_from_slice(&dq);
            let o = splats.opacities[n];
            g[OPACITY] = grad.opacities[n] * o * (1.0 - o);
            g[SH..].copy_from_slice(&grad.sh[n]);
            g
        })
        .collect();
    for (n, &k) in splats.texel_ids.iter().enumerate() {
        params[k * STORED_CHANNELS..(k + 1) * STORED_CHANNELS].copy_from_slice(&per[n]);
    }
    TextureGrad { params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::init_texel_anchors;
    use crate::math::Vec2;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> TemplateMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.1),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.2),
        ];
        let uv = v.iter().map(|p| Vec2::new(p.x, p.y)).collect();
        let f = vec![[0, 1, 2], [0, 2, 3]];
        TemplateMesh::new(v, f.clone(), uv, f, vec![vec![(0, 1.0)]; 4]).unwrap()
    }

    fn random_texture(anchors: &TexelAnchors, rng: &mut ChaCha8Rng) -> GaussianTexture {
        let mut tex = GaussianTexture::empty(anchors.resolution);
        for k in anchors.covered() {
            tex.mask[k] = true;
            for v in tex.texel_mut(k).iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            tex.texel_mut(k)[ROTATION] += 1.0;
            for a in 0..3 {
                tex.texel_mut(k)[LOG_SCALE + a] -= 2.0;
            }
        }
        tex
    }

    #[test]
    fn identity_pose_zero_offsets_on_surface() {
        let m = quad();
        let a = init_texel_anchors(&m, 4);
        let tex = GaussianTexture::initialize(&a, &m, &m.vertices, None, 0.9);
        let id = vec![(Mat3::identity(), Vec3::zeros()); a.covered_count()];
        let s = pose_texture(&tex, &a, &m, &m.vertices, &id, None).unwrap();
        let base = a.base_positions(&m, &m.vertices);
        for (mu, b) in s.means.iter().zip(&base) {
            assert!((mu - b).norm() < 1e-15);
        }
        assert!(s.opacities.iter().all(|o| (o - 0.9).abs() < 1e-12));
    }

    #[test]
    fn rigid_pose_is_equivariant_and_scalar_path_matches() {
        let m = quad();
        let a = init_texel_anchors(&m, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tex = random_texture(&a, &mut rng);
        let n = a.covered_count();
        let id = vec![(Mat3::identity(), Vec3::zeros()); n];
        let rest = pose_texture(&tex, &a, &m, &m.vertices, &id, None).unwrap();
        let r = Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let t = Vec3::new(0.5, -1.0, 2.0);
        let moved = pose_texture(&tex, &a, &m, &m.vertices, &vec![(r, t); n], None).unwrap();
        for k in 0..n {
            assert!((moved.means[k] - (r * rest.means[k] + t)).norm() < 1e-12);
            assert!((moved.covariances[k] - r * rest.covariances[k] * r.transpose()).norm() < 1e-12);
        }
        // independent per-texel recomputation
        let base = a.base_positions(&m, &m.vertices);
        for (n, &k) in a.covered().iter().enumerate() {
            let p = tex.texel(k);
            let off = Vec3::new(p[0], p[1], p[2]).map(|x| (1.0 / (1.0 + (-x).exp()) - 0.5) * 0.06);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(p[3], p[4], p[5], p[6]));
            let sc = Vec3::new(p[7].exp(), p[8].exp(), p[9].exp());
            let l = q.to_rotation_matrix().into_inner() * Mat3::from_diagonal(&sc.component_mul(&sc)) * q.to_rotation_matrix().into_inner().transpose();
            assert!((moved.means[n] - (r * (base[n] + off) + t)).norm() < 1e-12);
            assert!((moved.covariances[n] - r * l * r.transpose()).norm() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = quad();
        let a = init_texel_anchors(&m, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tex = random_texture(&a, &mut rng);
        let n = a.covered_count();
        let r = Rotation3::from_euler_angles(0.2, 0.1, -0.4).into_inner();
        let xf = vec![(r, Vec3::new(0.1, 0.2, 0.3)); n];
        let w: Vec<(Vec3, Mat3, f64, f64)> = (0..n)
            .map(|_| {
                (
                    Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let loss = |tex: &GaussianTexture| {
            let s = pose_texture(tex, &a, &m, &m.vertices, &xf, None).unwrap();
            (0..n)
                .map(|k| w[k].0.dot(&s.means[k]) + w[k].1.component_mul(&s.covariances[k]).sum() * 100.0 + w[k].2 * s.opacities[k] + w[k].3 * s.sh[k][4])
                .sum::<f64>()
        };
        let s = pose_texture(&tex, &a, &m, &m.vertices, &xf, None).unwrap();
        let mut g = SplatGrad::zeros(n);
        for k in 0..n {
            g.means[k] = w[k].0;
            g.covariances[k] = w[k].1 * 100.0;
            g.opacities[k] = w[k].2;
            g.sh[k][4] = w[k].3;
        }
        let tg = pose_texture_backward(&tex, &s, &g, None);
        let h = 1e-6;
        for &k in a.covered().iter().take(3) {
            for c in 0..STORED_CHANNELS {
                let i = k * STORED_CHANNELS + c;
                let orig = tex.params[i];
                tex.params[i] = orig + h;
                let lp = loss(&tex);
                tex.params[i] = orig - h;
                let lm = loss(&tex);
                tex.params[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - tg.params[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "channel {c}: fd {fd} vs {}", tg.params[i]);
            }
        }
    }
}
