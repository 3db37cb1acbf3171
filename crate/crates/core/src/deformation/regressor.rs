use nalgebra::{DMatrix, DVector};

use super::{DeformationState, LATENT_DIM};
use crate::error::{Error, Result};
use crate::kinematics::MotionWindow;

#[derive(Clone, Copy, Debug)]
pub struct RegressorOptions {
    pub lambda: f64,
    /// Add a copy of every sample with a zero latent so that `z = 0` at test
    /// time maps to the motion-only prediction.
    pub zero_latent_rows: bool,
}

impl Default for RegressorOptions {
    fn default() -> Self {
        RegressorOptions {
            lambda: 1e-6,
            zero_latent_rows: false,
        }
    }
}

/// Linear ridge map from window features (plus optional latent) to state parameters.
/// The bias is fit by centering and is not regularized.
#[derive(Clone, Debug)]
pub struct MotionRegressor {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub output_dim: usize,
    pub lambda: f64,
    weights: DMatrix<f64>,
    input_mean: DVector<f64>,
    output_mean: DVector<f64>,
}

impl MotionRegressor {
    pub fn uses_latent(&self) -> bool {
        self.latent_dim > 0
    }

    pub fn predict(&self, window: &MotionWindow, latent: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = window.features();
        if x.len() != self.feature_dim {
            return Err(Error::dim("window features", self.feature_dim, x.len()));
        }
        if self.latent_dim > 0 {
            match latent {
                Some(z) if z.len() == self.latent_dim => x.extend_from_slice(z),
                Some(z) => return Err(Error::dim("latent", self.latent_dim, z.len())),
                None => x.extend(std::iter::repeat_n(0.0, self.latent_dim)),
            }
        }
        Ok(self.predict_raw(&x))
    }

    fn predict_raw(&self, x: &[f64]) -> Vec<f64> {
        let xc = DVector::from_column_slice(x) - &self.input_mean;
        let y = self.weights.tr_mul(&xc) + &self.output_mean;
        y.as_slice().to_vec()
    }

    /// Predicts a full state; the latent is carried over unchanged.
    pub fn predict_state(
        &self,
        window: &MotionWindow,
        latent: Option<&[f64]>,
        nodes: usize,
        vertices: usize,
    ) -> Result<DeformationState> {
        let p = self.predict(window, latent)?;
        let mut s = DeformationState::from_params(
            &p,
            nodes,
            vertices,
            latent.map(|z| z.to_vec()).unwrap_or_else(|| vec![0.0; LATENT_DIM]),
        )?;
        s.normalize_rotations();
        Ok(s)
    }
}

/// Closed-form ridge fit on feature rows `x` and target rows `y`.
pub fn fit_linear(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>, f64)> {
    if x.len() < 2 {
        return Err(Error::invalid(format!("regression needs at least 2 samples, got {}", x.len())));
    }
    if x.len() != y.len() {
        return Err(Error::dim("regression targets", x.len(), y.len()));
    }
    let (n, d, p) = (x.len(), x[0].len(), y[0].len());
    let xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let ym = DMatrix::from_fn(n, p, |i, j| y[i][j]);
    let x_mean = DVector::from_fn(d, |j, _| xm.column(j).mean());
    let y_mean = DVector::from_fn(p, |j, _| ym.column(j).mean());
    let xc = DMatrix::from_fn(n, d, |i, j| xm[(i, j)] - x_mean[j]);
    let yc = DMatrix::from_fn(n, p, |i, j| ym[(i, j)] - y_mean[j]);
    let gram = xc.tr_mul(&xc);
    let rhs = xc.tr_mul(&yc);
    let mut lam = lambda.max(0.0);
    loop {
        let a = &gram + DMatrix::identity(d, d) * lam;
        if let Some(ch) = a.cholesky() {
            let w = ch.solve(&rhs);
            if w.iter().all(|v| v.is_finite()) {
                return Ok((w, x_mean, y_mean, lam));
            }
        }
        let raised = if lam > 0.0 { lam * 10.0 } else { 1e-12 * (1.0 + gram.trace()) };
        log::warn!("ridge normal matrix is singular at lambda {lam:e}; raising to {raised:e}");
        lam = raised;
        if lam > 1e12 {
            return Err(Error::invalid("ridge regression failed to regularize"));
        }
    }
}

/// Fits the motion regressor; with `latents` the latent is appended to the features.
pub fn fit_regressor(
    windows: &[MotionWindow],
    latents: Option<&[Vec<f64>]>,
    targets: &[DeformationState],
    opts: RegressorOptions,
) -> Result<MotionRegressor> {
    if windows.len() != targets.len() {
        return Err(Error::dim("regressor targets", windows.len(), targets.len()));
    }
    if windows.len() < 2 {
        return Err(Error::invalid(format!("fit_regressor needs at least 2 samples, got {}", windows.len())));
    }
    let feats: Vec<Vec<f64>> = windows.iter().map(|w| w.features()).collect();
    let feature_dim = feats[0].len();
    if feats.iter().any(|f| f.len() != feature_dim) {
        return Err(Error::invalid("motion windows have inconsistent feature lengths"));
    }
    let ys: Vec<Vec<f64>> = targets.iter().map(|t| t.params()).collect();
    let mut xs = feats.clone();
    let mut yrows = ys.clone();
    let mut latent_dim = 0;
    if let Some(z) = latents {
        if z.len() != windows.len() {
            return Err(Error::dim("latents", windows.len(), z.len()));
        }
        latent_dim = z[0].len();
        for (x, zi) in xs.iter_mut().zip(z) {
            if zi.len() != latent_dim {
                return Err(Error::dim("latent", latent_dim, zi.len()));
            }
            x.extend_from_slice(zi);
        }
        if opts.zero_latent_rows {
            for (f, y) in feats.iter().zip(&ys) {
                let mut x = f.clone();
                x.extend(std::iter::repeat_n(0.0, latent_dim));
                xs.push(x);
                yrows.push(y.clone());
            }
        }
    }
    let (weights, input_mean, output_mean, lambda) = fit_linear(&xs, &yrows, opts.lambda)?;
    Ok(MotionRegressor {
        feature_dim,
        latent_dim,
        output_dim: ys[0].len(),
        lambda,
        weights,
        input_mean,
        output_mean,
    })
}

/// Sum of squared training residuals of a regressor.
pub fn training_residual(
    reg: &MotionRegressor,
    windows: &[MotionWindow],
    latents: Option<&[Vec<f64>]>,
    targets: &[DeformationState],
) -> Result<f64> {
    let mut total = 0.0;
    for (i, (w, t)) in windows.iter().zip(targets).enumerate() {
        let z = latents.map(|z| z[i].as_slice());
        let p = reg.predict(w, z)?;
        total += p.iter().zip(t.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total)
}

/// Per-sample latents spanning the top principal directions of `residuals`
/// (rows are samples), padded with zeros up to `dim`.
pub fn latents_from_residuals(residuals: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let n = residuals.len();
    if n == 0 {
        return Vec::new();
    }
    let p = residuals[0].len();
    let m = DMatrix::from_fn(n, p, |i, j| residuals[i][j]);
    let mean = DVector::from_fn(p, |j, _| m.column(j).mean());
    let mc = DMatrix::from_fn(n, p, |i, j| m[(i, j)] - mean[j]);
    let svd = mc.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    (0..n)
        .map(|i| {
            let mut z = vec![0.0; dim];
            for (slot, &k) in z.iter_mut().zip(&order) {
                *slot = u[(i, k)] * svd.singular_values[k];
            }
            z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{SkeletalPose, MotionWindow};
    use crate::math::Vec3;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(angle: f64) -> MotionWindow {
        MotionWindow {
            poses: vec![SkeletalPose {
                rotations: vec![UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle)],
                root_translation: Vec3::zeros(),
            }],
        }
    }

    fn state_from(v: f64, extra: f64) -> DeformationState {
        let mut s = DeformationState::zero(1, 2);
        s.translations[0] = Vec3::new(v, 2.0 * v, extra);
        s.deltas[1] = Vec3::new(extra, 0.0, -v);
        s
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let ws: Vec<_> = (0..5).map(|i| window(0.1 * i as f64)).collect();
        let ts: Vec<_> = (0..5).map(|_| state_from(0.3, 0.1)).collect();
        let reg = fit_regressor(&ws, None, &ts, RegressorOptions::default()).unwrap();
        assert!(training_residual(&reg, &ws, None, &ts).unwrap() < 1e-20);
    }

    #[test]
    fn linear_targets_fit_exactly() {
        let ws: Vec<_> = (0..6).map(|i| window(0.05 * i as f64)).collect();
        // target linear in the z component of the rotation quaternion
        let ts: Vec<_> = ws
            .iter()
            .map(|w| state_from(w.poses[0].rotations[0].quaternion().k * 3.0, 0.0))
            .collect();
        let opts = RegressorOptions {
            lambda: 1e-14,
            ..Default::default()
        };
        let reg = fit_regressor(&ws, None, &ts, opts).unwrap();
        assert!(training_residual(&reg, &ws, None, &ts).unwrap() <= 1e-8);
    }

    #[test]
    fn latents_reduce_training_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ws: Vec<_> = (0..10).map(|i| window(0.1 * (i % 4) as f64)).collect();
        let ts: Vec<_> = ws
            .iter()
            .map(|w| state_from(w.poses[0].rotations[0].angle(), rng.random_range(-0.05..0.05)))
            .collect();
        let opts = RegressorOptions::default();
        let base = fit_regressor(&ws, None, &ts, opts).unwrap();
        let r0 = training_residual(&base, &ws, None, &ts).unwrap();
        let resid: Vec<Vec<f64>> = ws
            .iter()
            .zip(&ts)
            .map(|(w, t)| {
                let p = base.predict(w, None).unwrap();
                t.params().iter().zip(p).map(|(a, b)| a - b).collect()
            })
            .collect();
        let z = latents_from_residuals(&resid, LATENT_DIM);
        let aug = fit_regressor(&ws, Some(&z), &ts, opts).unwrap();
        let r1 = training_residual(&aug, &ws, Some(&z), &ts).unwrap();
        assert!(r1 < r0, "{r1} vs {r0}");
    }
}
