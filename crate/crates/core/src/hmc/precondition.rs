use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::Target;
use crate::optim::{minimize, LbfgsOptions};
use crate::{Error, Result};

/// `target` seen through `x = shift + scale · u`.
///
/// Sampling `u` with identity mass is the same as sampling `x` with mass
/// matrix `(scale scaleᵀ)⁻¹`. The Jacobian is constant, so densities only
/// differ by a constant.
pub struct Affine<'a, T: ?Sized> {
    target: &'a T,
    shift: DVector<f64>,
    scale: DMatrix<f64>,
}

impl<'a, T: Target + ?Sized> Affine<'a, T> {
    pub fn new(target: &'a T, shift: Vec<f64>, scale: DMatrix<f64>) -> Result<Self> {
        let d = target.dim();
        if shift.len() != d || scale.nrows() != d || scale.ncols() != d {
            return Err(Error::Shape(format!(
                "affine map must be {d}-dimensional, got shift {} and scale {}x{}",
                shift.len(),
                scale.nrows(),
                scale.ncols()
            )));
        }
        Ok(Self {
            target,
            shift: DVector::from_vec(shift),
            scale,
        })
    }

    pub fn to_original(&self, u: &[f64]) -> Vec<f64> {
        (&self.shift + &self.scale * DVector::from_column_slice(u))
            .iter()
            .copied()
            .collect()
    }

    /// Inverse of [`Self::to_original`].
    pub fn to_whitened(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = DVector::from_column_slice(x) - &self.shift;
        self.scale
            .clone()
            .lu()
            .solve(&r)
            .map(|u| u.iter().copied().collect())
    }
}

impl<T: Target + ?Sized> Target for Affine<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.to_original(u);
        let mut gx = vec![0.0; x.len()];
        let lp = self.target.log_density_grad(&x, &mut gx);
        if lp.is_finite() {
            let gu = self.scale.tr_mul(&DVector::from_vec(gx));
            grad.copy_from_slice(gu.as_slice());
        }
        lp
    }
}

/// Gaussian approximation at the mode.
#[derive(Debug, Clone)]
pub struct Laplace {
    pub mode: Vec<f64>,
    /// Square root of the approximate covariance: `cov = scale scaleᵀ`.
    pub scale: DMatrix<f64>,
    pub converged: bool,
}

/// Finds the mode of `target` from `init` and inverts a finite-difference
/// Hessian of the log density there. Curvatures are floored at
/// `1e-8 × largest` so the result is always a valid covariance root.
pub fn laplace_approximation<T: Target + ?Sized>(target: &T, init: &[f64]) -> Result<Laplace> {
    let d = target.dim();
    let opts = LbfgsOptions {
        max_iter: 500,
        max_abs_x: 1e6,
        ..LbfgsOptions::default()
    };
    let min = minimize(
        |x| {
            let mut g = vec![0.0; d];
            let lp = target.log_density_grad(x, &mut g);
            lp.is_finite()
                .then(|| (-lp, g.into_iter().map(|v| -v).collect()))
        },
        init,
        &opts,
    )?;

    let x = &min.x;
    let mut h = DMatrix::zeros(d, d);
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let ok = target.log_density_grad(&xp, &mut gp).is_finite()
            && target.log_density_grad(&xm, &mut gm).is_finite();
        if !ok {
            return Err(Error::SamplerInit(
                "log density is not finite around its mode".into(),
            ));
        }
        for i in 0..d {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(top > 0.0 && top.is_finite()) {
        return Err(Error::SamplerInit("log density has no curvature at its mode".into()));
    }
    let root = DVector::from_iterator(
        d,
        eig.eigenvalues.iter().map(|l| 1.0 / l.abs().max(1e-8 * top).sqrt()),
    );
    let scale = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    Ok(Laplace {
        mode: min.x,
        scale,
        converged: min.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmc::FnTarget;

    fn gaussian(mean: [f64; 2], prec: [[f64; 2]; 2]) -> impl Target {
        FnTarget::new(
            2,
            move |x: &[f64]| {
                let d = [x[0] - mean[0], x[1] - mean[1]];
                -0.5 * (0..2)
                    .flat_map(|i| (0..2).map(move |j| (i, j)))
                    .map(|(i, j)| d[i] * prec[i][j] * d[j])
                    .sum::<f64>()
            },
            move |x: &[f64], g: &mut [f64]| {
                let d = [x[0] - mean[0], x[1] - mean[1]];
                for i in 0..2 {
                    g[i] = -(prec[i][0] * d[0] + prec[i][1] * d[1]);
                }
            },
        )
    }

    #[test]
    fn laplace_is_exact_for_gaussians() {
        let prec = [[4.0, 1.5], [1.5, 1.0]];
        let t = gaussian([1.0, -2.0], prec);
        let l = laplace_approximation(&t, &[0.0, 0.0]).unwrap();
        assert!((l.mode[0] - 1.0).abs() < 1e-5 && (l.mode[1] + 2.0).abs() < 1e-5);
        let cov = &l.scale * l.scale.transpose();
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 1.0]);
        let want = p.try_inverse().unwrap();
        assert!((cov - want).abs().max() < 1e-6);
    }

    #[test]
    fn affine_target_whitens_and_maps_back() {
        let prec = [[4.0, 1.5], [1.5, 1.0]];
        let t = gaussian([1.0, -2.0], prec);
        let l = laplace_approximation(&t, &[0.0, 0.0]).unwrap();
        let a = Affine::new(&t, l.mode.clone(), l.scale.clone()).unwrap();
        // In whitened coordinates the density is a standard normal.
        let mut g = [0.0; 2];
        let lp0 = a.log_density_grad(&[0.0, 0.0], &mut g);
        let lp1 = a.log_density_grad(&[0.3, -0.4], &mut g);
        assert!((lp0 - lp1 - 0.125).abs() < 1e-6);
        assert!((g[0] + 0.3).abs() < 1e-6 && (g[1] - 0.4).abs() < 1e-6);
        let x = a.to_original(&[0.3, -0.4]);
        let u = a.to_whitened(&x).unwrap();
        assert!((u[0] - 0.3).abs() < 1e-12 && (u[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn shape_is_checked() {
        let t = gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
        assert!(Affine::new(&t, vec![0.0], DMatrix::identity(2, 2)).is_err());
    }
}
