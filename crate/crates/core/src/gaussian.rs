//! Multivariate normal density via Cholesky factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A Gaussian component with its covariance factored once.
#[derive(Debug, Clone)]
pub struct CholeskyGaussian {
    mean: DVector<f64>,
    /// Lower-triangular factor L with Sigma = L L^T.
    lower: DMatrix<f64>,
    /// -0.5 * (d ln 2pi + ln det Sigma)
    log_norm: f64,
}

impl CholeskyGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let chol = nalgebra::Cholesky::new(cov).ok_or(Error::NotPositiveDefinite)?;
        let lower = chol.l();
        let log_det: f64 = lower.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        Ok(CholeskyGaussian {
            mean,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            lower,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// ln N(x; mean, Sigma)
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.dim();
        // forward substitution: z = L^-1 (x - mean)
        let mut z = vec![0.0; d];
        let mut quad = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i) {
                s -= self.lower[(i, j)] * zj;
            }
            let zi = s / self.lower[(i, i)];
            z[i] = zi;
            quad += zi * zi;
        }
        self.log_norm - 0.5 * quad
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Density of N(mu, sigma) at `x`.
pub fn gaussian_pdf(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let g = CholeskyGaussian::new(mu.clone(), sigma.clone())?;
    Ok(g.pdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn identity_2d_at_mean() {
        let mu = DVector::from_vec(vec![0.3, -0.7]);
        let sigma = DMatrix::identity(2, 2);
        let p = gaussian_pdf(&mu, &mu, &sigma).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * PI), epsilon = 1e-15);
    }

    #[test]
    fn univariate_standard() {
        let x = DVector::from_vec(vec![1.0]);
        let mu = DVector::from_vec(vec![0.0]);
        let sigma = DMatrix::from_vec(1, 1, vec![1.0]);
        let p = gaussian_pdf(&x, &mu, &sigma).unwrap();
        assert_relative_eq!(p, (-0.5f64).exp() / (2.0 * PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn matches_direct_formula_3d() {
        // direct evaluation through determinant and explicit inverse
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.8],
        );
        let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let x = DVector::from_vec(vec![0.9, -0.4, 1.7]);

        let det = sigma.determinant();
        let inv = sigma.clone().try_inverse().unwrap();
        let d = &x - &mu;
        let quad: f64 = (inv * &d).dot(&d);
        let direct = (-0.5 * quad).exp() / ((2.0 * PI).powi(3) * det).sqrt();

        let p = gaussian_pdf(&x, &mu, &sigma).unwrap();
        assert_relative_eq!(p, direct, epsilon = 1e-12);
    }

    #[test]
    fn non_spd_is_rejected() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let mu = DVector::zeros(2);
        assert!(matches!(
            gaussian_pdf(&mu, &mu, &sigma),
            Err(Error::NotPositiveDefinite)
        ));
    }
}
