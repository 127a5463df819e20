use serde::{Deserialize, Serialize};

use super::MeasureError;
use crate::linalg::{spectral_map, symmetric_eigen, Matrix};
use crate::psd::PsdMatrix;

/// Nodes per axis for the Gaussian absolute-moment quadrature.
const QUAD_NODES_1D: usize = 40_001;
const QUAD_NODES_2D: usize = 601;
/// Half-width of the quadrature box in standard deviations.
const QUAD_HALF_WIDTH: f64 = 12.0;

/// `N(mean, covariance)`; a zero covariance is a Dirac mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMeasure {
    pub mean: Vec<f64>,
    pub covariance: PsdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: PsdMatrix) -> Result<Self, MeasureError> {
        let g = Self { mean, covariance };
        g.validate()?;
        Ok(g)
    }

    /// Centered Gaussian `N(0, M)`.
    pub fn centered(covariance: PsdMatrix) -> Result<Self, MeasureError> {
        Self::new(vec![0.0; covariance.order()], covariance)
    }

    /// One-dimensional `N(mean, var)`.
    pub fn scalar(mean: f64, var: f64) -> Result<Self, MeasureError> {
        Self::new(vec![mean], PsdMatrix::scalar(var)?)
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let d = self.mean.len();
        if !(1..=2).contains(&d) {
            return Err(MeasureError::UnsupportedDimension(d));
        }
        if self.covariance.order() != d {
            return Err(MeasureError::DimensionMismatch(d, self.covariance.order()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(MeasureError::Malformed("non-finite mean".into()));
        }
        self.covariance.validate()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `E ‖x‖_∞^l` by tensor trapezoid quadrature in whitened coordinates.
    pub fn abs_moment(&self, l: f64) -> f64 {
        let d = self.dim();
        let root = spectral_map(&symmetric_eigen(&self.covariance.to_matrix()), |x| x.max(0.0).sqrt());
        if root.frobenius_norm() == 0.0 {
            return self.mean.iter().map(|m| m.abs()).fold(0.0, f64::max).powf(l);
        }
        let n = if d == 1 { QUAD_NODES_1D } else { QUAD_NODES_2D };
        let h = 2.0 * QUAD_HALF_WIDTH / (n - 1) as f64;
        let nodes: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let z = -QUAD_HALF_WIDTH + k as f64 * h;
                let end = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                (z, end * h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let value = |z: &[f64]| -> f64 {
            let x = root.matvec(z);
            x.iter()
                .zip(&self.mean)
                .map(|(xi, m)| (xi + m).abs())
                .fold(0.0, f64::max)
                .powf(l)
        };
        if d == 1 {
            nodes.iter().map(|&(z, w)| w * value(&[z])).sum()
        } else {
            nodes
                .iter()
                .map(|&(z0, w0)| nodes.iter().map(|&(z1, w1)| w0 * w1 * value(&[z0, z1])).sum::<f64>())
                .sum()
        }
    }

    pub(crate) fn pushforward(&self, f: &Matrix) -> Result<Self, MeasureError> {
        let covariance = crate::psd::psd_pushforward(f, &self.covariance)?;
        Ok(Self {
            mean: f.matvec(&self.mean),
            covariance,
        })
    }
}
