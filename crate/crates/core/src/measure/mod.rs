//! Probability measures on `R^1` and `R^2`: lattice-supported measures with
//! exact convolution, analytic Gaussians, and the Fourier l-distance.

pub mod convolution;
pub mod fourier;
pub mod gaussian;
pub mod grid;
pub mod lattice;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::psd::{PsdError, PsdMatrix};

pub use convolution::{convolve, convolve_with, ConvolutionMethod};
pub use fourier::{char_fn, fourier_l_distance, prepared_distance, MomentSummary, PreparedMeasure, MOMENT_TOL};
pub use gaussian::GaussianMeasure;
pub use grid::{DualGrid, GridConfig};
pub use lattice::{LatticeMeasure, TRIM_MASS_BUDGET, WEIGHT_FLOOR};

/// Accepted deviation of total mass from 1.
pub const MASS_TOL: f64 = 1e-10;

/// Per-axis node cap when re-binning a general linear pushforward.
const REBIN_MAX_NODES: usize = 1 << 14;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("malformed measure: {0}")]
    Malformed(String),
    #[error("total mass {0} is not 1")]
    MassNotOne(f64),
    #[error("dimension {0} is not supported (only 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("incommensurable lattices: {0}")]
    IncommensurableLattices(String),
    #[error("dilation factor must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("exponent l = {0} outside [1, 3)")]
    InvalidExponent(f64),
    #[error("cannot convolve a lattice measure with a Gaussian")]
    MixedConvolution,
    #[error(transparent)]
    Psd(#[from] PsdError),
}

/// A lattice measure (Diracs included, as one-atom lattices) or a Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Measure {
    Lattice(LatticeMeasure),
    Gaussian(GaussianMeasure),
}

impl From<LatticeMeasure> for Measure {
    fn from(m: LatticeMeasure) -> Self {
        Measure::Lattice(m)
    }
}

impl From<GaussianMeasure> for Measure {
    fn from(g: GaussianMeasure) -> Self {
        Measure::Gaussian(g)
    }
}

impl Measure {
    pub fn dirac(point: &[f64]) -> Result<Self, MeasureError> {
        LatticeMeasure::dirac(point).map(Measure::Lattice)
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::Lattice(m) => m.dim(),
            Measure::Gaussian(g) => g.dim(),
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        match self {
            Measure::Lattice(m) => m.validate(),
            Measure::Gaussian(g) => g.validate(),
        }
    }

    pub fn as_lattice(&self) -> Option<&LatticeMeasure> {
        match self {
            Measure::Lattice(m) => Some(m),
            Measure::Gaussian(_) => None,
        }
    }

    pub fn expectation(&self) -> Vec<f64> {
        match self {
            Measure::Lattice(m) => m.mean(),
            Measure::Gaussian(g) => g.mean.clone(),
        }
    }

    pub(crate) fn variance_entries(&self) -> Vec<f64> {
        match self {
            Measure::Lattice(m) => m.covariance(),
            Measure::Gaussian(g) => g.covariance.entries(),
        }
    }

    /// Centered second-moment matrix.
    pub fn variance_matrix(&self) -> PsdMatrix {
        match self {
            Measure::Lattice(m) => {
                let d = m.dim();
                PsdMatrix::from_symmetric_unchecked(&Matrix::from_row_major(d, d, m.covariance()))
            }
            Measure::Gaussian(g) => g.covariance.clone(),
        }
    }

    /// `∫ ‖x‖_∞^l dμ`.
    pub fn abs_moment(&self, l: f64) -> f64 {
        match self {
            Measure::Lattice(m) => m.abs_moment(l),
            Measure::Gaussian(g) => g.abs_moment(l),
        }
    }

    /// `c ⋆ μ`, the pushforward along `x ↦ c x`.
    pub fn dilate(&self, c: f64) -> Result<Self, MeasureError> {
        self.dilate_exact(c, c * c)
    }

    /// Dilation with the square of `c` supplied separately, so that a
    /// Gaussian covariance can be rescaled by an exactly representable factor
    /// (e.g. `½` for `c = 1/√2`, where `c·c` rounds above `½`).
    pub fn dilate_exact(&self, c: f64, c_sq: f64) -> Result<Self, MeasureError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(MeasureError::InvalidScale(c));
        }
        Ok(match self {
            Measure::Lattice(m) => Measure::Lattice(m.dilated(c)),
            Measure::Gaussian(g) => Measure::Gaussian(GaussianMeasure {
                mean: g.mean.iter().map(|x| x * c).collect(),
                covariance: g.covariance.scaled(c_sq),
            }),
        })
    }

    /// `μ ∗ ν`: exact for lattices, analytic for Gaussians.
    pub fn convolve(&self, other: &Measure) -> Result<Self, MeasureError> {
        match (self, other) {
            (Measure::Lattice(a), Measure::Lattice(b)) => convolve(a, b).map(Measure::Lattice),
            (Measure::Gaussian(a), Measure::Gaussian(b)) => {
                if a.dim() != b.dim() {
                    return Err(MeasureError::DimensionMismatch(a.dim(), b.dim()));
                }
                let d = a.dim();
                let (ca, cb) = (a.covariance.entries(), b.covariance.entries());
                let sum: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x + y).collect();
                Ok(Measure::Gaussian(GaussianMeasure {
                    mean: a.mean.iter().zip(&b.mean).map(|(x, y)| x + y).collect(),
                    covariance: PsdMatrix::from_symmetric_unchecked(&Matrix::from_row_major(d, d, sum)),
                }))
            }
            _ => Err(MeasureError::MixedConvolution),
        }
    }

    /// Translation by `shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<Self, MeasureError> {
        if shift.len() != self.dim() {
            return Err(MeasureError::DimensionMismatch(self.dim(), shift.len()));
        }
        Ok(match self {
            Measure::Lattice(m) => Measure::Lattice(m.translated(shift)),
            Measure::Gaussian(g) => Measure::Gaussian(GaussianMeasure {
                mean: g.mean.iter().zip(shift).map(|(a, b)| a + b).collect(),
                covariance: g.covariance.clone(),
            }),
        })
    }
}

/// Pushforward along the linear map `f` (`dim_out × dim_in`).
///
/// A `1 × 1` matrix acts as a scalar on any dimension. Gaussians map
/// exactly; lattices map exactly under scalar or diagonal `f` and are
/// otherwise re-binned to the nearest node of a fresh lattice (approximate).
pub fn pushforward_linear(f: &Matrix, mu: &Measure) -> Result<Measure, MeasureError> {
    if f.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(MeasureError::Malformed("map has non-finite entries".into()));
    }
    let d = mu.dim();
    let f = if f.rows() == 1 && f.cols() == 1 && d > 1 {
        Matrix::from_diag(&vec![f[(0, 0)]; d])
    } else {
        f.clone()
    };
    if f.cols() != d {
        return Err(MeasureError::DimensionMismatch(f.cols(), d));
    }
    if !(1..=2).contains(&f.rows()) {
        return Err(MeasureError::UnsupportedDimension(f.rows()));
    }
    if f.as_slice().iter().all(|&x| x == 0.0) {
        return Measure::dirac(&vec![0.0; f.rows()]);
    }
    match mu {
        Measure::Gaussian(g) => Ok(Measure::Gaussian(g.pushforward(&f)?)),
        Measure::Lattice(m) if f.is_square() && f.is_diagonal() => {
            let factors: Vec<f64> = (0..d).map(|i| f[(i, i)]).collect();
            Ok(Measure::Lattice(m.scaled_axes(&factors)))
        }
        Measure::Lattice(m) => rebin(&f, m).map(Measure::Lattice),
    }
}

/// Nearest-node re-binning of `f_* m` onto a fresh lattice whose spacing is
/// the input spacing times the smallest nonzero singular value of `f`.
fn rebin(f: &Matrix, m: &LatticeMeasure) -> Result<LatticeMeasure, MeasureError> {
    let out_dim = f.rows();
    let gram = if f.rows() <= f.cols() {
        f.matmul(&f.transpose())
    } else {
        f.transpose().matmul(f)
    };
    let sv: Vec<f64> = crate::linalg::symmetric_eigen(&gram)
        .values
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    let top = sv.iter().copied().fold(0.0, f64::max);
    let smallest = sv.iter().copied().filter(|&s| s > 1e-12 * top).fold(f64::INFINITY, f64::min);
    let base = m.spacing().iter().copied().fold(f64::INFINITY, f64::min) * smallest;

    let atoms: Vec<(Vec<f64>, f64)> = m.atoms().into_iter().map(|(x, w)| (f.matvec(&x), w)).collect();
    let mut lo = vec![f64::INFINITY; out_dim];
    let mut hi = vec![f64::NEG_INFINITY; out_dim];
    for (y, _) in &atoms {
        for a in 0..out_dim {
            lo[a] = lo[a].min(y[a]);
            hi[a] = hi[a].max(y[a]);
        }
    }
    let mut spacing = vec![base; out_dim];
    let mut shape = vec![1usize; out_dim];
    for a in 0..out_dim {
        let span = hi[a] - lo[a];
        if span == 0.0 {
            continue;
        }
        // Round the interval count up so both extremes land on nodes.
        let intervals = ((span / base - 1e-9).ceil() as usize).clamp(1, REBIN_MAX_NODES - 1);
        spacing[a] = span / intervals as f64;
        shape[a] = intervals + 1;
    }
    let total: usize = shape.iter().product();
    let mut weights = vec![0.0; total];
    for (y, w) in &atoms {
        let idx: Vec<usize> = (0..out_dim)
            .map(|a| (((y[a] - lo[a]) / spacing[a]).round() as usize).min(shape[a] - 1))
            .collect();
        let flat = if out_dim == 1 { idx[0] } else { idx[0] * shape[1] + idx[1] };
        weights[flat] += w;
    }
    LatticeMeasure::new(spacing, lo, shape, weights)
}
