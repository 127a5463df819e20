//! Characteristic functions and the Fourier l-distance
//! `d_l(μ, ν) = (sup_t |φ_μ(t) − φ_ν(t)| / ‖t‖₁^l)^{1/l}`.

use num_complex::Complex64;
use rayon::prelude::*;

use super::gaussian::GaussianMeasure;
use super::lattice::LatticeMeasure;
use super::{Measure, MeasureError};
use super::grid::DualGrid;

/// Absolute tolerance per moment entry before the distance is declared ∞.
pub const MOMENT_TOL: f64 = 1e-8;

/// Atoms between exact phase evaluations in the rotation recurrence.
const PHASE_BLOCK: usize = 256;

/// `Σ_j w_j e^{−i(θ₀ + j·step)}`.
fn phase_sum(weights: &[f64], theta0: f64, step: f64) -> Complex64 {
    let z = Complex64::from_polar(1.0, -step);
    let mut acc = Complex64::new(0.0, 0.0);
    for (b, chunk) in weights.chunks(PHASE_BLOCK).enumerate() {
        let mut rot = Complex64::from_polar(1.0, -(theta0 + (b * PHASE_BLOCK) as f64 * step));
        let mut part = Complex64::new(0.0, 0.0);
        for &w in chunk {
            if w != 0.0 {
                part += rot * w;
            }
            rot *= z;
        }
        acc += part;
    }
    acc
}

fn lattice_char_fn(m: &LatticeMeasure, t: &[f64]) -> Complex64 {
    let (s, o) = (m.spacing(), m.offset());
    match m.dim() {
        1 => phase_sum(m.weights(), t[0] * o[0], t[0] * s[0]),
        _ => {
            let cols = m.shape()[1];
            m.weights()
                .chunks(cols)
                .enumerate()
                .map(|(i, row)| {
                    let inner = phase_sum(row, t[1] * o[1], t[1] * s[1]);
                    inner * Complex64::from_polar(1.0, -t[0] * m.coordinate(0, i))
                })
                .sum()
        }
    }
}

fn gaussian_char_fn(g: &GaussianMeasure, t: &[f64]) -> Complex64 {
    let d = g.dim();
    let phase: f64 = t.iter().zip(&g.mean).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += t[i] * g.covariance.get(i, j) * t[j];
        }
    }
    Complex64::from_polar((-0.5 * quad).exp(), -phase)
}

/// `φ_μ(t) = ∫ e^{−i⟨t,x⟩} dμ(x)`.
pub fn char_fn(mu: &Measure, t: &[f64]) -> Complex64 {
    match mu {
        Measure::Lattice(m) => lattice_char_fn(m, t),
        Measure::Gaussian(g) => gaussian_char_fn(g, t),
    }
}

/// Mean and raw second moments, used by the finiteness gate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// `E[x_a x_b]`, row-major.
    pub second: Vec<f64>,
}

impl MomentSummary {
    pub fn of(mu: &Measure) -> Self {
        let mean = mu.expectation();
        let cov = mu.variance_entries();
        let d = mean.len();
        let second = (0..d * d).map(|k| cov[k] + mean[k / d] * mean[k % d]).collect();
        Self { mean, second }
    }

    /// Whether all moments of integer order below `l` agree within
    /// [`MOMENT_TOL`].
    pub fn compatible(&self, other: &Self, l: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MOMENT_TOL);
        if l > 1.0 && !close(&self.mean, &other.mean) {
            return false;
        }
        if l > 2.0 && !close(&self.second, &other.second) {
            return false;
        }
        true
    }
}

/// A measure with its characteristic function tabulated on a grid.
#[derive(Debug, Clone)]
pub struct PreparedMeasure {
    pub moments: MomentSummary,
    pub table: Vec<Complex64>,
    dim: usize,
}

impl PreparedMeasure {
    pub fn new(mu: &Measure, grid: &DualGrid) -> Result<Self, MeasureError> {
        if mu.dim() != grid.dim() {
            return Err(MeasureError::DimensionMismatch(mu.dim(), grid.dim()));
        }
        let table = grid.points().par_iter().map(|t| char_fn(mu, t)).collect();
        Ok(Self {
            moments: MomentSummary::of(mu),
            table,
            dim: mu.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub(crate) fn check_exponent(l: f64) -> Result<(), MeasureError> {
    if (1.0..3.0).contains(&l) {
        Ok(())
    } else {
        Err(MeasureError::InvalidExponent(l))
    }
}

/// Distance between two tabulated measures. `∞` when the moment gate fires.
pub fn prepared_distance(
    a: &PreparedMeasure,
    b: &PreparedMeasure,
    l: f64,
    grid: &DualGrid,
) -> Result<f64, MeasureError> {
    check_exponent(l)?;
    if a.table.len() != grid.len() || b.table.len() != grid.len() {
        return Err(MeasureError::Malformed("characteristic table does not match grid".into()));
    }
    if !a.moments.compatible(&b.moments, l) {
        return Ok(f64::INFINITY);
    }
    let sup = a
        .table
        .par_iter()
        .zip(&b.table)
        .zip(grid.norms())
        .map(|((x, y), n)| (x - y).norm() / n.powf(l))
        .reduce(|| 0.0, f64::max);
    Ok(if sup == 0.0 { 0.0 } else { sup.powf(1.0 / l) })
}

/// Grid lower estimate of the Fourier l-distance, `l ∈ [1, 3)`.
pub fn fourier_l_distance(mu: &Measure, nu: &Measure, l: f64, grid: &DualGrid) -> Result<f64, MeasureError> {
    check_exponent(l)?;
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let a = PreparedMeasure::new(mu, grid)?;
    let b = PreparedMeasure::new(nu, grid)?;
    prepared_distance(&a, &b, l, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::convolution::convolve;

    fn lat(m: LatticeMeasure) -> Measure {
        Measure::Lattice(m)
    }

    #[test]
    fn trivial_char_fns() {
        let d0 = lat(LatticeMeasure::dirac(&[0.0]).unwrap());
        let r = lat(LatticeMeasure::rademacher());
        for t in [-7.0, -0.3, 0.0, 1.0, 42.0] {
            assert_eq!(char_fn(&d0, &[t]), Complex64::new(1.0, 0.0));
            let z = char_fn(&r, &[t]);
            assert!((z.re - t.cos()).abs() < 1e-15 && z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn sign_convention() {
        let d = lat(LatticeMeasure::dirac(&[1.0]).unwrap());
        let z = char_fn(&d, &[0.5]);
        assert!((z - Complex64::from_polar(1.0, -0.5)).norm() < 1e-16);
    }

    #[test]
    fn standard_normal_against_quadrature() {
        let g = Measure::Gaussian(GaussianMeasure::scalar(0.0, 1.0).unwrap());
        let z = char_fn(&g, &[1.0]);
        // Simpson's rule for ∫ cos(x) e^{−x²/2}/√(2π) dx over [−12, 12].
        let n = 20_000;
        let h = 24.0 / n as f64;
        let f = |x: f64| x.cos() * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(-12.0) + f(12.0);
        for k in 1..n {
            s += f(-12.0 + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        assert!((z.re - quad).abs() < 1e-12 && z.im == 0.0);
        assert!((z.re - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn recurrence_matches_direct_sum() {
        let n = 1500;
        let w: Vec<f64> = (0..n).map(|j| ((j * 7919) % 13 + 1) as f64).collect();
        let s: f64 = w.iter().sum();
        let m = LatticeMeasure::line(0.013, -4.1, w.iter().map(|x| x / s).collect()).unwrap();
        for t in [0.01, 3.7, 99.0] {
            let fast = lattice_char_fn(&m, &[t]);
            let slow: Complex64 = m
                .atoms()
                .iter()
                .map(|(x, w)| Complex64::from_polar(*w, -t * x[0]))
                .sum();
            assert!((fast - slow).norm() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn convolution_squares_char_fn() {
        let m = LatticeMeasure::line(0.5, -1.0, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mm = lat(convolve(&m, &m).unwrap());
        let m = lat(m);
        let grid = DualGrid::default_for(1).unwrap();
        for t in grid.points() {
            let a = char_fn(&m, t);
            assert!((char_fn(&mm, t) - a * a).norm() <= 1e-10);
            assert!(a.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn distance_basics() {
        let grid = DualGrid::default_for(1).unwrap();
        let r = lat(LatticeMeasure::rademacher());
        assert_eq!(fourier_l_distance(&r, &r, 2.5, &grid).unwrap(), 0.0);
        let d0 = lat(LatticeMeasure::dirac(&[0.0]).unwrap());
        let d1 = lat(LatticeMeasure::dirac(&[1.0]).unwrap());
        assert_eq!(fourier_l_distance(&d0, &d1, 1.5, &grid).unwrap(), f64::INFINITY);
        // l = 1 has no moment condition.
        assert!(fourier_l_distance(&d0, &d1, 1.0, &grid).unwrap().is_finite());
        let g = Measure::Gaussian(GaussianMeasure::scalar(0.0, 1.0).unwrap());
        let ab = fourier_l_distance(&r, &g, 2.5, &grid).unwrap();
        let ba = fourier_l_distance(&g, &r, 2.5, &grid).unwrap();
        assert!(ab > 0.0 && ab.is_finite());
        assert_eq!(ab.to_bits(), ba.to_bits());
        assert!(fourier_l_distance(&r, &g, 3.0, &grid).is_err());
    }
}
