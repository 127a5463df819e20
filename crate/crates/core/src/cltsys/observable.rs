//! Central limits of bounded observables: push a sampled base measure
//! forward along `H`, bin it onto a lattice, center it, and iterate θ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::limit::{central_limit, ConvergenceReport, TargetTolerance};
use super::{CltError, CltSystem, Kind};
use crate::measure::{LatticeMeasure, Measure};

/// Seeded point sources on `R^1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Uniform angle on `[0, 2π)`.
    Circle,
    /// `−1, +1, −1, …`: the centered two-point source, exactly balanced.
    TwoPoint,
}

impl Sampler {
    pub fn draw(self, n: usize, seed: u64) -> Vec<f64> {
        match self {
            Sampler::Circle => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect()
            }
            Sampler::TwoPoint => (0..n).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect(),
        }
    }
}

/// The fixed catalog of observables.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Cos,
    Sin,
    Identity,
    /// `c₀ + c₁ x + c₂ x² + …`
    Poly(Vec<f64>),
    Const(f64),
}

impl Observable {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Observable::Cos => x.cos(),
            Observable::Sin => x.sin(),
            Observable::Identity => x,
            Observable::Poly(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci),
            Observable::Const(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableConfig {
    pub sampler: Sampler,
    pub observable: Observable,
    pub n_samples: usize,
    pub n_bins: usize,
    /// Largest `|H|` accepted on a sample.
    pub bound: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub target: TargetTolerance,
}

/// Equal-width histogram of `values` with `n_bins` nodes spanning
/// `[min, max]`, nearest-node assignment, shifted so the mean is zero.
pub fn centered_histogram(values: &[f64], n_bins: usize) -> Result<LatticeMeasure, CltError> {
    if values.is_empty() || n_bins == 0 {
        return Err(CltError::InvalidConfig("need at least one sample and one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (spacing, nodes) = if hi > lo && n_bins > 1 {
        ((hi - lo) / (n_bins - 1) as f64, n_bins)
    } else {
        (1.0, 1)
    };
    let mut counts = vec![0u64; nodes];
    for &v in values {
        let k = if nodes == 1 { 0 } else { (((v - lo) / spacing).round() as usize).min(nodes - 1) };
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let weights = counts.iter().map(|&c| c as f64 / n).collect();
    let hist = LatticeMeasure::line(spacing, lo, weights)?;
    let mean = hist.mean()[0];
    Ok(hist.translated(&[-mean]))
}

/// Samples, applies `H`, bins, centers and runs the CLT iteration toward
/// `N(0, v)` where `v` is the variance of the binned observable.
pub fn observable_clt(sys: &CltSystem, config: &ObservableConfig) -> Result<ConvergenceReport, CltError> {
    if sys.kind() != Kind::Clt || sys.dim() != 1 {
        return Err(CltError::InvalidConfig("observables run on the one-dimensional CLT system".into()));
    }
    let mut values = Vec::with_capacity(config.n_samples);
    for x in config.sampler.draw(config.n_samples, config.seed) {
        let h = config.observable.apply(x);
        if !h.is_finite() || h.abs() > config.bound {
            return Err(CltError::UnboundedObservable {
                value: h.abs(),
                bound: config.bound,
            });
        }
        values.push(h);
    }
    let mu0 = Measure::Lattice(centered_histogram(&values, config.n_bins)?);
    central_limit(sys, &mu0, config.max_iter, config.target)
}
