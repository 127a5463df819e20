use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MeasureError;

/// Parameters of a [`DualGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_radii: usize,
    /// Extra random directions beyond the `±` axes (2-d only).
    pub n_random_dirs: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_min: 1e-2,
            r_max: 1e2,
            n_radii: 64,
            n_random_dirs: 14,
            seed: 0x5eed_d1a1,
        }
    }
}

impl GridConfig {
    /// Twice as many radii and directions.
    pub fn dense() -> Self {
        let base = Self::default();
        Self {
            n_radii: 2 * base.n_radii,
            n_random_dirs: 2 * base.n_random_dirs,
            ..base
        }
    }
}

/// Finite sample of the dual space `t = r·u` with `‖u‖₁ = 1`, on which the
/// supremum in the Fourier distance is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrid {
    dim: usize,
    config: GridConfig,
    directions: Vec<Vec<f64>>,
    radii: Vec<f64>,
    points: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl DualGrid {
    pub fn new(dim: usize, config: GridConfig) -> Result<Self, MeasureError> {
        if !(1..=2).contains(&dim) {
            return Err(MeasureError::UnsupportedDimension(dim));
        }
        if !(config.r_min > 0.0 && config.r_max > config.r_min && config.r_max.is_finite()) || config.n_radii < 2 {
            return Err(MeasureError::Malformed(format!(
                "grid radii need 0 < r_min < r_max and at least two radii, got {config:?}"
            )));
        }
        let radii: Vec<f64> = {
            let (lo, hi) = (config.r_min.ln(), config.r_max.ln());
            let n = config.n_radii;
            (0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()).collect()
        };

        let mut directions = Vec::new();
        for axis in 0..dim {
            for sign in [1.0, -1.0] {
                let mut u = vec![0.0; dim];
                u[axis] = sign;
                directions.push(u);
            }
        }
        // In one dimension the only l1-unit vectors are ±1.
        if dim == 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            while directions.len() < 2 * dim + config.n_random_dirs {
                let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n1: f64 = u.iter().map(|x: &f64| x.abs()).sum();
                if n1 < 1e-3 {
                    continue;
                }
                directions.push(u.iter().map(|x| x / n1).collect());
            }
        }

        let mut points = Vec::with_capacity(directions.len() * radii.len());
        let mut norms = Vec::with_capacity(points.capacity());
        for u in &directions {
            for &r in &radii {
                let t: Vec<f64> = u.iter().map(|x| x * r).collect();
                norms.push(t.iter().map(|x| x.abs()).sum());
                points.push(t);
            }
        }
        Ok(Self {
            dim,
            config,
            directions,
            radii,
            points,
            norms,
        })
    }

    pub fn default_for(dim: usize) -> Result<Self, MeasureError> {
        Self::new(dim, GridConfig::default())
    }

    pub fn dense_for(dim: usize) -> Result<Self, MeasureError> {
        Self::new(dim, GridConfig::dense())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// `‖t‖₁` for every point, in the order of [`points`](Self::points).
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_norms() {
        let g1 = DualGrid::default_for(1).unwrap();
        assert_eq!(g1.len(), 2 * 64);
        let g2 = DualGrid::default_for(2).unwrap();
        assert_eq!(g2.directions().len(), 4 + 14);
        assert_eq!(g2.len(), 18 * 64);
        for (t, &n) in g2.points().iter().zip(g2.norms()) {
            assert!(n > 0.0);
            assert!(t.iter().all(|x| x.is_finite()));
        }
        assert!((g2.radii()[0] - 1e-2).abs() < 1e-15 && (g2.radii()[63] - 1e2).abs() < 1e-11);
        assert_eq!(DualGrid::default_for(2).unwrap(), g2);
        assert!(DualGrid::default_for(3).is_err());
    }
}
