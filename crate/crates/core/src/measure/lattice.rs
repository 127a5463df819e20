use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{MeasureError, MASS_TOL};

/// Atoms with weight below this are dropped after each convolution.
pub const WEIGHT_FLOOR: f64 = 1e-15;

/// Most mass a single truncation may remove. On very fine lattices whole
/// Gaussian tails sit below the floor; dropping them all would shrink the
/// variance by ~1e-10 per step, so the lightest atoms go first and the rest
/// stay.
pub const TRIM_MASS_BUDGET: f64 = 1e-14;

/// Discrete probability measure on a uniform lattice in `R^1` or `R^2`.
///
/// The atom with index `(j_0, j_1)` sits at `offset[a] + j_a · spacing[a]`
/// on each axis `a`. Weights are stored row-major over `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMeasure {
    spacing: Vec<f64>,
    offset: Vec<f64>,
    shape: Vec<usize>,
    weights: Vec<f64>,
}

/// Neumaier-compensated sum.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl LatticeMeasure {
    /// Validating constructor. `weights` is row-major over `shape`.
    pub fn new(
        spacing: Vec<f64>,
        offset: Vec<f64>,
        shape: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self, MeasureError> {
        let m = Self {
            spacing,
            offset,
            shape,
            weights,
        };
        m.validate()?;
        Ok(m)
    }

    /// One-dimensional lattice measure.
    pub fn line(spacing: f64, offset: f64, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let n = weights.len();
        Self::new(vec![spacing], vec![offset], vec![n], weights)
    }

    pub(crate) fn from_parts_unchecked(
        spacing: Vec<f64>,
        offset: Vec<f64>,
        shape: Vec<usize>,
        weights: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), weights.len());
        Self {
            spacing,
            offset,
            shape,
            weights,
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let dim = self.spacing.len();
        if !(1..=2).contains(&dim) {
            return Err(MeasureError::UnsupportedDimension(dim));
        }
        if self.offset.len() != dim || self.shape.len() != dim {
            return Err(MeasureError::Malformed("axis count mismatch".into()));
        }
        if self.shape.contains(&0) || self.shape.iter().product::<usize>() != self.weights.len() {
            return Err(MeasureError::Malformed(format!(
                "shape {:?} does not match {} weights",
                self.shape,
                self.weights.len()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(MeasureError::Malformed("spacing must be positive and finite".into()));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(MeasureError::Malformed("offset must be finite".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MeasureError::Malformed(format!("invalid weight {w}")));
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(MeasureError::MassNotOne(mass));
        }
        Ok(())
    }

    pub fn dirac(point: &[f64]) -> Result<Self, MeasureError> {
        let d = point.len();
        Self::new(vec![1.0; d], point.to_vec(), vec![1; d], vec![1.0])
    }

    /// Atoms `±1` with weight ½ each.
    pub fn rademacher() -> Self {
        Self::from_parts_unchecked(vec![2.0], vec![-1.0], vec![2], vec![0.5, 0.5])
    }

    /// Atoms `0` (weight `1 − p`) and `1` (weight `p`).
    pub fn bernoulli(p: f64) -> Result<Self, MeasureError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(MeasureError::Malformed(format!("bernoulli parameter {p} outside [0, 1]")));
        }
        Self::line(1.0, 0.0, vec![1.0 - p, p])
    }

    /// `n` equally weighted atoms evenly spaced on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self, MeasureError> {
        if n == 0 {
            return Err(MeasureError::Malformed("uniform needs at least one atom".into()));
        }
        if n == 1 {
            return Self::dirac(&[a]);
        }
        if !(b > a) {
            return Err(MeasureError::Malformed("uniform needs a < b".into()));
        }
        Self::line((b - a) / (n - 1) as f64, a, vec![1.0 / n as f64; n])
    }

    /// Independent product of two one-dimensional measures.
    pub fn product(x: &LatticeMeasure, y: &LatticeMeasure) -> Result<Self, MeasureError> {
        if x.dim() != 1 || y.dim() != 1 {
            return Err(MeasureError::UnsupportedDimension(x.dim() + y.dim()));
        }
        let weights = x
            .weights
            .iter()
            .flat_map(|&a| y.weights.iter().map(move |&b| a * b))
            .collect();
        Ok(Self::from_parts_unchecked(
            vec![x.spacing[0], y.spacing[0]],
            vec![x.offset[0], y.offset[0]],
            vec![x.shape[0], y.shape[0]],
            weights,
        ))
    }

    pub fn dim(&self) -> usize {
        self.spacing.len()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom_count(&self) -> usize {
        self.weights.len()
    }

    pub fn mass(&self) -> f64 {
        stable_sum(self.weights.iter().copied())
    }

    /// Coordinate of lattice index `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        self.offset[axis] + j as f64 * self.spacing[axis]
    }

    /// `(position, weight)` for every atom with positive weight.
    pub fn atoms(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::new();
        for (flat, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let idx = self.unflatten(flat);
            let pos = idx.iter().enumerate().map(|(a, &j)| self.coordinate(a, j)).collect();
            out.push((pos, w));
        }
        out
    }

    pub(crate) fn unflatten(&self, flat: usize) -> Vec<usize> {
        match self.shape.len() {
            1 => vec![flat],
            _ => vec![flat / self.shape[1], flat % self.shape[1]],
        }
    }

    /// Mean per axis, computed in index space.
    pub fn mean(&self) -> Vec<f64> {
        let mass = self.mass();
        (0..self.dim())
            .map(|a| {
                let m_idx = stable_sum(
                    self.weights
                        .iter()
                        .enumerate()
                        .map(|(f, &w)| w * self.unflatten_axis(f, a) as f64),
                ) / mass;
                self.offset[a] + self.spacing[a] * m_idx
            })
            .collect()
    }

    fn unflatten_axis(&self, flat: usize, axis: usize) -> usize {
        if self.shape.len() == 1 {
            flat
        } else if axis == 0 {
            flat / self.shape[1]
        } else {
            flat % self.shape[1]
        }
    }

    /// Centered second-moment matrix, row-major `dim × dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let mass = self.mass();
        let idx_mean: Vec<f64> = (0..d)
            .map(|a| {
                stable_sum(
                    self.weights
                        .iter()
                        .enumerate()
                        .map(|(f, &w)| w * self.unflatten_axis(f, a) as f64),
                ) / mass
            })
            .collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let s = stable_sum(self.weights.iter().enumerate().map(|(f, &w)| {
                    let da = self.unflatten_axis(f, a) as f64 - idx_mean[a];
                    let db = self.unflatten_axis(f, b) as f64 - idx_mean[b];
                    w * da * db
                })) / mass;
                let v = s * self.spacing[a] * self.spacing[b];
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        cov
    }

    /// `∫ ‖x‖_∞^l dμ`.
    pub fn abs_moment(&self, l: f64) -> f64 {
        stable_sum(self.weights.iter().enumerate().map(|(f, &w)| {
            if w == 0.0 {
                return 0.0;
            }
            let idx = self.unflatten(f);
            let norm = idx
                .iter()
                .enumerate()
                .map(|(a, &j)| self.coordinate(a, j).abs())
                .fold(0.0, f64::max);
            w * norm.powf(l)
        }))
    }

    /// Scales every coordinate by `c > 0`.
    pub(crate) fn dilated(&self, c: f64) -> Self {
        Self::from_parts_unchecked(
            self.spacing.iter().map(|s| s * c).collect(),
            self.offset.iter().map(|o| o * c).collect(),
            self.shape.clone(),
            self.weights.clone(),
        )
    }

    /// Translates every atom by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        Self::from_parts_unchecked(
            self.spacing.clone(),
            self.offset.iter().zip(shift).map(|(o, s)| o + s).collect(),
            self.shape.clone(),
            self.weights.clone(),
        )
    }

    /// Per-axis map `x ↦ a_k x`; negative factors reverse the axis, zero
    /// factors collapse it onto the origin.
    pub(crate) fn scaled_axes(&self, factors: &[f64]) -> Self {
        let mut m = self.clone();
        for (axis, &a) in factors.iter().enumerate() {
            m = m.scale_axis(axis, a);
        }
        m
    }

    fn scale_axis(&self, axis: usize, a: f64) -> Self {
        let n = self.shape[axis];
        let (mut spacing, mut offset, mut shape) = (self.spacing.clone(), self.offset.clone(), self.shape.clone());
        if a == 0.0 {
            let weights = self.marginalize_axis(axis);
            offset[axis] = 0.0;
            spacing[axis] = self.spacing[axis];
            shape[axis] = 1;
            return Self::from_parts_unchecked(spacing, offset, shape, weights);
        }
        let weights = if a > 0.0 {
            offset[axis] = a * self.offset[axis];
            self.weights.clone()
        } else {
            offset[axis] = a * self.coordinate(axis, n - 1);
            self.reversed_axis(axis)
        };
        spacing[axis] = a.abs() * self.spacing[axis];
        Self::from_parts_unchecked(spacing, offset, shape, weights)
    }

    fn marginalize_axis(&self, axis: usize) -> Vec<f64> {
        if self.dim() == 1 {
            return vec![self.mass()];
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if axis == 0 {
            (0..c).map(|j| stable_sum((0..r).map(|i| self.weights[i * c + j]))).collect()
        } else {
            (0..r).map(|i| stable_sum((0..c).map(|j| self.weights[i * c + j]))).collect()
        }
    }

    fn reversed_axis(&self, axis: usize) -> Vec<f64> {
        if self.dim() == 1 {
            return self.weights.iter().rev().copied().collect();
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let (si, sj) = if axis == 0 { (r - 1 - i, j) } else { (i, c - 1 - j) };
                out[i * c + j] = self.weights[si * c + sj];
            }
        }
        out
    }

    /// Zeroes sub-`floor` weights, lightest first, while their combined mass
    /// stays within [`TRIM_MASS_BUDGET`], drops all-zero boundary slices, and
    /// renormalizes to unit mass.
    pub fn trimmed(&self, floor: f64) -> Self {
        let d = self.dim();
        let (rows, cols) = if d == 1 { (1, self.shape[0]) } else { (self.shape[0], self.shape[1]) };
        let cut = self.drop_threshold(floor);
        let kept: Vec<f64> = self.weights.iter().map(|&w| if w < cut { 0.0 } else { w }).collect();
        let at = |i: usize, j: usize| kept[i * cols + j];
        let row_live = |i: usize| (0..cols).any(|j| at(i, j) > 0.0);
        let col_live = |j: usize| (0..rows).any(|i| at(i, j) > 0.0);

        let (r0, r1) = match ((0..rows).find(|&i| row_live(i)), (0..rows).rev().find(|&i| row_live(i))) {
            (Some(a), Some(b)) => (a, b),
            // Nothing survives; keep the heaviest atom.
            _ => return self.heaviest_atom(),
        };
        let c0 = (0..cols).find(|&j| col_live(j)).unwrap();
        let c1 = (0..cols).rev().find(|&j| col_live(j)).unwrap();

        let mut weights = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
        for i in r0..=r1 {
            for j in c0..=c1 {
                weights.push(at(i, j));
            }
        }
        let mass = stable_sum(weights.iter().copied());
        for w in &mut weights {
            *w /= mass;
        }
        let (offset, shape) = if d == 1 {
            (vec![self.coordinate(0, c0)], vec![c1 - c0 + 1])
        } else {
            (
                vec![self.coordinate(0, r0), self.coordinate(1, c0)],
                vec![r1 - r0 + 1, c1 - c0 + 1],
            )
        };
        Self::from_parts_unchecked(self.spacing.clone(), offset, shape, weights)
    }

    /// Weights strictly below the returned value are dropped.
    fn drop_threshold(&self, floor: f64) -> f64 {
        let mut light: Vec<f64> = self.weights.iter().copied().filter(|&w| w < floor).collect();
        if stable_sum(light.iter().copied()) <= TRIM_MASS_BUDGET {
            return floor;
        }
        light.sort_by(f64::total_cmp);
        let mut removed = 0.0;
        for &w in &light {
            if removed + w > TRIM_MASS_BUDGET {
                return w;
            }
            removed += w;
        }
        floor
    }

    fn heaviest_atom(&self) -> Self {
        let (flat, _) = self
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
        let idx = self.unflatten(flat);
        let point: Vec<f64> = idx.iter().enumerate().map(|(a, &j)| self.coordinate(a, j)).collect();
        Self::from_parts_unchecked(self.spacing.clone(), point, vec![1; self.dim()], vec![1.0])
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WeightsRepr {
    Line(Vec<f64>),
    Grid(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeRepr {
    dim: usize,
    spacing: Vec<f64>,
    offset: Vec<f64>,
    weights: WeightsRepr,
}

impl Serialize for LatticeMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let weights = if self.dim() == 1 {
            WeightsRepr::Line(self.weights.clone())
        } else {
            WeightsRepr::Grid(self.weights.chunks(self.shape[1]).map(<[f64]>::to_vec).collect())
        };
        LatticeRepr {
            dim: self.dim(),
            spacing: self.spacing.clone(),
            offset: self.offset.clone(),
            weights,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticeMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = LatticeRepr::deserialize(d)?;
        let (shape, weights) = match (repr.dim, repr.weights) {
            (1, WeightsRepr::Line(w)) => (vec![w.len()], w),
            (2, WeightsRepr::Grid(rows)) => {
                let c = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != c) {
                    return Err(D::Error::custom("ragged weight grid"));
                }
                (vec![rows.len(), c], rows.concat())
            }
            (dim, _) => return Err(D::Error::custom(format!("weights do not match dim {dim}"))),
        };
        LatticeMeasure::new(repr.spacing, repr.offset, shape, weights).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors() {
        let r = LatticeMeasure::rademacher();
        assert_eq!(r.atoms(), vec![(vec![-1.0], 0.5), (vec![1.0], 0.5)]);
        assert_eq!(r.mean(), vec![0.0]);
        assert_eq!(r.covariance(), vec![1.0]);
        let b = LatticeMeasure::bernoulli(0.3).unwrap();
        assert!((b.mean()[0] - 0.3).abs() < 1e-16);
        let u = LatticeMeasure::uniform(-1.0, 1.0, 3).unwrap();
        assert_eq!(u.atoms().len(), 3);
        assert!(LatticeMeasure::bernoulli(1.5).is_err());
        assert!(LatticeMeasure::line(1.0, 0.0, vec![0.5, 0.4]).is_err());
        assert!(LatticeMeasure::line(-1.0, 0.0, vec![1.0]).is_err());
        assert!(LatticeMeasure::line(1.0, 0.0, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn product_is_block_diagonal() {
        let p = LatticeMeasure::product(&LatticeMeasure::rademacher(), &LatticeMeasure::bernoulli(0.3).unwrap())
            .unwrap();
        assert_eq!(p.shape(), &[2, 2]);
        let cov = p.covariance();
        assert!((cov[0] - 1.0).abs() < 1e-15);
        assert!(cov[1].abs() < 1e-15 && cov[2].abs() < 1e-15);
        assert!((cov[3] - 0.21).abs() < 1e-15);
    }

    #[test]
    fn negative_scaling_reverses() {
        let m = LatticeMeasure::line(1.0, 0.0, vec![0.2, 0.3, 0.5]).unwrap();
        let r = m.scaled_axes(&[-2.0]);
        assert_eq!(r.atoms(), vec![(vec![-4.0], 0.5), (vec![-2.0], 0.3), (vec![0.0], 0.2)]);
        let z = m.scaled_axes(&[0.0]);
        assert_eq!(z.atoms(), vec![(vec![0.0], 1.0)]);
    }

    #[test]
    fn trimming_drops_tails() {
        let m = LatticeMeasure::line(0.5, -1.0, vec![1e-17, 0.5, 1e-16, 0.5, 1e-18]).unwrap();
        let t = m.trimmed(WEIGHT_FLOOR);
        assert_eq!(t.shape(), &[3]);
        assert_eq!(t.offset(), &[-0.5]);
        assert_eq!(t.weights(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn trimming_respects_the_mass_budget() {
        // 400 sub-floor atoms of 1e-16 carry 4e-14, over the budget.
        let mut w = vec![1e-16; 200];
        w.push(1e-17);
        w.push(0.5);
        w.push(0.5);
        w.extend(vec![1e-16; 200]);
        let m = LatticeMeasure::line(1.0, 0.0, w).unwrap();
        let t = m.trimmed(WEIGHT_FLOOR);
        assert_eq!(t.shape(), &[403]);
        // Ties at the threshold stay, so only the 1e-17 atom is dropped.
        assert_eq!(t.weights()[200], 0.0);
        assert_eq!(t.weights().iter().filter(|&&x| x == 0.0).count(), 1);
    }

    #[test]
    fn json_round_trip_2d() {
        let p = LatticeMeasure::product(&LatticeMeasure::rademacher(), &LatticeMeasure::uniform(0.1, 0.7, 3).unwrap())
            .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with(r#"{"dim":2,"spacing":"#));
        let back: LatticeMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
