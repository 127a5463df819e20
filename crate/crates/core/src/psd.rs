//! Symmetric positive-semidefinite matrices: the variance grading codomain.
//!
//! Carries the Bures–Wasserstein metric, pushforward `M ↦ f M fᵀ`, the
//! dilation action `r ⋆ M = r² M` and block-diagonal embedding.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{spectral_map, symmetric_eigen, Matrix};

/// Smallest eigenvalue accepted before a matrix is rejected as not PSD.
pub const PSD_EIGEN_TOL: f64 = 1e-10;
/// Maximum asymmetry `|a_ij − a_ji|` accepted when building from full entries.
pub const SYMMETRY_TOL: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a slightly negative eigenvalue was clamped to zero
/// while taking a square root, process-wide.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Error, PartialEq)]
pub enum PsdError {
    #[error("entry count {got} does not match order {order}")]
    Shape { order: usize, got: usize },
    #[error("matrix is not symmetric (|a_{i}{j} - a_{j}{i}| = {gap:e})")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("non-finite entry")]
    NonFinite,
    #[error("order mismatch: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("pushforward map has {cols} columns, matrix has order {order}")]
    MapShape { cols: usize, order: usize },
}

/// Symmetric PSD matrix stored as its upper triangle (row-major packed).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    order: usize,
    upper: Vec<f64>,
}

fn packed_index(order: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * order - i * (i + 1) / 2 + j
}

impl PsdMatrix {
    /// Builds from a row-major `order × order` array, validating symmetry and
    /// positive semidefiniteness.
    pub fn new(order: usize, entries: &[f64]) -> Result<Self, PsdError> {
        if entries.len() != order * order {
            return Err(PsdError::Shape {
                order,
                got: entries.len(),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(PsdError::NonFinite);
        }
        for i in 0..order {
            for j in (i + 1)..order {
                let gap = (entries[i * order + j] - entries[j * order + i]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(PsdError::NotSymmetric { i, j, gap });
                }
            }
        }
        Self::from_matrix(&Matrix::from_row_major(order, order, entries.to_vec()))
    }

    /// Symmetrizes `m` and validates the result.
    pub fn from_matrix(m: &Matrix) -> Result<Self, PsdError> {
        let out = Self::from_symmetric_unchecked(m);
        out.validate()?;
        Ok(out)
    }

    /// Takes the upper triangle of a square matrix as-is. Used internally
    /// where the construction guarantees PSD.
    pub(crate) fn from_symmetric_unchecked(m: &Matrix) -> Self {
        assert!(m.is_square());
        let n = m.rows();
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                upper.push(if i == j {
                    m[(i, i)]
                } else {
                    0.5 * (m[(i, j)] + m[(j, i)])
                });
            }
        }
        Self { order: n, upper }
    }

    pub fn validate(&self) -> Result<(), PsdError> {
        if self.upper.iter().any(|x| !x.is_finite()) {
            return Err(PsdError::NonFinite);
        }
        let scale = self.to_matrix().frobenius_norm().max(1.0);
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if self.order > 0 && min < -PSD_EIGEN_TOL * scale {
            return Err(PsdError::NotPsd { eigenvalue: min });
        }
        Ok(())
    }

    pub fn identity(order: usize) -> Self {
        Self::from_symmetric_unchecked(&Matrix::identity(order))
    }

    pub fn zeros(order: usize) -> Self {
        Self::from_symmetric_unchecked(&Matrix::zeros(order, order))
    }

    pub fn diag(values: &[f64]) -> Result<Self, PsdError> {
        Self::from_matrix(&Matrix::from_diag(values))
    }

    /// `1 × 1` matrix `[x]`, `x ≥ 0`.
    pub fn scalar(x: f64) -> Result<Self, PsdError> {
        Self::diag(&[x])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[packed_index(self.order, i, j)]
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.order;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    /// Row-major full entry array.
    pub fn entries(&self) -> Vec<f64> {
        self.to_matrix().as_slice().to_vec()
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigen(&self.to_matrix()).values
    }

    pub fn max_abs_diff(&self, other: &PsdMatrix) -> f64 {
        self.to_matrix().max_abs_diff(&other.to_matrix())
    }

    pub fn scaled(&self, s: f64) -> PsdMatrix {
        PsdMatrix {
            order: self.order,
            upper: self.upper.iter().map(|x| x * s).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PsdRepr {
    order: usize,
    entries: Vec<f64>,
}

impl Serialize for PsdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PsdRepr {
            order: self.order,
            entries: self.entries(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PsdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PsdRepr::deserialize(d)?;
        PsdMatrix::new(repr.order, &repr.entries).map_err(serde::de::Error::custom)
    }
}

/// Eigenvalues below this fraction of the largest are treated as zero when
/// taking square roots; otherwise rounding noise `ε` turns into `√ε`.
const SQRT_RANK_CUTOFF: f64 = 1e-14;

fn sqrt_matrix(m: &Matrix) -> Matrix {
    let eig = symmetric_eigen(m);
    let top = eig.values.iter().copied().fold(0.0, f64::max);
    spectral_map(&eig, |lambda| {
        if lambda < 0.0 {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            0.0
        } else if lambda <= SQRT_RANK_CUTOFF * top {
            0.0
        } else {
            lambda.sqrt()
        }
    })
}

/// Unique PSD square root via symmetric eigendecomposition; negative
/// eigenvalues (float noise) are clamped to zero.
pub fn sqrt_psd(a: &PsdMatrix) -> Result<PsdMatrix, PsdError> {
    a.validate()?;
    Ok(PsdMatrix::from_symmetric_unchecked(&sqrt_matrix(&a.to_matrix())))
}

/// Orthogonal `U` maximizing `tr(M U)`: `U = V Wᵀ` for `M = W Σ Vᵀ`.
///
/// `V` comes from the eigendecomposition of `MᵀM`; the columns of `W` are
/// `M v_i / σ_i`, re-orthonormalized and completed to a basis where `σ_i`
/// vanishes.
fn procrustes_rotation(m: &Matrix) -> Matrix {
    let n = m.rows();
    let eig = symmetric_eigen(&m.transpose().matmul(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));
    let sigma_max = eig.values.iter().copied().fold(0.0, f64::max).max(0.0).sqrt();

    let mut w_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending: Vec<Vec<f64>> = Vec::new();
    for &k in &order {
        let v = eig.vectors.column(k);
        let sigma = eig.values[k].max(0.0).sqrt();
        if sigma > 1e-13 * sigma_max && sigma > 0.0 {
            let mv = m.matvec(&v);
            if let Some(w) = orthonormalize(&mv, &w_cols) {
                w_cols.push(w);
                v_cols.push(v);
                continue;
            }
        }
        pending.push(v);
    }
    // Complete W with standard basis directions for the null part of M.
    let mut basis = (0..n).map(|i| {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        e
    });
    for v in pending {
        let w = loop {
            let e = basis.next().expect("basis completion exhausted");
            if let Some(w) = orthonormalize(&e, &w_cols) {
                break w;
            }
        };
        w_cols.push(w);
        v_cols.push(v);
    }

    let mut u = Matrix::zeros(n, n);
    for (v, w) in v_cols.iter().zip(&w_cols) {
        for i in 0..n {
            for j in 0..n {
                u[(i, j)] += v[i] * w[j];
            }
        }
    }
    u
}

/// Two passes of modified Gram–Schmidt against `basis`; `None` if `x` is
/// (numerically) in their span.
fn orthonormalize(x: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let norm0 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return None;
    }
    let mut y = x.to_vec();
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = y.iter().zip(b).map(|(p, q)| p * q).sum();
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi -= dot * bi;
            }
        }
    }
    let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm <= 1e-10 * norm0 {
        return None;
    }
    Some(y.into_iter().map(|a| a / norm).collect())
}

/// Bures–Wasserstein distance
/// `(tr A + tr B − 2 tr((A^{1/2} B A^{1/2})^{1/2}))^{1/2}`.
///
/// Evaluated in its Procrustes form `min_U ‖A^{1/2} − B^{1/2} U‖_F`, which
/// equals the trace formula but has no cancellation when `A ≈ B`.
pub fn bures_wasserstein(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64, PsdError> {
    if a.order != b.order {
        return Err(PsdError::OrderMismatch(a.order, b.order));
    }
    let ra = sqrt_matrix(&a.to_matrix());
    let rb = sqrt_matrix(&b.to_matrix());
    let u = procrustes_rotation(&ra.matmul(&rb));
    Ok(ra.sub(&rb.matmul(&u)).frobenius_norm())
}

/// The trace formula evaluated directly, with the radicand clamped at zero.
/// Loses precision near coincident matrices; kept as an independent route.
pub fn bures_wasserstein_trace_formula(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64, PsdError> {
    if a.order != b.order {
        return Err(PsdError::OrderMismatch(a.order, b.order));
    }
    let ra = sqrt_matrix(&a.to_matrix());
    let inner = ra.matmul(&b.to_matrix()).matmul(&ra).symmetrized();
    let cross = sqrt_matrix(&inner).trace();
    let radicand = a.trace() + b.trace() - 2.0 * cross;
    if radicand < 0.0 {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(radicand.max(0.0).sqrt())
}

/// `f M fᵀ`, re-symmetrized.
pub fn psd_pushforward(f: &Matrix, m: &PsdMatrix) -> Result<PsdMatrix, PsdError> {
    if f.cols() != m.order {
        return Err(PsdError::MapShape {
            cols: f.cols(),
            order: m.order,
        });
    }
    let out = f.matmul(&m.to_matrix()).matmul(&f.transpose());
    Ok(PsdMatrix::from_symmetric_unchecked(&out))
}

/// `r ⋆ M = r² M`.
pub fn psd_dilate(r: f64, m: &PsdMatrix) -> PsdMatrix {
    m.scaled(r * r)
}

/// Block-diagonal embedding `diag(M, N)`.
pub fn block_diag(m: &PsdMatrix, n: &PsdMatrix) -> PsdMatrix {
    let (p, q) = (m.order, n.order);
    let mut out = Matrix::zeros(p + q, p + q);
    for i in 0..p {
        for j in 0..p {
            out[(i, j)] = m.get(i, j);
        }
    }
    for i in 0..q {
        for j in 0..q {
            out[(p + i, p + j)] = n.get(i, j);
        }
    }
    PsdMatrix::from_symmetric_unchecked(&out)
}

/// Seeded `BᵀB` with `B` a `rank × n` matrix of entries in `[−1.5, 1.5)`.
pub fn random_psd<R: rand::Rng>(rng: &mut R, n: usize, rank: usize) -> PsdMatrix {
    let b = Matrix::from_row_major(rank, n, (0..rank * n).map(|_| rng.gen_range(-1.5..1.5)).collect());
    PsdMatrix::from_symmetric_unchecked(&b.transpose().matmul(&b).symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sqrt_examples() {
        let id = PsdMatrix::identity(3);
        assert!(sqrt_psd(&id).unwrap().max_abs_diff(&id) < 1e-15);
        let d = sqrt_psd(&PsdMatrix::diag(&[4.0, 9.0]).unwrap()).unwrap();
        assert_eq!(d.entries(), vec![2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in 1..=5 {
            for rank in 1..=n {
                let a = random_psd(&mut rng, n, rank);
                let r = sqrt_psd(&a).unwrap().to_matrix();
                assert!(r.matmul(&r).max_abs_diff(&a.to_matrix()) < 1e-9);
                assert!(PsdMatrix::from_matrix(&r).is_ok());
            }
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(matches!(PsdMatrix::new(2, &[1.0, 2.0, 2.0, 1.0]), Err(PsdError::NotPsd { .. })));
        assert!(matches!(PsdMatrix::new(2, &[1.0, 0.5, 0.0, 1.0]), Err(PsdError::NotSymmetric { .. })));
        assert!(matches!(PsdMatrix::new(2, &[1.0]), Err(PsdError::Shape { .. })));
        assert!(matches!(PsdMatrix::scalar(-1.0), Err(PsdError::NotPsd { .. })));
        assert!(matches!(PsdMatrix::scalar(f64::NAN), Err(PsdError::NonFinite)));
    }

    #[test]
    fn bw_examples() {
        let four = PsdMatrix::scalar(4.0).unwrap();
        let one = PsdMatrix::scalar(1.0).unwrap();
        assert_eq!(bures_wasserstein(&four, &one).unwrap(), 1.0);
        let a = PsdMatrix::identity(2).scaled(4.0);
        let d = bures_wasserstein(&a, &PsdMatrix::identity(2)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-14);
        assert!(bures_wasserstein(&a, &a).unwrap() < 1e-10);
        assert!(matches!(
            bures_wasserstein(&a, &one),
            Err(PsdError::OrderMismatch(2, 1))
        ));
    }

    #[test]
    fn bw_self_distance_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rank in 1..=3 {
            let a = random_psd(&mut rng, 3, rank);
            assert!(bures_wasserstein(&a, &a).unwrap() < 1e-10, "rank {rank}");
        }
    }

    #[test]
    fn bw_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..=4);
            let (ra, rb) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
            let a = random_psd(&mut rng, n, ra);
            let b = random_psd(&mut rng, n, rb);
            let p = bures_wasserstein(&a, &b).unwrap();
            let t = bures_wasserstein_trace_formula(&a, &b).unwrap();
            assert!((p - t).abs() < 1e-6 * (1.0 + p), "{p} vs {t}");
        }
    }

    #[test]
    fn bw_orthogonal_supports() {
        let a = PsdMatrix::diag(&[1.0, 0.0]).unwrap();
        let b = PsdMatrix::diag(&[0.0, 1.0]).unwrap();
        assert!((bures_wasserstein(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pushforward_examples() {
        let m = PsdMatrix::new(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert_eq!(psd_pushforward(&Matrix::identity(2), &m).unwrap(), m);
        let s = psd_pushforward(&Matrix::scalar(2.0), &PsdMatrix::scalar(1.0).unwrap()).unwrap();
        assert_eq!(s.entries(), vec![4.0]);
        let r = psd_pushforward(
            &Matrix::rotation(std::f64::consts::FRAC_PI_4),
            &PsdMatrix::diag(&[1.0, 0.0]).unwrap(),
        )
        .unwrap();
        for x in r.entries() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        assert!(psd_pushforward(&Matrix::identity(3), &m).is_err());
    }

    #[test]
    fn pushforward_is_functorial() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = random_psd(&mut rng, 2, 2);
            let f = Matrix::from_row_major(3, 2, (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let g = Matrix::from_row_major(2, 2, (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let lhs = psd_pushforward(&f.matmul(&g), &m).unwrap();
            let rhs = psd_pushforward(&f, &psd_pushforward(&g, &m).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn dilation_examples() {
        let m = PsdMatrix::identity(2).scaled(2.0);
        assert_eq!(psd_dilate(1.0, &m), m);
        let half = psd_dilate(std::f64::consts::FRAC_1_SQRT_2, &m);
        assert!(half.max_abs_diff(&PsdMatrix::identity(2)) < 1e-15);
        // Action law on exactly representable scalars.
        let (r, s) = (0.5, 0.75);
        assert_eq!(psd_dilate(r, &psd_dilate(s, &m)), psd_dilate(r * s, &m));
    }

    #[test]
    fn block_examples() {
        let b = block_diag(&PsdMatrix::scalar(1.0).unwrap(), &PsdMatrix::scalar(4.0).unwrap());
        assert_eq!(b, PsdMatrix::diag(&[1.0, 4.0]).unwrap());
        let z = block_diag(&PsdMatrix::zeros(1), &PsdMatrix::zeros(2));
        assert_eq!(z, PsdMatrix::zeros(3));
        let lhs = block_diag(&PsdMatrix::identity(1), &PsdMatrix::identity(1));
        let rhs = block_diag(&PsdMatrix::scalar(4.0).unwrap(), &PsdMatrix::scalar(4.0).unwrap());
        let d = bures_wasserstein(&lhs, &rhs).unwrap();
        assert!((d * d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let m = PsdMatrix::new(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"order":2,"entries":[2.0,0.5,0.5,1.0]}"#);
        let back: PsdMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<PsdMatrix>(r#"{"order":1,"entries":[-3.0]}"#).is_err());
    }
}
