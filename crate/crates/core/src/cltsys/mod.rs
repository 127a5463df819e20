//! CLT-systems: a grading that the rescaled self-convolution θ preserves,
//! and on whose fibres θ is a strict contraction for the Fourier l-distance.
//!
//! Two instances ship: the law of large numbers (grading = expectation,
//! `θ μ = ½ ⋆ (μ ∗ μ)`) and the central limit theorem (grading = variance,
//! `θ μ = (1/√2) ⋆ (μ ∗ μ)`).

mod limit;
mod observable;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{
    prepared_distance, DualGrid, GaussianMeasure, GridConfig, LatticeMeasure, Measure, MeasureError,
    PreparedMeasure,
};
use crate::psd::{bures_wasserstein, PsdError, PsdMatrix};
use crate::quantale::ExtRealMul;
use crate::vspace::{estimate_lipschitz, FixedPointReport, MetricStructure};

pub use limit::{
    central_limit, contraction_bound, functoriality_check, ConvergenceReport, FunctorialityReport, TargetTolerance,
    Verdict, CSV_SCHEMA,
};
pub use observable::{observable_clt, Observable, ObservableConfig, Sampler};

/// Mean allowed on the CLT fibre of centered measures.
pub const CENTERING_TOL: f64 = 1e-8;
/// Grading agreement required of fibre pairs.
pub const FIBRE_TOL: f64 = 1e-8;
/// Largest grading drift compatible with a converged verdict.
pub const GRADING_TOL: f64 = 1e-9;
/// Allowance on top of the theoretical contraction ratio for the grid
/// under-estimate of the supremum.
pub const RATIO_SLACK: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CltError {
    #[error("exponent l = {l} is outside {interval} for {kind}")]
    InvalidExponent { kind: Kind, l: f64, interval: &'static str },
    #[error("measure is outside the fibre: {0}")]
    NotInDomain(String),
    #[error("observable exceeds its bound: |H| = {value} > {bound}")]
    UnboundedObservable { value: f64, bound: f64 },
    #[error("no fibre pair with finite nonzero distance")]
    NoValidPairs,
    #[error("successive distances kept growing (iteration {iteration})")]
    DivergenceDetected { iteration: usize, report: Box<ConvergenceReport> },
    #[error("distance to the limit still above {} after {} iterations", .report.target_tol, .report.iterations)]
    MaxIterationsExceeded { report: Box<ConvergenceReport> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Psd(#[from] PsdError),
}

impl CltError {
    pub fn report(&self) -> Option<&ConvergenceReport> {
        match self {
            Self::DivergenceDetected { report, .. } | Self::MaxIterationsExceeded { report } => Some(report),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Lln,
    Clt,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kind::Lln => "lln",
            Kind::Clt => "clt",
        })
    }
}

/// A point of the grading codomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradingPoint {
    Expectation(Vec<f64>),
    Variance(PsdMatrix),
}

#[derive(Debug, Clone)]
pub struct CltSystem {
    kind: Kind,
    l: f64,
    grading_constant: f64,
    rescale: f64,
    /// `rescale²`, held exactly so Gaussians stay fixed under θ.
    rescale_sq: f64,
    grid: Arc<DualGrid>,
}

impl CltSystem {
    pub fn new(kind: Kind, l: f64, dim: usize) -> Result<Self, CltError> {
        Self::with_grid(kind, l, DualGrid::new(dim, GridConfig::default())?)
    }

    pub fn with_grid(kind: Kind, l: f64, grid: DualGrid) -> Result<Self, CltError> {
        let (lo, hi, interval) = match kind {
            Kind::Lln => (1.0, 2.0, "(1, 2)"),
            Kind::Clt => (2.0, 3.0, "(2, 3)"),
        };
        if !(l > lo && l < hi) {
            return Err(CltError::InvalidExponent { kind, l, interval });
        }
        let (grading_constant, rescale, rescale_sq) = match kind {
            Kind::Lln => (2.0, 0.5, 0.25),
            Kind::Clt => (std::f64::consts::SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.5),
        };
        Ok(Self {
            kind,
            l,
            grading_constant,
            rescale,
            rescale_sq,
            grid: Arc::new(grid),
        })
    }

    /// Replaces the rescaling factor; only useful to check that a wrong
    /// factor is caught by the grading monitor.
    pub fn with_rescale(mut self, rescale: f64) -> Self {
        self.rescale = rescale;
        self.rescale_sq = rescale * rescale;
        self
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn grading_constant(&self) -> f64 {
        self.grading_constant
    }

    pub fn rescale(&self) -> f64 {
        self.rescale
    }

    pub fn grid(&self) -> &DualGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `2^{1/l − 1}` (LLN) or `2^{1/l − 1/2}` (CLT).
    pub fn theoretical_ratio(&self) -> f64 {
        match self.kind {
            Kind::Lln => 2f64.powf(1.0 / self.l - 1.0),
            Kind::Clt => 2f64.powf(1.0 / self.l - 0.5),
        }
    }

    fn check_dim(&self, mu: &Measure) -> Result<(), CltError> {
        if mu.dim() != self.dim() {
            return Err(MeasureError::DimensionMismatch(mu.dim(), self.dim()).into());
        }
        Ok(())
    }

    /// `rescale ⋆ (μ ∗ μ)`.
    pub fn theta(&self, mu: &Measure) -> Result<Measure, CltError> {
        self.check_dim(mu)?;
        Ok(mu.convolve(mu)?.dilate_exact(self.rescale, self.rescale_sq)?)
    }

    pub fn grading(&self, mu: &Measure) -> Result<GradingPoint, CltError> {
        self.check_dim(mu)?;
        match self.kind {
            Kind::Lln => Ok(GradingPoint::Expectation(mu.expectation())),
            Kind::Clt => {
                let mean = mu.expectation();
                if let Some(m) = mean.iter().find(|m| m.abs() > CENTERING_TOL) {
                    return Err(CltError::NotInDomain(format!("mean {m} is not zero")));
                }
                let var = mu.variance_matrix();
                if var.entries().iter().all(|&v| v == 0.0) {
                    return Err(CltError::NotInDomain("variance is zero".into()));
                }
                Ok(GradingPoint::Variance(var))
            }
        }
    }

    /// Distance in the grading codomain: Euclidean for expectations,
    /// Bures–Wasserstein for variances. Ungraded comparisons are `∞`.
    pub fn grading_distance(&self, a: &GradingPoint, b: &GradingPoint) -> f64 {
        match (a, b) {
            (GradingPoint::Expectation(x), GradingPoint::Expectation(y)) if x.len() == y.len() => {
                x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
            }
            (GradingPoint::Variance(x), GradingPoint::Variance(y)) => {
                bures_wasserstein(x, y).unwrap_or(f64::INFINITY)
            }
            _ => f64::INFINITY,
        }
    }

    /// Raw grading of an iterate, without the fibre check (used to monitor
    /// drift along a run).
    pub(crate) fn grading_unchecked(&self, mu: &Measure) -> GradingPoint {
        match self.kind {
            Kind::Lln => GradingPoint::Expectation(mu.expectation()),
            Kind::Clt => GradingPoint::Variance(mu.variance_matrix()),
        }
    }

    /// The central limit of the fibre over `p`: `δ_p` or `N(0, p)`.
    pub fn analytic_target(&self, p: &GradingPoint) -> Result<Measure, CltError> {
        match p {
            GradingPoint::Expectation(x) => Ok(Measure::dirac(x)?),
            GradingPoint::Variance(m) => Ok(Measure::Gaussian(GaussianMeasure::centered(m.clone())?)),
        }
    }

    /// Fourier l-distance on this system's grid.
    pub fn distance(&self, mu: &Measure, nu: &Measure) -> Result<f64, CltError> {
        self.check_dim(mu)?;
        self.check_dim(nu)?;
        Ok(crate::measure::fourier_l_distance(mu, nu, self.l, &self.grid)?)
    }

    pub(crate) fn prepare(&self, mu: Measure) -> Iterate {
        let prepared = PreparedMeasure::new(&mu, &self.grid).expect("dimension checked on entry");
        Iterate {
            measure: Arc::new(mu),
            prepared: Arc::new(prepared),
        }
    }

    pub(crate) fn metric(&self) -> MetricStructure<ExtRealMul, Iterate> {
        let grid = Arc::clone(&self.grid);
        let l = self.l;
        MetricStructure::new(ExtRealMul, move |a: &Iterate, b: &Iterate| {
            prepared_distance(&a.prepared, &b.prepared, l, &grid).expect("exponent validated by the system")
        })
    }

    pub(crate) fn step(&self, x: &Iterate) -> Iterate {
        // Self-convolution of a valid measure cannot hit a lattice mismatch.
        self.prepare(self.theta(&x.measure).expect("θ of a validated measure"))
    }
}

/// A measure along with its tabulated characteristic function.
#[derive(Clone)]
pub(crate) struct Iterate {
    pub measure: Arc<Measure>,
    pub prepared: Arc<PreparedMeasure>,
}

impl std::fmt::Debug for Iterate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &*self.measure {
            Measure::Lattice(m) => write!(f, "Iterate(lattice, {} atoms)", m.atom_count()),
            Measure::Gaussian(g) => write!(f, "Iterate(gaussian, mean {:?})", g.mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradingCheck {
    pub preserved: bool,
    pub drift: f64,
}

/// Whether `grading(θ μ)` stays within `tol` of `grading(μ)`.
pub fn check_grading_preserved(sys: &CltSystem, mu: &Measure, tol: f64) -> Result<GradingCheck, CltError> {
    let before = sys.grading(mu)?;
    let after = sys.grading_unchecked(&sys.theta(mu)?);
    let drift = sys.grading_distance(&before, &after);
    Ok(GradingCheck {
        preserved: drift <= tol,
        drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    /// Largest `d(θμ, θν) / d(μ, ν)` over the usable pairs.
    pub ratio: f64,
    pub theoretical_ratio: f64,
    pub pairs_used: usize,
}

/// Empirical Lipschitz constant of θ on fibre pairs. Pairs whose gradings
/// differ by more than [`FIBRE_TOL`], or whose distance is `0` or `∞`, are
/// skipped.
pub fn estimate_contraction(sys: &CltSystem, pairs: &[(Measure, Measure)]) -> Result<ContractionEstimate, CltError> {
    let mut usable = Vec::new();
    for (mu, nu) in pairs {
        let (a, b) = (sys.grading(mu)?, sys.grading(nu)?);
        if sys.grading_distance(&a, &b) > FIBRE_TOL {
            continue;
        }
        usable.push((sys.prepare(mu.clone()), sys.prepare(nu.clone())));
    }
    let metric = sys.metric();
    let pairs_used = usable
        .iter()
        .filter(|(x, y)| {
            let d = metric.distance(x, y);
            d > 0.0 && d.is_finite()
        })
        .count();
    let ratio = estimate_lipschitz(|x| sys.step(x), &usable, &metric).map_err(|_| CltError::NoValidPairs)?;
    Ok(ContractionEstimate {
        ratio,
        theoretical_ratio: sys.theoretical_ratio(),
        pairs_used,
    })
}

/// Seeded pairs of distinct lattice measures on a common fibre: mean 0 and
/// variance 1 (CLT), or mean `lln_mean` (LLN). One-dimensional.
pub fn random_fibre_pairs(kind: Kind, n: usize, lln_mean: f64, seed: u64) -> Vec<(Measure, Measure)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Measure {
        let atoms = rng.gen_range(3..=12);
        let w: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
        let unit = LatticeMeasure::line(1.0, 0.0, weights.clone()).expect("normalized weights");
        let mean = unit.mean()[0];
        let (spacing, offset) = match kind {
            Kind::Clt => {
                let sd = unit.covariance()[0].sqrt();
                (1.0 / sd, -mean / sd)
            }
            Kind::Lln => {
                let spacing = rng.gen_range(0.2..1.0);
                (spacing, lln_mean - mean * spacing)
            }
        };
        Measure::Lattice(LatticeMeasure::line(spacing, offset, weights).expect("normalized weights"))
    };
    (0..n).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
}

/// Helper for reports: the engine's view of a run, plus per-iterate
/// observations.
pub(crate) struct Trace {
    pub engine: FixedPointReport<Iterate>,
    pub distance_to_target: Vec<f64>,
    pub grading_drift: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::convolution::{convolve_raw, ConvolutionMethod};
    use std::collections::BTreeMap;

    fn rademacher() -> Measure {
        Measure::Lattice(LatticeMeasure::rademacher())
    }

    #[test]
    fn exponent_intervals() {
        assert!(CltSystem::new(Kind::Clt, 1.5, 1).is_err());
        assert!(CltSystem::new(Kind::Lln, 2.5, 1).is_err());
        assert!(CltSystem::new(Kind::Lln, 2.0, 1).is_err());
        let s = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
        assert!((s.rescale() * s.grading_constant() - 1.0).abs() <= 1e-15);
        assert!((s.theoretical_ratio() - 2f64.powf(-0.1)).abs() < 1e-15);
    }

    #[test]
    fn theta_examples() {
        let lln = CltSystem::new(Kind::Lln, 1.5, 1).unwrap();
        let d = Measure::dirac(&[0.7]).unwrap();
        assert_eq!(lln.theta(&d).unwrap().as_lattice().unwrap().atoms(), vec![(vec![0.7], 1.0)]);

        let clt = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
        let g = Measure::Gaussian(GaussianMeasure::scalar(0.0, 1.7).unwrap());
        assert_eq!(clt.theta(&g).unwrap(), g);

        // Sign pairs (±1, ±1) sum to −2, 0, 0, 2, then shrink by 1/√2.
        let atoms = clt.theta(&rademacher()).unwrap().as_lattice().unwrap().atoms();
        let want = [(-std::f64::consts::SQRT_2, 0.25), (0.0, 0.5), (std::f64::consts::SQRT_2, 0.25)];
        assert_eq!(atoms.len(), 3);
        for ((x, w), (wx, ww)) in atoms.iter().zip(want) {
            assert!((x[0] - wx).abs() < 1e-15 && *w == ww);
        }
    }

    #[test]
    fn gradings() {
        let lln = CltSystem::new(Kind::Lln, 1.5, 1).unwrap();
        let b = Measure::Lattice(LatticeMeasure::bernoulli(0.3).unwrap());
        assert_eq!(lln.grading(&b).unwrap(), GradingPoint::Expectation(vec![0.3]));
        let clt = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
        assert_eq!(clt.grading(&rademacher()).unwrap(), GradingPoint::Variance(PsdMatrix::identity(1)));
        assert!(matches!(clt.grading(&b), Err(CltError::NotInDomain(_))));
        assert!(matches!(
            clt.grading(&Measure::dirac(&[0.0]).unwrap()),
            Err(CltError::NotInDomain(_))
        ));
        let clt2 = CltSystem::new(Kind::Clt, 2.5, 2).unwrap();
        let r2 = Measure::Lattice(LatticeMeasure::product(&LatticeMeasure::rademacher(), &LatticeMeasure::rademacher()).unwrap());
        assert_eq!(clt2.grading(&r2).unwrap(), GradingPoint::Variance(PsdMatrix::identity(2)));
        assert_eq!(
            clt2.analytic_target(&GradingPoint::Variance(PsdMatrix::identity(2))).unwrap(),
            Measure::Gaussian(GaussianMeasure::centered(PsdMatrix::identity(2)).unwrap())
        );
    }

    #[test]
    fn grading_monitor_catches_wrong_rescale() {
        let clt = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
        let ok = check_grading_preserved(&clt, &rademacher(), 1e-10).unwrap();
        assert!(ok.preserved && ok.drift <= 1e-10);
        let lln = CltSystem::new(Kind::Lln, 1.5, 1).unwrap();
        for (a, b) in random_fibre_pairs(Kind::Lln, 5, 0.3, 1) {
            assert!(check_grading_preserved(&lln, &a, 1e-10).unwrap().preserved);
            assert!(check_grading_preserved(&lln, &b, 1e-10).unwrap().preserved);
        }
        let wrong = CltSystem::new(Kind::Clt, 2.5, 1).unwrap().with_rescale(0.5);
        let bad = check_grading_preserved(&wrong, &rademacher(), 1e-10).unwrap();
        // Variance 1 becomes ½: d_BW = 1 − 1/√2.
        assert!(!bad.preserved && bad.drift > 0.1);
        assert!((bad.drift - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-12);
    }

    #[test]
    fn fibre_pairs_share_grading() {
        for kind in [Kind::Clt, Kind::Lln] {
            let l = if kind == Kind::Clt { 2.5 } else { 1.5 };
            let sys = CltSystem::new(kind, l, 1).unwrap();
            for (a, b) in random_fibre_pairs(kind, 10, 0.3, 9) {
                let (ga, gb) = (sys.grading(&a).unwrap(), sys.grading(&b).unwrap());
                assert!(sys.grading_distance(&ga, &gb) <= FIBRE_TOL);
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn contraction_needs_usable_pairs() {
        let sys = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
        let r = rademacher();
        assert!(matches!(estimate_contraction(&sys, &[(r.clone(), r)]), Err(CltError::NoValidPairs)));
        let est = estimate_contraction(&sys, &random_fibre_pairs(Kind::Clt, 6, 0.0, 2)).unwrap();
        assert_eq!(est.pairs_used, 6);
        assert!(est.ratio <= est.theoretical_ratio + RATIO_SLACK, "{est:?}");
    }

    /// `μ^{∗k}` by enumerating integer index sums.
    fn brute_power(m: &LatticeMeasure, k: usize) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::from([(0, 1.0)]);
        for _ in 0..k {
            let mut next = BTreeMap::new();
            for (&i, &wi) in &acc {
                for (j, &wj) in m.weights().iter().enumerate() {
                    *next.entry(i + j).or_insert(0.0) += wi * wj;
                }
            }
            acc = next;
        }
        acc
    }

    #[test]
    fn iteration_identity_small() {
        let m = LatticeMeasure::line(0.5, -0.25, vec![0.2, 0.5, 0.3]).unwrap();
        let sys = CltSystem::new(Kind::Lln, 1.5, 1).unwrap();
        let mut it = Measure::Lattice(m.clone());
        for n in 1..=3usize {
            it = sys.theta(&it).unwrap();
            let k = 1 << n;
            let brute = brute_power(&m, k);
            let scale = 0.5f64.powi(n as i32);
            let lat = it.as_lattice().unwrap();
            let atoms = lat.atoms();
            assert_eq!(atoms.len(), brute.len());
            for ((x, w), (&j, &bw)) in atoms.iter().zip(&brute) {
                let bx = scale * (k as f64 * m.offset()[0] + j as f64 * m.spacing()[0]);
                assert!((x[0] - bx).abs() <= 1e-10 && (w - bw).abs() <= 1e-10);
            }
        }
        let direct = convolve_raw(&m, &m, ConvolutionMethod::Direct).unwrap();
        assert_eq!(direct.atom_count(), 5);
    }
}
