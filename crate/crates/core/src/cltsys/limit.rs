use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::{CltError, CltSystem, GradingPoint, Iterate, Kind, Trace, GRADING_TOL, RATIO_SLACK};
use crate::linalg::Matrix;
use crate::measure::{prepared_distance, pushforward_linear, Measure, PreparedMeasure};
use crate::psd::psd_pushforward;
use crate::vspace::{banach_fixed_point_observed, EngineConfig, EngineError};

/// Version tag written as the first CSV line.
pub const CSV_SCHEMA: &str = "#schema=1";

/// How the final distance to the limit is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetTolerance {
    Absolute(f64),
    /// `d₀ · ratioᴺ · slack` with the theoretical ratio and the iteration
    /// budget `N`.
    ContractionBound { slack: f64 },
}

impl Default for TargetTolerance {
    fn default() -> Self {
        TargetTolerance::ContractionBound { slack: 1.1 }
    }
}

/// `d₀ · ratioⁿ · 1.1`.
pub fn contraction_bound(d0: f64, ratio: f64, n: usize) -> f64 {
    d0 * ratio.powi(n as i32) * 1.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverged,
    Inconclusive,
}

/// Record of one central-limit run. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub kind: Kind,
    pub l: f64,
    pub grading: GradingPoint,
    pub iterations: usize,
    pub target_tol: f64,
    /// `d_l(μ_n, limit)` for `n = 0..=iterations`.
    pub distance_to_target: Vec<f64>,
    /// `d_l(μ_{n−1}, μ_n)` for `n = 1..=iterations`.
    pub successive_distance: Vec<f64>,
    /// Largest post-burn-in successive ratio, when one is defined.
    pub empirical_ratio: Option<f64>,
    pub theoretical_ratio: f64,
    /// Grading distance of `μ_n` from `μ_0`, `n = 0..=iterations`.
    pub grading_drift: Vec<f64>,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    pub fn final_distance(&self) -> f64 {
        *self.distance_to_target.last().expect("the start point is always recorded")
    }

    pub fn max_drift(&self) -> f64 {
        self.grading_drift.iter().copied().fold(0.0, f64::max)
    }

    /// Plot-ready table, one row per iterate.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_SCHEMA}\niteration,d_to_target,d_successive,ratio,grading_drift\n");
        for n in 0..=self.iterations {
            let succ = n.checked_sub(1).map(|i| self.successive_distance[i]);
            let ratio = if n >= 2 {
                let (a, b) = (self.successive_distance[n - 2], self.successive_distance[n - 1]);
                (a > 0.0).then(|| b / a)
            } else {
                None
            };
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{n},{},{},{},{}",
                self.distance_to_target[n],
                cell(succ),
                cell(ratio),
                self.grading_drift[n]
            );
        }
        out
    }
}

fn run(
    sys: &CltSystem,
    mu0: &Measure,
    max_iter: usize,
) -> Result<(Trace, GradingPoint, PreparedMeasure, bool), CltError> {
    let grading = sys.grading(mu0)?;
    let target = sys.analytic_target(&grading)?;
    let target = PreparedMeasure::new(&target, sys.grid())?;

    // A vanishing tolerance makes every run use its whole budget unless an
    // exact fixed point is reached.
    let config = EngineConfig::new(f64::MIN_POSITIVE, max_iter);
    let (l, grid) = (sys.l(), sys.grid());
    let mut distance_to_target = Vec::new();
    let mut grading_drift = Vec::new();
    let observe = |_: usize, x: &Iterate| {
        distance_to_target.push(prepared_distance(&x.prepared, &target, l, grid).expect("validated exponent"));
        let g = sys.grading_unchecked(&x.measure);
        grading_drift.push(sys.grading_distance(&grading, &g));
    };
    let result = banach_fixed_point_observed(|x| sys.step(x), sys.prepare(mu0.clone()), &sys.metric(), &config, observe);
    let (engine, diverged) = match result {
        Ok(report) => (report, false),
        Err(EngineError::MaxIterationsExceeded { report }) => (*report, false),
        Err(EngineError::DivergenceDetected { report, .. }) => (*report, true),
        Err(EngineError::InvalidConfig(msg)) => return Err(CltError::InvalidConfig(msg)),
    };
    let trace = Trace {
        engine,
        distance_to_target,
        grading_drift,
    };
    Ok((trace, grading, target, diverged))
}

fn assemble(
    sys: &CltSystem,
    trace: &Trace,
    grading: GradingPoint,
    target: TargetTolerance,
    max_iter: usize,
    diverged: bool,
) -> ConvergenceReport {
    let d0 = trace.distance_to_target[0];
    let theoretical_ratio = sys.theoretical_ratio();
    let target_tol = match target {
        TargetTolerance::Absolute(t) => t,
        TargetTolerance::ContractionBound { slack } => d0 * theoretical_ratio.powi(max_iter as i32) * slack,
    };
    let mut report = ConvergenceReport {
        kind: sys.kind(),
        l: sys.l(),
        grading,
        iterations: trace.engine.iterations_used,
        target_tol,
        distance_to_target: trace.distance_to_target.clone(),
        successive_distance: trace.engine.successive_distances.clone(),
        empirical_ratio: trace.engine.empirical_ratio,
        theoretical_ratio,
        grading_drift: trace.grading_drift.clone(),
        verdict: Verdict::Inconclusive,
    };
    let ratio_ok = report.empirical_ratio.is_none_or(|r| r <= theoretical_ratio + RATIO_SLACK);
    report.verdict = if diverged {
        Verdict::Diverged
    } else if report.final_distance() <= target_tol && report.max_drift() <= GRADING_TOL && ratio_ok {
        Verdict::Converged
    } else {
        Verdict::Inconclusive
    };
    report
}

/// Iterates θ from `mu0` for `max_iter` steps (or until an exact fixed
/// point), tracking the distance to the analytic limit of `mu0`'s fibre.
///
/// Returns `Ok` when the final distance meets the target tolerance (the
/// verdict may still be `inconclusive` if the grading drifted or the ratio
/// bound failed), `MaxIterationsExceeded` when it does not, and
/// `DivergenceDetected` when successive distances keep growing.
pub fn central_limit(
    sys: &CltSystem,
    mu0: &Measure,
    max_iter: usize,
    target: TargetTolerance,
) -> Result<ConvergenceReport, CltError> {
    let (trace, grading, _, diverged) = run(sys, mu0, max_iter)?;
    let report = assemble(sys, &trace, grading, target, max_iter, diverged);
    match report.verdict {
        Verdict::Diverged => Err(CltError::DivergenceDetected {
            iteration: report.iterations,
            report: Box::new(report),
        }),
        _ if report.final_distance() > report.target_tol => {
            Err(CltError::MaxIterationsExceeded { report: Box::new(report) })
        }
        _ => Ok(report),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctorialityReport {
    /// `d_l(f_* limit, N(0, f M fᵀ))`.
    pub distance: f64,
    pub tol: f64,
    pub passed: bool,
    pub limit: ConvergenceReport,
}

/// Checks that pushing the computed limit forward along a scalar or
/// diagonal `f` lands on the Gaussian with the pushed-forward variance.
pub fn functoriality_check(
    sys: &CltSystem,
    f: &Matrix,
    mu0: &Measure,
    max_iter: usize,
    tol: f64,
) -> Result<FunctorialityReport, CltError> {
    if sys.kind() != Kind::Clt {
        return Err(CltError::InvalidConfig("functoriality is checked for the CLT system".into()));
    }
    let d = sys.dim();
    let f = if f.rows() == 1 && f.cols() == 1 {
        Matrix::from_diag(&vec![f[(0, 0)]; d])
    } else {
        f.clone()
    };
    if !(f.is_square() && f.rows() == d && f.is_diagonal()) {
        return Err(CltError::InvalidConfig("map must be scalar or diagonal".into()));
    }
    let (trace, grading, _, diverged) = run(sys, mu0, max_iter)?;
    let limit = assemble(sys, &trace, grading.clone(), TargetTolerance::default(), max_iter, diverged);
    let last: Arc<Measure> = Arc::clone(&trace.engine.fixed_point.measure);
    let pushed = pushforward_linear(&f, &last)?;
    let GradingPoint::Variance(m) = grading else {
        unreachable!("CLT gradings are variances")
    };
    let want = sys.analytic_target(&GradingPoint::Variance(psd_pushforward(&f, &m)?))?;
    let distance = sys.distance(&pushed, &want)?;
    Ok(FunctorialityReport {
        distance,
        tol,
        passed: distance <= tol,
        limit,
    })
}
