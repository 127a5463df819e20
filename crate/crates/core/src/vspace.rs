//! Quantale-valued distance spaces and the Banach fixed-point engine.
//!
//! A distance here is only required to be reflexive (`d(x, x) = ⊥`) and
//! symmetric. Nothing in this module uses the triangle inequality.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::quantale::{ExtRealMul, Quantale};

/// A quantale together with a distance evaluator on points of type `P`.
pub struct MetricStructure<Q: Quantale, P: ?Sized> {
    pub quantale: Q,
    distance: Box<dyn Fn(&P, &P) -> Q::Value + Send + Sync>,
}

impl<Q: Quantale, P: ?Sized> MetricStructure<Q, P> {
    pub fn new(quantale: Q, distance: impl Fn(&P, &P) -> Q::Value + Send + Sync + 'static) -> Self {
        Self {
            quantale,
            distance: Box::new(distance),
        }
    }

    pub fn distance(&self, a: &P, b: &P) -> Q::Value {
        (self.distance)(a, b)
    }
}

impl<Q: Quantale + fmt::Debug, P: ?Sized> fmt::Debug for MetricStructure<Q, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricStructure")
            .field("quantale", &self.quantale)
            .finish_non_exhaustive()
    }
}

/// `|x − y|` on the reals, valued in `ExtRealMul`.
pub fn real_line() -> MetricStructure<ExtRealMul, f64> {
    MetricStructure::new(ExtRealMul, |a: &f64, b: &f64| (a - b).abs())
}

/// Euclidean distance on `R^n`, valued in `ExtRealMul`.
pub fn euclidean() -> MetricStructure<ExtRealMul, Vec<f64>> {
    MetricStructure::new(ExtRealMul, |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricAxiomReport {
    pub reflexivity: Option<String>,
    pub symmetry: Option<String>,
}

impl MetricAxiomReport {
    pub fn passed(&self) -> bool {
        self.reflexivity.is_none() && self.symmetry.is_none()
    }
}

/// Checks `d(x, x) = ⊥` and `d(x, y) = d(y, x)` on all sampled points.
pub fn check_metric_axioms<Q: Quantale, P: fmt::Debug>(
    m: &MetricStructure<Q, P>,
    points: &[P],
) -> MetricAxiomReport {
    let q = &m.quantale;
    let reflexivity = points.iter().enumerate().find_map(|(i, x)| {
        let d = m.distance(x, x);
        (!q.equiv(d, q.bottom())).then(|| format!("point {i}: d(x,x)={d:?}"))
    });
    let mut symmetry = None;
    'outer: for (i, x) in points.iter().enumerate() {
        for (j, y) in points.iter().enumerate().skip(i + 1) {
            let (dxy, dyx) = (m.distance(x, y), m.distance(y, x));
            if dxy != dyx && !q.equiv(dxy, dyx) {
                symmetry = Some(format!("points {i},{j}: {dxy:?} vs {dyx:?}"));
                break 'outer;
            }
        }
    }
    MetricAxiomReport {
        reflexivity,
        symmetry,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Stop once a successive distance is at most this (after burn-in).
    pub tolerance: f64,
    pub max_iter: usize,
    /// Leading iterations excluded from the ratio and monotonicity checks.
    pub burn_in: usize,
    /// Retain every `keep_every`-th iterate in addition to the first/last four.
    pub keep_every: usize,
}

impl EngineConfig {
    pub fn new(tolerance: f64, max_iter: usize) -> Self {
        Self {
            tolerance,
            max_iter,
            burn_in: 2,
            keep_every: 5,
        }
    }
}

/// Relative growth above which a successive distance counts as an increase.
pub const DIVERGENCE_GROWTH: f64 = 1.0 + 1e-6;
/// Consecutive increases that trigger [`EngineError::DivergenceDetected`].
pub const DIVERGENCE_STREAK: usize = 3;

#[derive(Debug, Clone)]
pub struct FixedPointReport<P> {
    pub fixed_point: P,
    /// `(iteration index, iterate)`; index 0 is the start point.
    pub iterates_kept: Vec<(usize, P)>,
    /// `successive_distances[i] = d(x_i, x_{i+1})`.
    pub successive_distances: Vec<f64>,
    /// Largest ratio `d_i / d_{i-1}` for `i > burn_in`; `None` when no ratio
    /// is defined.
    pub empirical_ratio: Option<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

#[derive(Debug, Error)]
pub enum EngineError<P: fmt::Debug> {
    #[error("precondition violated: {0}")]
    InvalidConfig(String),
    #[error("successive distances grew for {DIVERGENCE_STREAK} consecutive steps (iteration {iteration})")]
    DivergenceDetected {
        iteration: usize,
        report: Box<FixedPointReport<P>>,
    },
    #[error("no convergence within {} iterations", .report.iterations_used)]
    MaxIterationsExceeded { report: Box<FixedPointReport<P>> },
}

impl<P: fmt::Debug> EngineError<P> {
    pub fn report(&self) -> Option<&FixedPointReport<P>> {
        match self {
            Self::InvalidConfig(_) => None,
            Self::DivergenceDetected { report, .. } | Self::MaxIterationsExceeded { report } => {
                Some(report)
            }
        }
    }

    pub fn into_report(self) -> Option<FixedPointReport<P>> {
        match self {
            Self::InvalidConfig(_) => None,
            Self::DivergenceDetected { report, .. } | Self::MaxIterationsExceeded { report } => {
                Some(*report)
            }
        }
    }
}

struct Retained<P> {
    head: Vec<(usize, P)>,
    middle: Vec<(usize, P)>,
    tail: VecDeque<(usize, P)>,
    keep_every: usize,
}

impl<P: Clone> Retained<P> {
    fn push(&mut self, idx: usize, p: &P) {
        if self.head.len() < 4 {
            self.head.push((idx, p.clone()));
            return;
        }
        self.tail.push_back((idx, p.clone()));
        if self.tail.len() > 4 {
            let (i, old) = self.tail.pop_front().unwrap();
            if self.keep_every > 0 && i % self.keep_every == 0 {
                self.middle.push((i, old));
            }
        }
    }

    fn into_vec(self) -> Vec<(usize, P)> {
        let mut v = self.head;
        v.extend(self.middle);
        v.extend(self.tail);
        v
    }
}

fn empirical_ratio(distances: &[f64], burn_in: usize) -> Option<f64> {
    let ratios = distances
        .windows(2)
        .enumerate()
        .filter(|(i, _)| i + 1 > burn_in)
        .filter(|(_, w)| w[0] > 0.0 && w[0].is_finite() && w[1].is_finite())
        .map(|(_, w)| ExtRealMul.residual(w[0], w[1]));
    ratios.fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
}

fn non_increasing_after(distances: &[f64], burn_in: usize) -> bool {
    distances
        .windows(2)
        .enumerate()
        .filter(|(i, _)| i + 1 > burn_in)
        .all(|(_, w)| w[1] <= w[0])
}

/// Iterates `x_{n+1} = f(x_n)` until `d(x_n, x_{n+1}) ≤ tolerance`.
///
/// The caller is responsible for `f` being a contraction; the engine only
/// observes the successive distances. A successive distance of exactly `⊥`
/// means an exact fixed point was hit and stops the run immediately.
/// Otherwise the stop rule only applies once `burn_in` iterations are done,
/// and `converged` additionally requires the post-burn-in distances to be
/// non-increasing.
pub fn banach_fixed_point<P, F>(
    f: F,
    x0: P,
    metric: &MetricStructure<ExtRealMul, P>,
    config: &EngineConfig,
) -> Result<FixedPointReport<P>, EngineError<P>>
where
    P: Clone + fmt::Debug,
    F: Fn(&P) -> P,
{
    run_engine(f, x0, metric, config, |_, _| {})
}

/// Same as [`banach_fixed_point`], calling `observe(n, x_n)` on every iterate
/// (including `x_0`).
pub fn banach_fixed_point_observed<P, F, O>(
    f: F,
    x0: P,
    metric: &MetricStructure<ExtRealMul, P>,
    config: &EngineConfig,
    observe: O,
) -> Result<FixedPointReport<P>, EngineError<P>>
where
    P: Clone + fmt::Debug,
    F: Fn(&P) -> P,
    O: FnMut(usize, &P),
{
    run_engine(f, x0, metric, config, observe)
}

fn run_engine<P, F, O>(
    f: F,
    x0: P,
    metric: &MetricStructure<ExtRealMul, P>,
    config: &EngineConfig,
    mut observe: O,
) -> Result<FixedPointReport<P>, EngineError<P>>
where
    P: Clone + fmt::Debug,
    F: Fn(&P) -> P,
    O: FnMut(usize, &P),
{
    if !(config.tolerance > 0.0) {
        return Err(EngineError::InvalidConfig("tolerance must exceed ⊥".into()));
    }
    if config.max_iter == 0 {
        return Err(EngineError::InvalidConfig("max_iter must be at least 1".into()));
    }

    let mut retained = Retained {
        head: Vec::new(),
        middle: Vec::new(),
        tail: VecDeque::new(),
        keep_every: config.keep_every,
    };
    let mut distances = Vec::new();
    let mut streak = 0usize;
    let mut current = x0;
    observe(0, &current);
    retained.push(0, &current);

    let finish = |current: P, retained: Retained<P>, distances: Vec<f64>, converged: bool| {
        FixedPointReport {
            fixed_point: current,
            iterates_kept: retained.into_vec(),
            empirical_ratio: empirical_ratio(&distances, config.burn_in),
            converged,
            iterations_used: distances.len(),
            successive_distances: distances,
        }
    };

    for n in 1..=config.max_iter {
        let next = f(&current);
        let d = metric.distance(&current, &next);
        observe(n, &next);
        retained.push(n, &next);

        if let Some(&prev) = distances.last() {
            if d > prev * DIVERGENCE_GROWTH {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        distances.push(d);
        current = next;

        if d == f64::INFINITY || streak >= DIVERGENCE_STREAK {
            let report = finish(current, retained, distances, false);
            return Err(EngineError::DivergenceDetected {
                iteration: n,
                report: Box::new(report),
            });
        }
        if d == 0.0 {
            return Ok(finish(current, retained, distances, true));
        }
        if d <= config.tolerance && n > config.burn_in {
            let monotone = non_increasing_after(&distances, config.burn_in);
            return Ok(finish(current, retained, distances, monotone));
        }
    }
    let report = finish(current, retained, distances, false);
    Err(EngineError::MaxIterationsExceeded {
        report: Box::new(report),
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LipschitzError {
    #[error("every sample pair is degenerate (distance ⊥ or ⊤)")]
    NoValidPairs,
}

/// Lower estimate of the Lipschitz seminorm of `f`: the join over sample
/// pairs of `[d(x, y), d(f x, f y)]`. Pairs at distance `⊥` or `⊤` are skipped.
pub fn estimate_lipschitz<Q, P, F>(
    f: F,
    pairs: &[(P, P)],
    metric: &MetricStructure<Q, P>,
) -> Result<Q::Value, LipschitzError>
where
    Q: Quantale,
    F: Fn(&P) -> P,
{
    let q = &metric.quantale;
    let residuals: Vec<Q::Value> = pairs
        .iter()
        .filter_map(|(x, y)| {
            let d = metric.distance(x, y);
            if q.equiv(d, q.bottom()) || q.equiv(d, q.top()) {
                return None;
            }
            Some(q.residual(d, metric.distance(&f(x), &f(y))))
        })
        .collect();
    if residuals.is_empty() {
        return Err(LipschitzError::NoValidPairs);
    }
    Ok(q.join(&residuals))
}

/// True iff `d_i ≤ r^i ⊗ q` for every `i`.
pub fn check_geometric<Q: Quantale>(quantale: &Q, distances: &[Q::Value], r: Q::Value, q: Q::Value) -> bool {
    let mut power = quantale.unit();
    for &d in distances {
        if !quantale.leq(d, quantale.tensor(power, q)) {
            return false;
        }
        power = quantale.tensor(power, r);
    }
    true
}
