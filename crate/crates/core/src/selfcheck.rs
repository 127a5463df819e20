//! Property suites shared by the command-line self-check and the acceptance
//! tests: quantale laws, distance axioms, PSD identities and θ stability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cltsys::{check_grading_preserved, CltSystem, Kind};
use crate::linalg::Matrix;
use crate::measure::{DualGrid, GaussianMeasure, GridConfig, LatticeMeasure, Measure};
use crate::psd::{
    block_diag, bures_wasserstein, psd_dilate, psd_pushforward, random_psd, sqrt_psd, PsdMatrix,
};
use crate::quantale::{check_laws, extended_real_samples, ExtRealMul, FaultyMaxTensor, QuantaleInstance};
use crate::vspace::{banach_fixed_point, check_metric_axioms, euclidean, real_line, EngineConfig, MetricStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Quantale,
    Metric,
    Psd,
    Theta,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Quantale, Suite::Metric, Suite::Psd, Suite::Theta];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Quantale => "quantale",
            Suite::Metric => "metric",
            Suite::Psd => "psd",
            Suite::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub checks: usize,
    /// Description of the first failing check.
    pub failure: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfCheckOptions {
    pub seed: u64,
    /// Adds an instance whose tensor is `max`, which must fail the unit law.
    pub break_unit: bool,
}

struct Tally {
    checks: usize,
    failure: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Self {
            checks: 0,
            failure: None,
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn finish(self, suite: Suite) -> SuiteOutcome {
        SuiteOutcome {
            suite,
            checks: self.checks,
            failure: self.failure,
        }
    }
}

pub fn run_suite(suite: Suite, opts: SelfCheckOptions) -> SuiteOutcome {
    let mut t = Tally::new();
    match suite {
        Suite::Quantale => quantale_suite(&mut t, opts),
        Suite::Metric => metric_suite(&mut t, opts),
        Suite::Psd => psd_suite(&mut t, opts),
        Suite::Theta => theta_suite(&mut t),
    }
    t.finish(suite)
}

fn quantale_suite(t: &mut Tally, opts: SelfCheckOptions) {
    let mut reports: Vec<_> = QuantaleInstance::ALL.iter().map(|q| q.check_default_laws(opts.seed)).collect();
    if opts.break_unit {
        reports.push(check_laws(&FaultyMaxTensor, &extended_real_samples(100), opts.seed));
    }
    for report in reports {
        for c in &report.checks {
            t.check(c.passed, || {
                format!(
                    "{}: {} law fails at {}",
                    report.quantale,
                    c.law,
                    c.witness.as_deref().unwrap_or("?")
                )
            });
        }
    }
}

fn sample_measures() -> Vec<Measure> {
    vec![
        Measure::Lattice(LatticeMeasure::rademacher()),
        Measure::Lattice(LatticeMeasure::uniform(-1.5, 1.5, 7).unwrap()),
        Measure::Lattice(LatticeMeasure::line(0.5, -0.5, vec![0.25, 0.25, 0.5]).unwrap().translated(&[-0.125])),
        Measure::Gaussian(GaussianMeasure::scalar(0.0, 1.0).unwrap()),
        Measure::Gaussian(GaussianMeasure::scalar(0.0, 2.5).unwrap()),
        Measure::dirac(&[0.0]).unwrap(),
        Measure::dirac(&[1.0]).unwrap(),
    ]
}

fn metric_suite(t: &mut Tally, opts: SelfCheckOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut named = |name: &str, ok: bool, detail: String| t.check(ok, || format!("{name}: {detail}"));

    let reals: Vec<f64> = (0..40).map(|_| rng.gen_range(-1e3..1e3)).collect();
    let r = check_metric_axioms(&real_line(), &reals);
    named("real line", r.passed(), format!("{r:?}"));

    let vectors: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let r = check_metric_axioms(&euclidean(), &vectors);
    named("euclidean", r.passed(), format!("{r:?}"));

    let bw = MetricStructure::new(ExtRealMul, |a: &PsdMatrix, b: &PsdMatrix| {
        bures_wasserstein(a, b).unwrap_or(f64::INFINITY)
    });
    let mats: Vec<PsdMatrix> = (0..30)
        .map(|_| {
            let rank = rng.gen_range(1..=2);
            random_psd(&mut rng, 2, rank)
        })
        .collect();
    let r = check_metric_axioms(&bw, &mats);
    named("bures-wasserstein", r.passed(), format!("{r:?}"));

    let grid = std::sync::Arc::new(DualGrid::new(1, GridConfig::default()).unwrap());
    for l in [1.0, 1.5, 2.5] {
        let g = std::sync::Arc::clone(&grid);
        let d = MetricStructure::new(ExtRealMul, move |a: &Measure, b: &Measure| {
            crate::measure::fourier_l_distance(a, b, l, &g).unwrap()
        });
        let r = check_metric_axioms(&d, &sample_measures());
        named(&format!("fourier d_{l}"), r.passed(), format!("{r:?}"));
    }

    let report = banach_fixed_point(|x: &f64| x / 2.0 + 1.0, 0.0, &real_line(), &EngineConfig::new(1e-10, 200));
    let ok = report.as_ref().is_ok_and(|r| r.converged && (r.fixed_point - 2.0).abs() <= 1e-9);
    named("banach engine", ok, format!("x/2 + 1 gave {:?}", report.map(|r| r.fixed_point)));
}

fn psd_suite(t: &mut Tally, opts: SelfCheckOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let bw = |a: &PsdMatrix, b: &PsdMatrix| bures_wasserstein(a, b).unwrap();

    for &(x, y) in &[(4.0, 1.0), (0.0, 2.0), (1e-6, 3.5), (7.25, 7.25)] {
        let d = bw(&PsdMatrix::scalar(x).unwrap(), &PsdMatrix::scalar(y).unwrap());
        let want = (f64::sqrt(x) - f64::sqrt(y)).abs();
        t.check((d - want).abs() <= 1e-12, || format!("1-d formula at ({x}, {y}): {d} vs {want}"));
    }
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let draw = |rng: &mut ChaCha8Rng| {
            let rank = rng.gen_range(1..=n);
            random_psd(rng, n, rank)
        };
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let (ab, ba, bc, ac) = (bw(&a, &b), bw(&b, &a), bw(&b, &c), bw(&a, &c));
        t.check((ab - ba).abs() <= 1e-9, || format!("symmetry: {ab} vs {ba}"));
        t.check(bw(&a, &a) <= 1e-9, || "d(A, A) is not zero".into());
        t.check(ac <= ab + bc + 1e-9, || format!("triangle: {ac} > {ab} + {bc}"));
        let s = rng.gen_range(0.05..3.0);
        let scaled = bw(&psd_dilate(s, &a), &psd_dilate(s, &b));
        t.check((scaled - s * ab).abs() <= 1e-9, || format!("homogeneity at c = {s}: {scaled} vs {}", s * ab));
        let root = sqrt_psd(&a).unwrap().to_matrix();
        let back = root.matmul(&root);
        t.check(back.max_abs_diff(&a.to_matrix()) <= 1e-9, || "sqrt² differs from A".into());
        let (m2, n2) = (draw(&mut rng), draw(&mut rng));
        let split = bw(&block_diag(&a, &m2), &block_diag(&b, &n2)).powi(2);
        let parts = ab.powi(2) + bw(&m2, &n2).powi(2);
        t.check((split - parts).abs() <= 1e-9, || format!("block additivity: {split} vs {parts}"));
        let f = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let g = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let lhs = psd_pushforward(&f.matmul(&g), &a).unwrap();
        let rhs = psd_pushforward(&f, &psd_pushforward(&g, &a).unwrap()).unwrap();
        t.check(lhs.max_abs_diff(&rhs) <= 1e-10 * (1.0 + lhs.trace()), || "pushforward is not functorial".into());
    }
    let a = random_psd(&mut rng, 2, 2);
    let (r, s) = (0.75, 0.5);
    t.check(
        psd_dilate(r, &psd_dilate(s, &a)) == psd_dilate(r * s, &a),
        || "action law r⋆(s⋆M) = (rs)⋆M".into(),
    );
}

fn theta_suite(t: &mut Tally) {
    for dim in [1, 2] {
        let clt = CltSystem::new(Kind::Clt, 2.5, dim).unwrap();
        let m = if dim == 1 {
            PsdMatrix::identity(1)
        } else {
            PsdMatrix::new(2, &[1.0, 0.3, 0.3, 0.5]).unwrap()
        };
        let g = Measure::Gaussian(GaussianMeasure::centered(m).unwrap());
        let d = clt.distance(&clt.theta(&g).unwrap(), &g).unwrap();
        t.check(d <= 1e-10, || format!("θ N(0, M) moved by {d} in dimension {dim}"));

        let lln = CltSystem::new(Kind::Lln, 1.5, dim).unwrap();
        let x = vec![0.3; dim];
        let delta = Measure::dirac(&x).unwrap();
        let d = lln.distance(&lln.theta(&delta).unwrap(), &delta).unwrap();
        t.check(d <= 1e-10, || format!("θ δ_x moved by {d} in dimension {dim}"));
    }
    let clt = CltSystem::new(Kind::Clt, 2.5, 1).unwrap();
    let lln = CltSystem::new(Kind::Lln, 1.5, 1).unwrap();
    let r = Measure::Lattice(LatticeMeasure::rademacher());
    let b = Measure::Lattice(LatticeMeasure::bernoulli(0.3).unwrap());
    for (sys, mu) in [(&clt, &r), (&lln, &b), (&lln, &r)] {
        let check = check_grading_preserved(sys, mu, 1e-10).unwrap();
        t.check(check.preserved, || format!("{} grading drifted by {}", sys.kind(), check.drift));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for suite in Suite::ALL {
            let out = run_suite(suite, SelfCheckOptions { seed: 42, break_unit: false });
            assert!(out.passed(), "{out:?}");
            assert!(out.checks > 0);
        }
    }

    #[test]
    fn broken_unit_is_named() {
        let out = run_suite(Suite::Quantale, SelfCheckOptions { seed: 42, break_unit: true });
        let msg = out.failure.unwrap();
        assert!(msg.contains("unit law"), "{msg}");
    }
}
