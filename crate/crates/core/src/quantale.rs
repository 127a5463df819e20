//! Quantales: complete lattices carrying a commutative, join-preserving
//! monoid structure together with its residuation.
//!
//! Three concrete carriers are shipped:
//!
//! * [`Boolean`], the two-element lattice with `⊗ = ∧`,
//! * [`ExtRealMul`], `[0, ∞]` under the usual order with `⊗ = ×` and unit `1`,
//! * [`Lawvere`], `[0, ∞]` under the *opposite* order with `⊗ = +` and unit `0`.
//!
//! Floating-point carriers compare with a tolerance of [`VALUE_TOL`]
//! (absolute up to magnitude 1, relative beyond); infinities compare exactly.
//!
//! [`check_laws`] runs the axioms over a finite sample of carrier values and
//! reports a witness for every violated law.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Comparison tolerance of the floating-point carriers: absolute below 1,
/// relative above.
pub const VALUE_TOL: f64 = 1e-12;

/// A commutative quantale restricted to finite joins and meets.
pub trait Quantale {
    type Value: Copy + fmt::Debug + PartialEq;

    fn name(&self) -> &'static str;
    fn bottom(&self) -> Self::Value;
    fn top(&self) -> Self::Value;
    fn unit(&self) -> Self::Value;
    fn leq(&self, a: Self::Value, b: Self::Value) -> bool;
    fn join(&self, values: &[Self::Value]) -> Self::Value;
    fn meet(&self, values: &[Self::Value]) -> Self::Value;
    fn tensor(&self, a: Self::Value, b: Self::Value) -> Self::Value;
    /// Largest `s` with `tensor(r, s) ≤ t`.
    fn residual(&self, r: Self::Value, t: Self::Value) -> Self::Value;
    /// Whether the instance claims `q ⊗ x < x` for all `q < e`, `x ∉ {⊥, ⊤}`.
    fn contractive(&self) -> bool;

    /// Strict order on the carrier, without tolerance.
    fn strictly_below(&self, a: Self::Value, b: Self::Value) -> bool;

    fn equiv(&self, a: Self::Value, b: Self::Value) -> bool {
        self.leq(a, b) && self.leq(b, a)
    }

    fn join2(&self, a: Self::Value, b: Self::Value) -> Self::Value {
        self.join(&[a, b])
    }

    /// `n`-fold tensor power; `r^0 = e`.
    fn tensor_power(&self, r: Self::Value, n: usize) -> Self::Value {
        (0..n).fold(self.unit(), |acc, _| self.tensor(acc, r))
    }
}

fn leq_ext(a: f64, b: f64) -> bool {
    if b == f64::INFINITY {
        true
    } else if a == f64::INFINITY {
        false
    } else {
        a <= b + VALUE_TOL * a.abs().max(b.abs()).max(1.0)
    }
}

/// Extended multiplication on `[0, ∞]` with `0 · ∞ = 0`.
fn mul_ext(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// The two-element quantale `(2, ∧, ⊤)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Boolean;

impl Quantale for Boolean {
    type Value = bool;

    fn name(&self) -> &'static str {
        "boolean"
    }
    fn bottom(&self) -> bool {
        false
    }
    fn top(&self) -> bool {
        true
    }
    fn unit(&self) -> bool {
        true
    }
    fn leq(&self, a: bool, b: bool) -> bool {
        !a || b
    }
    fn join(&self, values: &[bool]) -> bool {
        values.iter().any(|&v| v)
    }
    fn meet(&self, values: &[bool]) -> bool {
        values.iter().all(|&v| v)
    }
    fn tensor(&self, a: bool, b: bool) -> bool {
        a && b
    }
    fn residual(&self, r: bool, t: bool) -> bool {
        !r || t
    }
    fn contractive(&self) -> bool {
        true
    }
    fn strictly_below(&self, a: bool, b: bool) -> bool {
        !a && b
    }
}

/// `([0, ∞], ≤, ×, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtRealMul;

impl Quantale for ExtRealMul {
    type Value = f64;

    fn name(&self) -> &'static str {
        "ext-real-mul"
    }
    fn bottom(&self) -> f64 {
        0.0
    }
    fn top(&self) -> f64 {
        f64::INFINITY
    }
    fn unit(&self) -> f64 {
        1.0
    }
    fn leq(&self, a: f64, b: f64) -> bool {
        leq_ext(a, b)
    }
    fn join(&self, values: &[f64]) -> f64 {
        values.iter().copied().fold(0.0, f64::max)
    }
    fn meet(&self, values: &[f64]) -> f64 {
        values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    fn tensor(&self, a: f64, b: f64) -> f64 {
        mul_ext(a, b)
    }
    fn residual(&self, r: f64, t: f64) -> f64 {
        if r == 0.0 {
            f64::INFINITY
        } else if r == f64::INFINITY {
            if t == f64::INFINITY {
                f64::INFINITY
            } else {
                0.0
            }
        } else if t == f64::INFINITY {
            f64::INFINITY
        } else {
            t / r
        }
    }
    fn contractive(&self) -> bool {
        true
    }
    fn strictly_below(&self, a: f64, b: f64) -> bool {
        a < b
    }
}

/// The Lawvere quantale: `[0, ∞]` ordered by `≥`, with `⊗ = +` and unit `0`.
///
/// Here `⊥ = ∞` and `⊤ = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Lawvere;

impl Quantale for Lawvere {
    type Value = f64;

    fn name(&self) -> &'static str {
        "lawvere"
    }
    fn bottom(&self) -> f64 {
        f64::INFINITY
    }
    fn top(&self) -> f64 {
        0.0
    }
    fn unit(&self) -> f64 {
        0.0
    }
    fn leq(&self, a: f64, b: f64) -> bool {
        leq_ext(b, a)
    }
    fn join(&self, values: &[f64]) -> f64 {
        values.iter().copied().fold(f64::INFINITY, f64::min)
    }
    fn meet(&self, values: &[f64]) -> f64 {
        values.iter().copied().fold(0.0, f64::max)
    }
    fn tensor(&self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn residual(&self, r: f64, t: f64) -> f64 {
        if r == f64::INFINITY {
            0.0
        } else if t == f64::INFINITY {
            f64::INFINITY
        } else {
            (t - r).max(0.0)
        }
    }
    fn contractive(&self) -> bool {
        true
    }
    fn strictly_below(&self, a: f64, b: f64) -> bool {
        a > b
    }
}

/// Deliberately broken instance: the `ExtRealMul` carrier with `max` as
/// tensor and `1` as unit. Fails the unit law; used to exercise the checker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultyMaxTensor;

impl Quantale for FaultyMaxTensor {
    type Value = f64;

    fn name(&self) -> &'static str {
        "faulty-max-tensor"
    }
    fn bottom(&self) -> f64 {
        0.0
    }
    fn top(&self) -> f64 {
        f64::INFINITY
    }
    fn unit(&self) -> f64 {
        1.0
    }
    fn leq(&self, a: f64, b: f64) -> bool {
        leq_ext(a, b)
    }
    fn join(&self, values: &[f64]) -> f64 {
        ExtRealMul.join(values)
    }
    fn meet(&self, values: &[f64]) -> f64 {
        ExtRealMul.meet(values)
    }
    fn tensor(&self, a: f64, b: f64) -> f64 {
        a.max(b)
    }
    fn residual(&self, r: f64, t: f64) -> f64 {
        ExtRealMul.residual(r, t)
    }
    fn contractive(&self) -> bool {
        false
    }
    fn strictly_below(&self, a: f64, b: f64) -> bool {
        a < b
    }
}

/// The shipped instances, by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantaleInstance {
    Boolean,
    ExtRealMul,
    Lawvere,
}

impl QuantaleInstance {
    pub const ALL: [QuantaleInstance; 3] = [Self::Boolean, Self::ExtRealMul, Self::Lawvere];

    /// Runs the law suite on the instance's default sample set.
    pub fn check_default_laws(self, seed: u64) -> LawReport {
        match self {
            Self::Boolean => check_laws(&Boolean, &[false, true], seed),
            Self::ExtRealMul => check_laws(&ExtRealMul, &extended_real_samples(100), seed),
            Self::Lawvere => check_laws(&Lawvere, &extended_real_samples(100), seed),
        }
    }
}

/// `n` log-spaced values on `[1e-3, 1e3]` plus `0` and `∞`.
pub fn extended_real_samples(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 2);
    out.push(0.0);
    for i in 0..n {
        let frac = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        out.push(10f64.powf(-3.0 + 6.0 * frac));
    }
    out.push(f64::INFINITY);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    Commutativity,
    Associativity,
    Unit,
    Absorption,
    JoinDistributivity,
    Residuation,
    Contractivity,
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Law::Commutativity => "commutativity",
            Law::Associativity => "associativity",
            Law::Unit => "unit",
            Law::Absorption => "absorption",
            Law::JoinDistributivity => "join-distributivity",
            Law::Residuation => "residuation",
            Law::Contractivity => "contractivity",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawCheck {
    pub law: Law,
    pub passed: bool,
    /// Debug rendering of the first counterexample found.
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub quantale: String,
    pub checks: Vec<LawCheck>,
}

impl LawReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&LawCheck> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn check(&self, law: Law) -> Option<&LawCheck> {
        self.checks.iter().find(|c| c.law == law)
    }
}

/// Upper bound on exhaustively enumerated triples; larger sample sets are
/// subsampled with the seeded generator.
const MAX_TRIPLES: usize = 1 << 21;
const SUBSET_TRIALS: usize = 256;

fn triples<V: Copy>(samples: &[V], rng: &mut ChaCha8Rng) -> Vec<(V, V, V)> {
    let n = samples.len();
    if n.saturating_pow(3) <= MAX_TRIPLES {
        let mut out = Vec::with_capacity(n * n * n);
        for &a in samples {
            for &b in samples {
                for &c in samples {
                    out.push((a, b, c));
                }
            }
        }
        out
    } else {
        (0..MAX_TRIPLES)
            .map(|_| {
                (
                    samples[rng.gen_range(0..n)],
                    samples[rng.gen_range(0..n)],
                    samples[rng.gen_range(0..n)],
                )
            })
            .collect()
    }
}

fn record(checks: &mut Vec<LawCheck>, law: Law, witness: Option<String>) {
    checks.push(LawCheck {
        law,
        passed: witness.is_none(),
        witness,
    });
}

/// Checks every quantale axiom over `samples` (which must be non-empty).
///
/// Associativity, commutativity and residuation are checked on all sample
/// triples when feasible; join-distributivity uses seeded random finite
/// subsets. Contractivity is only checked when the instance claims it.
pub fn check_laws<Q: Quantale>(q: &Q, samples: &[Q::Value], seed: u64) -> LawReport {
    assert!(!samples.is_empty(), "law check needs at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trips = triples(samples, &mut rng);
    let mut checks = Vec::new();

    let w = trips
        .iter()
        .find(|&&(a, b, _)| !q.equiv(q.tensor(a, b), q.tensor(b, a)))
        .map(|(a, b, _)| format!("a={a:?} b={b:?}"));
    record(&mut checks, Law::Commutativity, w);

    let w = trips
        .iter()
        .find(|&&(a, b, c)| !q.equiv(q.tensor(q.tensor(a, b), c), q.tensor(a, q.tensor(b, c))))
        .map(|(a, b, c)| format!("a={a:?} b={b:?} c={c:?}"));
    record(&mut checks, Law::Associativity, w);

    let e = q.unit();
    let w = samples
        .iter()
        .find(|&&a| !q.equiv(q.tensor(e, a), a) || !q.equiv(q.tensor(a, e), a))
        .map(|a| format!("e={e:?} a={a:?} e⊗a={:?}", q.tensor(e, *a)));
    record(&mut checks, Law::Unit, w);

    let bot = q.bottom();
    let w = samples
        .iter()
        .find(|&&a| !q.equiv(q.tensor(bot, a), bot))
        .map(|a| format!("a={a:?} ⊥⊗a={:?}", q.tensor(bot, *a)));
    record(&mut checks, Law::Absorption, w);

    let mut w = None;
    'outer: for &r in samples {
        for _ in 0..SUBSET_TRIALS.min(samples.len().pow(2)) {
            let k = rng.gen_range(0..=samples.len().min(6));
            let subset: Vec<_> = samples.choose_multiple(&mut rng, k).copied().collect();
            let lhs = q.tensor(r, q.join(&subset));
            let images: Vec<_> = subset.iter().map(|&s| q.tensor(r, s)).collect();
            let rhs = q.join(&images);
            if !q.equiv(lhs, rhs) {
                w = Some(format!("r={r:?} subset={subset:?}"));
                break 'outer;
            }
        }
    }
    record(&mut checks, Law::JoinDistributivity, w);

    let w = trips
        .iter()
        .find(|&&(r, s, t)| q.leq(q.tensor(r, s), t) != q.leq(s, q.residual(r, t)))
        .map(|(r, s, t)| {
            format!(
                "r={r:?} s={s:?} t={t:?} r⊗s={:?} [r,t]={:?}",
                q.tensor(*r, *s),
                q.residual(*r, *t)
            )
        });
    record(&mut checks, Law::Residuation, w);

    if q.contractive() {
        let top = q.top();
        let mut w = None;
        'c: for &qv in samples.iter().filter(|&&v| q.strictly_below(v, e)) {
            for &x in samples.iter().filter(|&&x| x != top && x != bot) {
                let y = q.tensor(qv, x);
                if !q.strictly_below(y, x) {
                    w = Some(format!("q={qv:?} x={x:?} q⊗x={y:?}"));
                    break 'c;
                }
            }
        }
        record(&mut checks, Law::Contractivity, w);
    }

    LawReport {
        quantale: q.name().to_string(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_examples() {
        assert_eq!(ExtRealMul.tensor(2.0, 3.0), 6.0);
        assert!(!Boolean.tensor(true, false));
        assert_eq!(Lawvere.tensor(1.5, 2.5), 4.0);
        assert_eq!(ExtRealMul.tensor(0.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(ExtRealMul.residual(2.0, 6.0), 3.0);
        assert!(!Boolean.residual(true, false));
        assert_eq!(ExtRealMul.residual(0.0, 5.0), f64::INFINITY);
        assert_eq!(ExtRealMul.residual(f64::INFINITY, 5.0), 0.0);
        assert_eq!(ExtRealMul.residual(f64::INFINITY, f64::INFINITY), f64::INFINITY);
    }

    // Brute-force the largest s with 0·s ≤ 5 over a sampled carrier.
    #[test]
    fn residual_at_zero_is_largest_admissible() {
        let carrier = extended_real_samples(50);
        let admissible: Vec<f64> = carrier
            .iter()
            .copied()
            .filter(|&s| ExtRealMul.leq(ExtRealMul.tensor(0.0, s), 5.0))
            .collect();
        assert_eq!(admissible.len(), carrier.len());
        assert_eq!(ExtRealMul.join(&admissible), f64::INFINITY);
        assert_eq!(ExtRealMul.residual(0.0, 5.0), f64::INFINITY);
    }

    #[test]
    fn lawvere_orientation() {
        let q = Lawvere;
        assert_eq!(q.bottom(), f64::INFINITY);
        assert_eq!(q.top(), 0.0);
        assert!(q.leq(5.0, 1.0));
        assert!(!q.leq(1.0, 5.0));
        assert_eq!(q.join(&[3.0, 1.0, 7.0]), 1.0);
        assert_eq!(q.join(&[]), f64::INFINITY);
        assert_eq!(q.residual(2.0, 5.0), 3.0);
        assert_eq!(q.residual(5.0, 2.0), 0.0);
    }

    #[test]
    fn shipped_instances_pass() {
        for inst in QuantaleInstance::ALL {
            let report = inst.check_default_laws(42);
            assert!(report.all_passed(), "{inst:?}: {:?}", report.first_failure());
            assert!(report.check(Law::Contractivity).is_some());
        }
    }

    #[test]
    fn boolean_exhaustive() {
        let report = check_laws(&Boolean, &[false, true], 0);
        assert_eq!(report.checks.len(), 7);
        assert!(report.all_passed());
    }

    #[test]
    fn broken_unit_is_caught() {
        let report = check_laws(&FaultyMaxTensor, &extended_real_samples(20), 1);
        let unit = report.check(Law::Unit).unwrap();
        assert!(!unit.passed);
        assert!(unit.witness.as_ref().unwrap().contains("a="));
        assert_eq!(FaultyMaxTensor.tensor(1.0, 0.5), 1.0);
        assert_eq!(report.first_failure().unwrap().law, Law::Unit);
    }

    #[test]
    fn ext_real_residual_is_division() {
        for &x in &extended_real_samples(30)[1..31] {
            for &y in &extended_real_samples(30)[1..31] {
                assert_eq!(ExtRealMul.residual(x, y), y / x);
            }
        }
    }

    #[test]
    fn tensor_power() {
        assert_eq!(ExtRealMul.tensor_power(0.5, 3), 0.125);
        assert_eq!(ExtRealMul.tensor_power(0.5, 0), 1.0);
        assert_eq!(Lawvere.tensor_power(2.0, 3), 6.0);
    }
}
