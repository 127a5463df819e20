//! Exact convolution of lattice measures, direct or through an FFT.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::lattice::{LatticeMeasure, WEIGHT_FLOOR};
use super::MeasureError;

/// Relative spacing mismatch tolerated between convolved lattices.
pub const SPACING_REL_TOL: f64 = 1e-9;

/// Below this many multiply-adds the direct sum is used.
const FFT_MIN_WORK: usize = 1 << 16;
const FFT_MIN_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionMethod {
    Auto,
    Direct,
    Fft,
}

/// `μ ∗ ν`, truncated at [`WEIGHT_FLOOR`] and renormalized.
pub fn convolve(mu: &LatticeMeasure, nu: &LatticeMeasure) -> Result<LatticeMeasure, MeasureError> {
    convolve_with(mu, nu, ConvolutionMethod::Auto)
}

pub fn convolve_with(
    mu: &LatticeMeasure,
    nu: &LatticeMeasure,
    method: ConvolutionMethod,
) -> Result<LatticeMeasure, MeasureError> {
    Ok(convolve_raw(mu, nu, method)?.trimmed(WEIGHT_FLOOR))
}

/// Convolution without truncation; negative FFT round-off is still clamped.
pub fn convolve_raw(
    mu: &LatticeMeasure,
    nu: &LatticeMeasure,
    method: ConvolutionMethod,
) -> Result<LatticeMeasure, MeasureError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch(mu.dim(), nu.dim()));
    }
    let d = mu.dim();
    let mut spacing = Vec::with_capacity(d);
    for a in 0..d {
        spacing.push(shared_spacing(mu, nu, a)?);
    }
    let offset: Vec<f64> = mu.offset().iter().zip(nu.offset()).map(|(x, y)| x + y).collect();
    let shape: Vec<usize> = mu.shape().iter().zip(nu.shape()).map(|(a, b)| a + b - 1).collect();

    // A 2-d grid is flattened with a row stride wide enough that the 1-d
    // convolution never wraps between rows.
    let stride = if d == 1 { 1 } else { shape[1] };
    let (fa, fb) = if d == 1 {
        (mu.weights().to_vec(), nu.weights().to_vec())
    } else {
        (restride(mu, stride), restride(nu, stride))
    };
    let same = std::ptr::eq(mu, nu);
    let use_fft = match method {
        ConvolutionMethod::Direct => false,
        ConvolutionMethod::Fft => true,
        ConvolutionMethod::Auto => {
            fa.len().min(fb.len()) >= FFT_MIN_LEN && fa.len().saturating_mul(fb.len()) >= FFT_MIN_WORK
        }
    };
    let flat = if use_fft {
        fft_convolve(&fa, &fb, same)
    } else {
        direct_convolve(&fa, &fb)
    };

    let total: usize = shape.iter().product();
    let mut weights = if d == 1 {
        flat
    } else {
        let mut w = flat;
        w.resize(total, 0.0);
        w
    };
    weights.truncate(total);
    for w in &mut weights {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    Ok(LatticeMeasure::from_parts_unchecked(spacing, offset, shape, weights))
}

fn shared_spacing(mu: &LatticeMeasure, nu: &LatticeMeasure, axis: usize) -> Result<f64, MeasureError> {
    let (a, b) = (mu.spacing()[axis], nu.spacing()[axis]);
    // A single atom on an axis sits on every lattice.
    if nu.shape()[axis] == 1 {
        return Ok(a);
    }
    if mu.shape()[axis] == 1 {
        return Ok(b);
    }
    if (a - b).abs() <= SPACING_REL_TOL * a.max(b) {
        Ok(a)
    } else {
        Err(MeasureError::IncommensurableLattices(format!(
            "axis {axis}: spacing {a} vs {b}"
        )))
    }
}

fn restride(m: &LatticeMeasure, stride: usize) -> Vec<f64> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut out = vec![0.0; (r - 1) * stride + c];
    for i in 0..r {
        out[i * stride..i * stride + c].copy_from_slice(&m.weights()[i * c..(i + 1) * c]);
    }
    out
}

pub(crate) fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

pub(crate) fn fft_convolve(a: &[f64], b: &[f64], same: bool) -> Vec<f64> {
    let n_out = a.len() + b.len() - 1;
    let n = n_out.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let lift = |v: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (slot, &x) in buf.iter_mut().zip(v) {
            slot.re = x;
        }
        buf
    };
    let mut fa = lift(a);
    forward.process(&mut fa);
    if same {
        for z in &mut fa {
            *z = *z * *z;
        }
    } else {
        let mut fb = lift(b);
        forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x *= y;
        }
    }
    inverse.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..n_out].iter().map(|z| z.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_line(rng: &mut ChaCha8Rng, n: usize) -> LatticeMeasure {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = w.iter().sum();
        LatticeMeasure::line(0.25, rng.gen_range(-3.0..3.0), w.iter().map(|x| x / s).collect()).unwrap()
    }

    #[test]
    fn diracs_translate() {
        let a = LatticeMeasure::dirac(&[1.5]).unwrap();
        let b = LatticeMeasure::dirac(&[-0.25]).unwrap();
        assert_eq!(convolve(&a, &b).unwrap().atoms(), vec![(vec![1.25], 1.0)]);
    }

    #[test]
    fn rademacher_square_by_enumeration() {
        let r = LatticeMeasure::rademacher();
        let rr = convolve(&r, &r).unwrap();
        // Four equally likely sign pairs: sums −2, 0, 0, +2.
        assert_eq!(rr.atoms(), vec![(vec![-2.0], 0.25), (vec![0.0], 0.5), (vec![2.0], 0.25)]);
    }

    #[test]
    fn fft_agrees_with_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, m) in &[(1usize, 5usize), (70, 130), (300, 257), (1000, 1)] {
            let a = random_line(&mut rng, n);
            let b = random_line(&mut rng, m);
            let d = convolve_raw(&a, &b, ConvolutionMethod::Direct).unwrap();
            let f = convolve_raw(&a, &b, ConvolutionMethod::Fft).unwrap();
            assert_eq!(d.shape(), f.shape());
            let gap = d.weights().iter().zip(f.weights()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-10, "gap {gap}");
        }
    }

    #[test]
    fn two_dimensional_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = LatticeMeasure::product(&random_line(&mut rng, 3), &random_line(&mut rng, 4)).unwrap();
        let y = LatticeMeasure::product(&random_line(&mut rng, 2), &random_line(&mut rng, 5)).unwrap();
        for method in [ConvolutionMethod::Direct, ConvolutionMethod::Fft] {
            let z = convolve_raw(&x, &y, method).unwrap();
            assert_eq!(z.shape(), &[4, 8]);
            let mut brute = vec![0.0; 32];
            for (i, &wx) in x.weights().iter().enumerate() {
                for (j, &wy) in y.weights().iter().enumerate() {
                    let (r, c) = (i / 4 + j / 5, i % 4 + j % 5);
                    brute[r * 8 + c] += wx * wy;
                }
            }
            for (a, b) in z.weights().iter().zip(&brute) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn moments_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_line(&mut rng, 9);
        let b = random_line(&mut rng, 6);
        let c = convolve(&a, &b).unwrap();
        assert!((c.mass() - 1.0).abs() < 1e-12);
        assert!((c.mean()[0] - a.mean()[0] - b.mean()[0]).abs() < 1e-10);
        assert!((c.covariance()[0] - a.covariance()[0] - b.covariance()[0]).abs() < 1e-10);
    }

    #[test]
    fn mismatched_spacing_rejected() {
        let a = LatticeMeasure::line(1.0, 0.0, vec![0.5, 0.5]).unwrap();
        let b = LatticeMeasure::line(0.7, 0.0, vec![0.5, 0.5]).unwrap();
        assert!(matches!(convolve(&a, &b), Err(MeasureError::IncommensurableLattices(_))));
        // One-atom axes adopt the other spacing.
        let c = LatticeMeasure::dirac(&[0.3]).unwrap();
        assert_eq!(convolve(&c, &b).unwrap().spacing(), &[0.7]);
    }
}
