//! Real-signal discrete Fourier transform with the cosine/sine split
//!
//! ```text
//! A_k = Σ_n s_n cos(2πkn/N)      B_k = Σ_n s_n sin(2πkn/N)
//! s_n = (1/N) Σ_k (A_k cos(2πnk/N) + B_k sin(2πnk/N))
//! ```
//!
//! so the complex coefficient is `S_k = A_k − i·B_k`. Indices run over
//! `0..N`. All `N` bins are kept even though a real signal only needs about
//! half of them, because the attention layers mix `A` and `B` as full-width
//! matrices.
//!
//! Three routes compute the same transform: the `naive_*` double loops (the
//! reference), the FFT-backed [`dft`]/[`idft`], and [`FourierBasis`], which
//! expresses the transform as a dense matrix so a whole batch of embedding
//! rows goes through one GEMM.

use std::f64::consts::PI;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_traits::{Float, FromPrimitive};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Cosine sums `A`.
    pub real: Array1<f64>,
    /// Sine sums `B`.
    pub imag: Array1<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    pub fn magnitude(&self) -> Array1<f64> {
        ndarray::Zip::from(&self.real)
            .and(&self.imag)
            .map_collect(|a, b| a.hypot(*b))
    }
}

/// Per-row spectra of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSpectrum {
    pub real: Array2<f64>,
    pub imag: Array2<f64>,
}

/// `2π·((k·n) mod N)/N`; reducing the product first keeps the angle small.
fn twiddle_angle(k: usize, n: usize, len: usize) -> f64 {
    2.0 * PI * ((k * n) % len) as f64 / len as f64
}

fn check_signal(signal: ArrayView1<'_, f64>) -> Result<()> {
    if signal.is_empty() {
        return Err(Error::structural("cannot transform an empty signal"));
    }
    Ok(())
}

fn check_spectrum(real: &[usize], imag: &[usize]) -> Result<()> {
    if real != imag {
        return Err(Error::structural(format!(
            "spectrum parts disagree: real {real:?}, imaginary {imag:?}"
        )));
    }
    if real.contains(&0) {
        return Err(Error::structural("cannot invert an empty spectrum"));
    }
    Ok(())
}

/// Reference `O(N²)` transform.
pub fn naive_dft(signal: ArrayView1<'_, f64>) -> Result<Spectrum> {
    check_signal(signal)?;
    let n = signal.len();
    let mut real = Array1::zeros(n);
    let mut imag = Array1::zeros(n);
    for k in 0..n {
        let (mut a, mut b) = (0.0, 0.0);
        for (i, s) in signal.iter().enumerate() {
            let theta = twiddle_angle(k, i, n);
            a += s * theta.cos();
            b += s * theta.sin();
        }
        real[k] = a;
        imag[k] = b;
    }
    Ok(Spectrum { real, imag })
}

/// Reference `O(N²)` inverse.
pub fn naive_idft(spec: &Spectrum) -> Result<Array1<f64>> {
    check_spectrum(&[spec.real.len()], &[spec.imag.len()])?;
    let n = spec.len();
    let scale = 1.0 / n as f64;
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..n {
                let theta = twiddle_angle(i, k, n);
                acc += spec.real[k] * theta.cos() + spec.imag[k] * theta.sin();
            }
            acc * scale
        })
        .collect())
}

pub fn dft(signal: ArrayView1<'_, f64>) -> Result<Spectrum> {
    check_signal(signal)?;
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&s| Complex::new(s, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    // rustfft computes Σ s·e^{-iθ} = A − iB.
    Ok(Spectrum {
        real: buf.iter().map(|c| c.re).collect(),
        imag: buf.iter().map(|c| -c.im).collect(),
    })
}

pub fn idft(spec: &Spectrum) -> Result<Array1<f64>> {
    check_spectrum(&[spec.real.len()], &[spec.imag.len()])?;
    let n = spec.len();
    let mut buf: Vec<Complex<f64>> = spec
        .real
        .iter()
        .zip(spec.imag.iter())
        .map(|(&a, &b)| Complex::new(a, -b))
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

/// Transforms every row independently.
pub fn dft_rows(mat: ArrayView2<'_, f64>) -> Result<RowSpectrum> {
    let (rows, n) = mat.dim();
    if n == 0 {
        return Err(Error::structural("cannot transform rows of width zero"));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut real = Array2::zeros((rows, n));
    let mut imag = Array2::zeros((rows, n));
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (h, row) in mat.axis_iter(Axis(0)).enumerate() {
        for (c, &s) in buf.iter_mut().zip(row.iter()) {
            *c = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            real[(h, k)] = c.re;
            imag[(h, k)] = -c.im;
        }
    }
    Ok(RowSpectrum { real, imag })
}

pub fn idft_rows(spec: &RowSpectrum) -> Result<Array2<f64>> {
    check_spectrum(spec.real.shape(), spec.imag.shape())?;
    let (rows, n) = spec.real.dim();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / n as f64;
    let mut out = Array2::zeros((rows, n));
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for h in 0..rows {
        for k in 0..n {
            buf[k] = Complex::new(spec.real[(h, k)], -spec.imag[(h, k)]);
        }
        ifft.process(&mut buf);
        for i in 0..n {
            out[(h, i)] = buf[i].re * scale;
        }
    }
    Ok(out)
}

/// Dense transform matrices for applying the DFT to many rows at once.
///
/// `forward` is `[Cos | Sin]` of shape `(N, 2N)`, so `X·forward = [A | B]`.
/// `inverse` is `[Cos ; Sin] / N` of shape `(2N, N)`, so `[A | B]·inverse = X`.
/// Both matrices are built in `f64` and rounded once to `T`.
#[derive(Debug, Clone)]
pub struct FourierBasis<T> {
    len: usize,
    forward: Array2<T>,
    inverse: Array2<T>,
}

impl<T: Float + FromPrimitive> FourierBasis<T> {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "Fourier basis needs a positive length");
        let cos = Array2::from_shape_fn((len, len), |(n, k)| twiddle_angle(n, k, len).cos());
        let sin = Array2::from_shape_fn((len, len), |(n, k)| twiddle_angle(n, k, len).sin());
        let forward = concatenate![Axis(1), cos, sin];
        let inverse = concatenate![Axis(0), cos, sin] / len as f64;
        let cast = |m: Array2<f64>| m.mapv(|v| T::from_f64(v).expect("finite basis entry"));
        FourierBasis {
            len,
            forward: cast(forward),
            inverse: cast(inverse),
        }
    }
}

impl<T> FourierBasis<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self) -> &Array2<T> {
        &self.forward
    }

    pub fn inverse(&self) -> &Array2<T> {
        &self.inverse
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
    }

    fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_signal_is_pure_dc() {
        let s = Array1::from_elem(6, 2.5);
        let spec = dft(s.view()).unwrap();
        assert!((spec.real[0] - 15.0).abs() < 1e-12);
        for k in 1..6 {
            assert!(spec.real[k].abs() < 1e-12 && spec.imag[k].abs() < 1e-12);
        }
        assert!(spec.imag[0].abs() < 1e-12);
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let spec = dft(array![1.0, 0.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(spec.real, array![1.0, 1.0, 1.0, 1.0]);
        assert!(spec.imag.iter().all(|b| b.abs() < 1e-15));
    }

    #[test]
    fn sine_sums_carry_positive_sign() {
        // s = (0, 1, 0, 0): B_k = sin(2πk/4).
        let spec = naive_dft(array![0.0, 1.0, 0.0, 0.0].view()).unwrap();
        let expected = array![0.0, 1.0, 0.0, -1.0];
        assert!(max_abs_diff(&spec.imag, &expected) < 1e-15);
        let fast = dft(array![0.0, 1.0, 0.0, 0.0].view()).unwrap();
        assert!(max_abs_diff(&fast.imag, &expected) < 1e-15);
    }

    #[test]
    fn random_length_17_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = random_signal(&mut rng, 17);
        let fast = dft(s.view()).unwrap();
        let slow = naive_dft(s.view()).unwrap();
        assert!(max_abs_diff(&fast.real, &slow.real) < 1e-10);
        assert!(max_abs_diff(&fast.imag, &slow.imag) < 1e-10);
    }

    #[test]
    fn inverse_special_cases() {
        let zero = Spectrum {
            real: Array1::zeros(5),
            imag: Array1::zeros(5),
        };
        assert!(idft(&zero).unwrap().iter().all(|v| *v == 0.0));
        let mut real = Array1::zeros(5);
        real[0] = 5.0;
        let dc = Spectrum {
            real,
            imag: Array1::zeros(5),
        };
        assert!(max_abs_diff(&idft(&dc).unwrap(), &Array1::ones(5)) < 1e-15);
        assert!(max_abs_diff(&naive_idft(&dc).unwrap(), &Array1::ones(5)) < 1e-15);
    }

    #[test]
    fn errors_on_empty_and_mismatched() {
        assert!(matches!(dft(Array1::<f64>::zeros(0).view()), Err(Error::Structural(_))));
        assert!(naive_dft(Array1::<f64>::zeros(0).view()).is_err());
        let bad = Spectrum {
            real: Array1::zeros(3),
            imag: Array1::zeros(4),
        };
        assert!(matches!(idft(&bad), Err(Error::Structural(_))));
        let bad_rows = RowSpectrum {
            real: Array2::zeros((2, 3)),
            imag: Array2::zeros((3, 3)),
        };
        assert!(idft_rows(&bad_rows).is_err());
    }

    #[test]
    fn rows_match_per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array::from_shape_fn((5, 16), |_| rng.random_range(-2.0..2.0));
        let rows = dft_rows(m.view()).unwrap();
        for h in 0..5 {
            let oracle = naive_dft(m.row(h)).unwrap();
            assert!(max_abs_diff(&rows.real.row(h).to_owned(), &oracle.real) < 1e-10);
            assert!(max_abs_diff(&rows.imag.row(h).to_owned(), &oracle.imag) < 1e-10);
        }
        let single = dft_rows(m.slice(ndarray::s![2..3, ..])).unwrap();
        assert_eq!(single.real.row(0), rows.real.row(2));
        let back = idft_rows(&rows).unwrap();
        assert!(back.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn row_permutation_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Array::from_shape_fn((4, 9), |_| rng.random_range(-1.0..1.0));
        let order = [2usize, 0, 3, 1];
        let permuted = m.select(Axis(0), &order);
        let a = dft_rows(m.view()).unwrap();
        let b = dft_rows(permuted.view()).unwrap();
        assert_eq!(a.real.select(Axis(0), &order), b.real);
        assert_eq!(a.imag.select(Axis(0), &order), b.imag);
    }

    #[test]
    fn dense_basis_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 7, 16] {
            let basis = FourierBasis::<f64>::new(n);
            let m = Array::from_shape_fn((3, n), |_| rng.random_range(-1.0..1.0));
            let c = m.dot(basis.forward());
            for h in 0..3 {
                let oracle = naive_dft(m.row(h)).unwrap();
                for k in 0..n {
                    assert!((c[(h, k)] - oracle.real[k]).abs() < 1e-12);
                    assert!((c[(h, n + k)] - oracle.imag[k]).abs() < 1e-12);
                }
            }
            let back = c.dot(basis.inverse());
            assert!(back.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    proptest! {
        #[test]
        fn roundtrip_and_parseval(values in proptest::collection::vec(-10.0f64..10.0, 1..64)) {
            let s = Array1::from(values);
            let spec = dft(s.view()).unwrap();
            let back = idft(&spec).unwrap();
            prop_assert!(max_abs_diff(&back, &s) < 1e-9);
            let energy = s.mapv(|v| v * v).sum();
            let spectral = (spec.real.mapv(|a| a * a).sum() + spec.imag.mapv(|b| b * b).sum()) / s.len() as f64;
            prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1e-300));
        }

        #[test]
        fn conjugate_symmetry(values in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let s = Array1::from(values);
            let n = s.len();
            let spec = dft(s.view()).unwrap();
            for k in 0..n {
                let j = (n - k) % n;
                prop_assert!((spec.real[k] - spec.real[j]).abs() < 1e-9);
                prop_assert!((spec.imag[k] + spec.imag[j]).abs() < 1e-9);
            }
        }

        #[test]
        fn linearity(
            pair in (1usize..32).prop_flat_map(|n| (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-3.0f64..3.0, n),
            )),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let x = Array1::from(pair.0);
            let y = Array1::from(pair.1);
            let lhs = dft((&x * a + &y * b).view()).unwrap();
            let dx = dft(x.view()).unwrap();
            let dy = dft(y.view()).unwrap();
            prop_assert!(max_abs_diff(&lhs.real, &(&dx.real * a + &dy.real * b)) < 1e-9);
            prop_assert!(max_abs_diff(&lhs.imag, &(&dx.imag * a + &dy.imag * b)) < 1e-9);
        }

        #[test]
        fn circular_shift_keeps_magnitudes(
            values in proptest::collection::vec(-5.0f64..5.0, 1..48),
            shift in 0usize..48,
        ) {
            let s = Array1::from(values);
            let n = s.len();
            let shifted: Array1<f64> = (0..n).map(|i| s[(i + shift) % n]).collect();
            let m0 = dft(s.view()).unwrap().magnitude();
            let m1 = dft(shifted.view()).unwrap().magnitude();
            prop_assert!(max_abs_diff(&m0, &m1) < 1e-9);
        }
    }
}
