//! Centered, orthonormal 2-D DFTs over the last two axes.
//!
//! Both the image and the spectrum keep their origin at index `n / 2` on
//! each axis, and the forward transform is scaled by `1 / sqrt(ny * nx)` so
//! it is unitary.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::tensor::ComplexTensor;
use crate::error::{shape_err, Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Centered 1-D DFT of every length-`n` line addressed by `start + i * stride`.
struct LineTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl LineTransform {
    fn new(n: usize, inverse: bool) -> Self {
        let fft = plan(n, inverse);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            n,
            fft,
            buf: vec![Complex64::default(); n],
            scratch,
        }
    }

    fn apply(&mut self, data: &mut [Complex64], start: usize, stride: usize) {
        let n = self.n;
        let c = n / 2;
        for j in 0..n {
            self.buf[j] = data[start + ((j + c) % n) * stride];
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for k in 0..n {
            data[start + k * stride] = self.buf[(k + n - c) % n];
        }
    }
}

/// Transforms every `ny x nx` plane of `data` in place.
pub(crate) fn transform_planes(data: &mut [Complex64], ny: usize, nx: usize, inverse: bool) {
    let plane = ny * nx;
    let scale = 1.0 / (plane as f64).sqrt();
    let mut rows = LineTransform::new(nx, inverse);
    let mut cols = LineTransform::new(ny, inverse);
    for slice in data.chunks_exact_mut(plane) {
        for y in 0..ny {
            rows.apply(slice, y * nx, 1);
        }
        for x in 0..nx {
            cols.apply(slice, x, nx);
        }
        for v in slice.iter_mut() {
            *v *= scale;
        }
    }
}

/// Centered 1-D transform along the second-to-last axis only (phase-encode direction), unitary.
pub(crate) fn transform_columns(data: &mut [Complex64], ny: usize, nx: usize, inverse: bool) {
    let plane = ny * nx;
    let scale = 1.0 / (ny as f64).sqrt();
    let mut cols = LineTransform::new(ny, inverse);
    for slice in data.chunks_exact_mut(plane) {
        for x in 0..nx {
            cols.apply(slice, x, nx);
        }
        for v in slice.iter_mut() {
            *v *= scale;
        }
    }
}

fn planes(x: &ComplexTensor) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(shape_err(format!("2-D transform needs rank >= 2, got {:?}", s)));
    }
    let (ny, nx) = (s[s.len() - 2], s[s.len() - 1]);
    if ny == 0 || nx == 0 {
        return Err(shape_err(format!("empty transform axes in {:?}", s)));
    }
    Ok((ny, nx))
}

fn run(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let (ny, nx) = planes(x)?;
    if !x.is_finite() {
        return Err(Error::NonFinite("FFT input".into()));
    }
    let mut out = x.clone();
    transform_planes(out.data_mut(), ny, nx, inverse);
    Ok(out)
}

/// Forward centered orthonormal 2-D DFT over the last two axes.
pub fn fft2c(x: &ComplexTensor) -> Result<ComplexTensor> {
    run(x, false)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(k: &ComplexTensor) -> Result<ComplexTensor> {
    run(k, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;
    use crate::numerics::draw_complex_gaussian;

    fn rel(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.norm() / b.norm()
    }

    /// Direct O(n^2) centered DFT used as an independent reference.
    fn naive_dft2c(x: &ComplexTensor) -> ComplexTensor {
        let (ny, nx) = (x.shape()[0], x.shape()[1]);
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        let mut out = ComplexTensor::zeros(x.shape());
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::default();
                for y in 0..ny {
                    for xx in 0..nx {
                        let ph = -2.0 * std::f64::consts::PI
                            * ((ky as f64 - cy) * (y as f64 - cy) / ny as f64
                                + (kx as f64 - cx) * (xx as f64 - cx) / nx as f64);
                        acc += x.data()[y * nx + xx] * Complex64::from_polar(1.0, ph);
                    }
                }
                out.data_mut()[ky * nx + kx] = acc / ((ny * nx) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn impulse_at_center_is_flat() {
        let mut x = ComplexTensor::zeros(&[64, 64]);
        x.data_mut()[32 * 64 + 32] = Complex64::new(1.0, 0.0);
        let k = fft2c(&x).unwrap();
        for v in k.data() {
            assert!((v - Complex64::new(1.0 / 64.0, 0.0)).norm() < 1e-15);
        }
        let back = ifft2c(&k).unwrap();
        assert!(rel(&back, &x) < 1e-12);
    }

    #[test]
    fn matches_direct_dft_on_odd_and_even_sizes() {
        let mut rng = RngStream::new(3);
        for &(ny, nx) in &[(5, 7), (6, 4), (1, 3), (8, 8)] {
            let x = draw_complex_gaussian(&mut rng, &[ny, nx], 1.0).unwrap();
            let fast = fft2c(&x).unwrap();
            let slow = naive_dft2c(&x);
            assert!(rel(&fast, &slow) < 1e-12, "{ny}x{nx}");
        }
    }

    #[test]
    fn round_trip_and_parseval_on_batches() {
        let mut rng = RngStream::new(11);
        let x = draw_complex_gaussian(&mut rng, &[3, 16, 12], 1.0).unwrap();
        let k = fft2c(&x).unwrap();
        assert!((k.norm() - x.norm()).abs() / x.norm() < 1e-12);
        assert!(rel(&ifft2c(&k).unwrap(), &x) < 1e-12);
        assert!(rel(&fft2c(&ifft2c(&x).unwrap()).unwrap(), &x) < 1e-12);
    }

    #[test]
    fn conjugate_symmetric_spectrum_gives_real_image() {
        let mut rng = RngStream::new(5);
        let n = 16;
        let re = draw_complex_gaussian(&mut rng, &[n, n], 1.0).unwrap();
        let real_img = ComplexTensor::from_vec(
            &[n, n],
            re.data().iter().map(|v| Complex64::new(v.re, 0.0)).collect(),
        )
        .unwrap();
        let k = fft2c(&real_img).unwrap();
        let img = ifft2c(&k).unwrap();
        assert!(img.data().iter().all(|v| v.im.abs() <= 1e-12));
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut x = ComplexTensor::zeros(&[4, 4]);
        x.data_mut()[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(fft2c(&x), Err(Error::NonFinite(_))));
        assert!(fft2c(&ComplexTensor::zeros(&[4])).is_err());
    }

    #[test]
    fn column_transform_matches_full_transform_on_column_constant_data() {
        let mut rng = RngStream::new(8);
        let col = draw_complex_gaussian(&mut rng, &[8], 1.0).unwrap();
        let (ny, nx) = (8, 4);
        let mut x = ComplexTensor::zeros(&[ny, nx]);
        for y in 0..ny {
            x.data_mut()[y * nx + nx / 2] = col.data()[y];
        }
        // impulse along x at the center: a 2-D transform is the 1-D column transform scaled by 1/sqrt(nx)
        let full = fft2c(&x).unwrap();
        let mut partial = x.clone();
        transform_columns(partial.data_mut(), ny, nx, false);
        for y in 0..ny {
            let expect = partial.data()[y * nx + nx / 2] / (nx as f64).sqrt();
            for kx in 0..nx {
                assert!((full.data()[y * nx + kx] - expect).norm() < 1e-13);
            }
        }
    }
}
