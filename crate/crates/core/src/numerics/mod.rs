//! Numerical substrate: tensors, FFTs, CG, Adam and random streams.

mod adam;
mod cg;
mod fft;
pub mod rng;
mod tensor;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cg::{cg_solve, CgOutcome};
pub(crate) use fft::{transform_columns, transform_planes};
pub use fft::{fft2c, ifft2c};
pub use rng::RngStream;
pub use tensor::{ComplexTensor, RealTensor};

use crate::error::{invalid, Result};

/// Circularly-symmetric complex Gaussian samples with `E|z|^2 = sigma^2`.
pub fn draw_complex_gaussian(rng: &mut RngStream, shape: &[usize], sigma: f64) -> Result<ComplexTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let s = sigma / std::f64::consts::SQRT_2;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(s * re, s * im)
        })
        .collect();
    ComplexTensor::from_vec(shape, data)
}
