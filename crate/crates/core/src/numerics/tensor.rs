use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};

/// Dense row-major complex array.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

/// Dense row-major real array.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

macro_rules! tensor_common {
    ($ty:ident, $elem:ty, $zero:expr) => {
        impl $ty {
            pub fn zeros(shape: &[usize]) -> Self {
                Self {
                    shape: shape.to_vec(),
                    data: vec![$zero; element_count(shape)],
                }
            }

            pub fn from_vec(shape: &[usize], data: Vec<$elem>) -> Result<Self> {
                if element_count(shape) != data.len() {
                    return Err(shape_err(format!(
                        "{} elements do not fill shape {:?}",
                        data.len(),
                        shape
                    )));
                }
                Ok(Self {
                    shape: shape.to_vec(),
                    data,
                })
            }

            pub fn shape(&self) -> &[usize] {
                &self.shape
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            /// Reinterprets the buffer under a new shape with the same element count.
            pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
                if element_count(shape) != self.data.len() {
                    return Err(shape_err(format!(
                        "cannot reshape {:?} into {:?}",
                        self.shape, shape
                    )));
                }
                self.shape = shape.to_vec();
                Ok(self)
            }

            /// Contiguous sub-block along the leading axis.
            pub fn slab(&self, index: usize) -> &[$elem] {
                let stride = self.data.len() / self.shape[0];
                &self.data[index * stride..(index + 1) * stride]
            }

            pub fn slab_mut(&mut self, index: usize) -> &mut [$elem] {
                let stride = self.data.len() / self.shape[0];
                &mut self.data[index * stride..(index + 1) * stride]
            }

            /// Copies out the `index`-th sub-block along the leading axis.
            pub fn take_slab(&self, index: usize) -> Self {
                Self {
                    shape: self.shape[1..].to_vec(),
                    data: self.slab(index).to_vec(),
                }
            }

            /// Stacks equally shaped tensors along a new leading axis.
            pub fn stack(parts: &[Self]) -> Result<Self> {
                let first = parts
                    .first()
                    .ok_or_else(|| shape_err("cannot stack zero tensors"))?;
                let mut shape = vec![parts.len()];
                shape.extend_from_slice(&first.shape);
                let mut data = Vec::with_capacity(element_count(&shape));
                for p in parts {
                    if p.shape != first.shape {
                        return Err(shape_err(format!(
                            "stack of {:?} with {:?}",
                            first.shape, p.shape
                        )));
                    }
                    data.extend_from_slice(&p.data);
                }
                Ok(Self { shape, data })
            }

            pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
                if self.shape != other.shape {
                    return Err(shape_err(format!("{:?} vs {:?}", self.shape, other.shape)));
                }
                Ok(())
            }
        }
    };
}

tensor_common!(ComplexTensor, Complex64, Complex64::new(0.0, 0.0));
tensor_common!(RealTensor, f64, 0.0);

impl ComplexTensor {
    pub fn from_real(real: &RealTensor) -> Self {
        Self {
            shape: real.shape.clone(),
            data: real.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Complex inner product `sum conj(self) * other`.
    pub fn dot(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Real part of the inner product; the inner product of the underlying real vector space.
    pub fn real_dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.shape, x.shape);
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += v * a;
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn abs(&self) -> RealTensor {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Largest magnitude over all entries.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl RealTensor {
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
