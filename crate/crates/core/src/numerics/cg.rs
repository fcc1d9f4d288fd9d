use super::tensor::ComplexTensor;
use crate::error::{shape_err, Error, Result};

/// Result of a conjugate-gradient run.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: ComplexTensor,
    pub iterations: usize,
    /// Euclidean norm of the final residual `rhs - A x`.
    pub residual_norm: f64,
}

/// Conjugate gradients for a Hermitian positive-definite operator, started from zero.
///
/// Stops after `max_iters` steps or once the residual norm drops to
/// `tol * |rhs|`, whichever comes first.
pub fn cg_solve<F>(mut apply: F, rhs: &ComplexTensor, max_iters: usize, tol: f64) -> Result<CgOutcome>
where
    F: FnMut(&ComplexTensor) -> Result<ComplexTensor>,
{
    rhs.check_finite("CG right-hand side")?;
    let mut x = ComplexTensor::zeros(rhs.shape());
    let mut r = rhs.clone();
    let mut rr = r.norm_sqr();
    let stop = tol * rhs.norm();
    let mut iterations = 0;
    if rr == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations,
            residual_norm: 0.0,
        });
    }
    let mut p = r.clone();
    while iterations < max_iters {
        let ap = apply(&p)?;
        if ap.shape() != p.shape() {
            return Err(shape_err(format!(
                "CG operator returned {:?} for input {:?}",
                ap.shape(),
                p.shape()
            )));
        }
        let curvature = p.real_dot(&ap);
        if !curvature.is_finite() {
            return Err(Error::NonFinite("CG curvature".into()));
        }
        if curvature <= 0.0 {
            break;
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_next = r.norm_sqr();
        iterations += 1;
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("CG residual".into()));
        }
        if rr_next.sqrt() <= stop {
            rr = rr_next;
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (pv, rv) in p.data_mut().iter_mut().zip(r.data()) {
            *pv = rv + *pv * beta;
        }
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
        residual_norm: rr.sqrt(),
    })
}
