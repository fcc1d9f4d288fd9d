//! Reconstruction engines: per-shot CG-SENSE and the unrolled scheme that
//! alternates a CG data-consistency solve with image- and k-space denoisers
//! applied to the virtual-coil expanded shots.
//!
//! One unrolled iteration, with `lambda = lambda1 + lambda2`:
//!
//! ```text
//! x[n+1]    = (A^H A + lambda I)^-1 (A^H b + lambda1 eta[n] + lambda2 zeta[n])
//! eta[n+1]  = Vc^H D_i(Vc x[n+1])
//! zeta[n+1] = Vc^H F^H D_k(F Vc x[n+1])
//! ```
//!
//! starting from `x[0] = eta[0] = zeta[0] = A^H b`.

use serde::{Deserialize, Serialize};

use crate::denoiser::{net_backward, net_forward, DenoiserNet, NetGradients, NetShape, NetTape};
use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{cg_solve, fft2c, ifft2c, ComplexTensor, RealTensor, RngStream};
use crate::operators::{vc_expand, vc_reduce, CoilSensitivities, Encoding, KSpaceData, ShotImageStack, ShotMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    /// Joint reconstruction of all shots with one denoiser pair.
    Mirid,
    /// Each shot reconstructed alone with its own denoiser pair.
    Sirid,
    /// Per-shot CG-SENSE, no learning.
    Sense,
}

impl std::str::FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirid" => Ok(Self::Mirid),
            "sirid" => Ok(Self::Sirid),
            "sense" => Ok(Self::Sense),
            other => Err(invalid(format!("unknown method '{other}' (expected sense, mirid or sirid)"))),
        }
    }
}

impl std::fmt::Display for ReconMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mirid => "mirid",
            Self::Sirid => "sirid",
            Self::Sense => "sense",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub unroll_count: usize,
    pub cg_steps: usize,
    pub cg_tol: f64,
    /// Tikhonov weight of the CG-SENSE baseline.
    pub sense_tikhonov: f64,
    pub hidden: usize,
    pub depth: usize,
    pub alpha: f64,
    pub mode: ReconMode,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            lambda2: 0.05,
            unroll_count: 10,
            cg_steps: 10,
            cg_tol: 1e-10,
            sense_tikhonov: 0.0,
            hidden: 16,
            depth: 4,
            alpha: 0.01,
            mode: ReconMode::Mirid,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(invalid("lambda1 and lambda2 must be positive"));
        }
        if self.unroll_count == 0 || self.cg_steps == 0 || self.depth == 0 {
            return Err(invalid("unroll_count, cg_steps and depth must be >= 1"));
        }
        if !(self.sense_tikhonov >= 0.0) || !(self.cg_tol >= 0.0) {
            return Err(invalid("sense_tikhonov and cg_tol must be >= 0"));
        }
        Ok(())
    }

    pub fn lambda_total(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    /// Architecture of both denoisers for stacks of `nshots` shots.
    pub fn net_shape(&self, nshots: usize) -> NetShape {
        NetShape {
            channels: 2 * nshots,
            hidden: self.hidden,
            depth: self.depth,
            alpha: self.alpha,
        }
    }
}

/// Image-domain and k-space denoisers; never share parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoisers {
    pub image: DenoiserNet,
    pub kspace: DenoiserNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserGradients {
    pub image: NetGradients,
    pub kspace: NetGradients,
}

impl DenoiserGradients {
    pub fn zeros_like(nets: &Denoisers) -> Self {
        Self {
            image: NetGradients::zeros_like(&nets.image),
            kspace: NetGradients::zeros_like(&nets.kspace),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.image.flatten();
        v.extend(self.kspace.flatten());
        v
    }
}

impl Denoisers {
    pub fn init(shape: &NetShape, rng: &mut RngStream) -> Result<Self> {
        let image = DenoiserNet::init(shape, &mut rng.substream(0))?;
        let kspace = DenoiserNet::init(shape, &mut rng.substream(1))?;
        Ok(Self { image, kspace })
    }

    pub fn channels(&self) -> usize {
        self.image.channels()
    }

    pub fn parameter_count(&self) -> usize {
        self.image.parameter_count() + self.kspace.parameter_count()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut v = self.image.parameters();
        v.extend(self.kspace.parameters());
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let n = self.image.parameter_count();
        if params.len() != self.parameter_count() {
            return Err(shape_err(format!("{} parameters for {}", params.len(), self.parameter_count())));
        }
        self.image.set_parameters(&params[..n])?;
        self.kspace.set_parameters(&params[n..])
    }
}

/// Per-shot CG-SENSE: `(A_m^H A_m + tikhonov I) x_m = A_m^H b_m`, shots solved independently.
pub fn sense_recon(
    b: &KSpaceData,
    coils: &CoilSensitivities,
    mask: &ShotMask,
    tikhonov: f64,
    cg_steps: usize,
    cg_tol: f64,
) -> Result<ShotImageStack> {
    let enc = Encoding::new(coils, mask)?;
    if b.shape() != enc.kspace_shape() {
        return Err(shape_err(format!("k-space {:?} vs {:?}", b.shape(), enc.kspace_shape())));
    }
    let shots = (0..mask.nshots())
        .map(|m| {
            let shot_mask = mask.shot(m);
            let enc = Encoding::new(coils, &shot_mask)?;
            let bm = shot_kspace(b, m)?;
            let rhs = enc.adjoint(&bm)?;
            let out = cg_solve(|v| enc.normal(v, tikhonov), &rhs, cg_steps, cg_tol)?;
            Ok(out.solution.take_slab(0))
        })
        .collect::<Result<Vec<_>>>()?;
    ComplexTensor::stack(&shots)
}

/// The `[1, ncoils, ny, nx]` data of one shot.
pub fn shot_kspace(b: &KSpaceData, shot: usize) -> Result<KSpaceData> {
    let mut shape = b.shape().to_vec();
    shape[0] = 1;
    ComplexTensor::from_vec(&shape, b.slab(shot).to_vec())
}

/// Approximate solve of `(A^H A + lambda I) x = rhs` by CG from zero.
pub fn dc_solve(
    rhs: &ShotImageStack,
    enc: &Encoding<'_>,
    lambda_total: f64,
    cg_steps: usize,
    cg_tol: f64,
) -> Result<ShotImageStack> {
    if !(lambda_total > 0.0) {
        return Err(invalid(format!("data-consistency weight must be > 0, got {lambda_total}")));
    }
    Ok(cg_solve(|v| enc.normal(v, lambda_total), rhs, cg_steps, cg_tol)?.solution)
}

/// Denoiser activations of one unrolled forward pass.
#[derive(Clone, Debug)]
pub struct MiridTape {
    unrolls: usize,
    image_shape: Vec<usize>,
    image: Vec<NetTape>,
    kspace: Vec<NetTape>,
}

/// `D u = u - N u` for a denoiser net.
fn denoise(u: &ComplexTensor, net: &DenoiserNet) -> Result<(ComplexTensor, NetTape)> {
    let (residual, tape) = net_forward(u, net)?;
    let mut out = u.clone();
    out.axpy(-1.0, &residual);
    Ok((out, tape))
}

/// Unrolled forward pass; `b` must already be restricted to the encoding's mask.
pub fn mirid_forward(
    b: &KSpaceData,
    enc: &Encoding<'_>,
    nets: &Denoisers,
    cfg: &ReconConfig,
) -> Result<(ShotImageStack, MiridTape)> {
    if nets.channels() != 2 * enc.mask().nshots() {
        return Err(shape_err(format!(
            "denoisers take {} channels, {} shots need {}",
            nets.channels(),
            enc.mask().nshots(),
            2 * enc.mask().nshots()
        )));
    }
    let y0 = enc.adjoint(b)?;
    let lam = cfg.lambda_total();
    let mut x = y0.clone();
    let mut eta = y0.clone();
    let mut zeta = y0.clone();
    let mut tape = MiridTape {
        unrolls: cfg.unroll_count,
        image_shape: y0.shape().to_vec(),
        image: Vec::new(),
        kspace: Vec::new(),
    };
    for n in 0..cfg.unroll_count {
        let mut rhs = y0.clone();
        rhs.axpy(cfg.lambda1, &eta);
        rhs.axpy(cfg.lambda2, &zeta);
        x = dc_solve(&rhs, enc, lam, cfg.cg_steps, cfg.cg_tol)?;
        if n + 1 == cfg.unroll_count {
            // the auxiliaries of the last iteration never reach the output
            break;
        }
        let u = vc_expand(&x);
        let (di, ti) = denoise(&u, &nets.image)?;
        eta = vc_reduce(&di)?;
        let (dk, tk) = denoise(&fft2c(&u)?, &nets.kspace)?;
        zeta = vc_reduce(&ifft2c(&dk)?)?;
        tape.image.push(ti);
        tape.kspace.push(tk);
    }
    x.check_finite("unrolled reconstruction")?;
    Ok((x, tape))
}

/// Reverse pass of [`mirid_forward`]: parameter gradients of `Re<grad_x, x_rec>`.
///
/// The data-consistency adjoint reuses the self-adjoint forward system with the
/// same CG budget; the regularization weights are fixed and get no gradient.
pub fn mirid_backward(
    grad_x: &ShotImageStack,
    tape: &MiridTape,
    enc: &Encoding<'_>,
    nets: &Denoisers,
    cfg: &ReconConfig,
) -> Result<DenoiserGradients> {
    if tape.unrolls != cfg.unroll_count
        || tape.image.len() != cfg.unroll_count.saturating_sub(1)
        || grad_x.shape() != tape.image_shape.as_slice()
    {
        return Err(Error::StaleTape(format!(
            "tape of {} unrolls over {:?} used with {} unrolls and gradient {:?}",
            tape.unrolls,
            tape.image_shape,
            cfg.unroll_count,
            grad_x.shape()
        )));
    }
    let mut grads = DenoiserGradients::zeros_like(nets);
    let lam = cfg.lambda_total();
    let mut g = grad_x.clone();
    for n in (1..cfg.unroll_count).rev() {
        let r = dc_solve(&g, enc, lam, cfg.cg_steps, cfg.cg_tol)?;

        // eta[n] = Vc^H (u - N_i u), u = Vc x[n]
        let g_di = vc_expand(&r.scaled(cfg.lambda1));
        let (gin, gi) = net_backward(&g_di.scaled(-1.0), &tape.image[n - 1], &nets.image)?;
        let mut gu = g_di;
        gu.axpy(1.0, &gin);
        let mut next = vc_reduce(&gu)?;

        // zeta[n] = Vc^H F^H (k - N_k k), k = F Vc x[n]
        let g_dk = fft2c(&vc_expand(&r.scaled(cfg.lambda2)))?;
        let (gin, gk) = net_backward(&g_dk.scaled(-1.0), &tape.kspace[n - 1], &nets.kspace)?;
        let mut gk_in = g_dk;
        gk_in.axpy(1.0, &gin);
        next.axpy(1.0, &vc_reduce(&ifft2c(&gk_in)?)?);

        grads.image.accumulate(&gi);
        grads.kspace.accumulate(&gk);
        g = next;
    }
    Ok(grads)
}

/// Net-free proximal iteration `x[n+1] = (A^H A + lambda I)^-1 (A^H b + lambda x[n])`.
pub fn proximal_recon(b: &KSpaceData, enc: &Encoding<'_>, cfg: &ReconConfig) -> Result<ShotImageStack> {
    let y0 = enc.adjoint(b)?;
    let lam = cfg.lambda_total();
    let mut x = y0.clone();
    for _ in 0..cfg.unroll_count {
        let mut rhs = y0.clone();
        rhs.axpy(lam, &x);
        x = dc_solve(&rhs, enc, lam, cfg.cg_steps, cfg.cg_tol)?;
    }
    Ok(x)
}

/// Final magnitude image: mean over shots of `|x_m|`.
pub fn combine_shots(x: &ShotImageStack) -> Result<RealTensor> {
    let s = x.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(shape_err(format!("expected [nshots, ny, nx], got {:?}", s)));
    }
    let mut out = RealTensor::zeros(&s[1..]);
    for m in 0..s[0] {
        for (o, v) in out.data_mut().iter_mut().zip(x.slab(m)) {
            *o += v.norm();
        }
    }
    let inv = 1.0 / s[0] as f64;
    for o in out.data_mut() {
        *o *= inv;
    }
    Ok(out)
}
