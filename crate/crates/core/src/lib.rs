//! Multi-shot diffusion MRI reconstruction.
//!
//! The crate builds a synthetic multi-direction, multi-shot EPI acquisition,
//! reconstructs it with per-shot CG-SENSE or with an unrolled scheme that
//! alternates conjugate-gradient data consistency with residual CNN denoisers
//! in image space and k-space (both seen through a virtual-coil expansion),
//! and trains those denoisers scan-specifically by splitting the sampled
//! phase-encode lines into nested subsets.
//!
//! Module map:
//! - [`numerics`]: complex tensors, centered FFTs, CG, Adam, seeded RNG streams
//! - [`simulate`]: phantom, coil maps, shot phases, line masks, noisy k-space
//! - [`operators`]: SENSE encoding, its adjoint and normal operator, virtual coils
//! - [`denoiser`]: 3x3 convolutional residual nets with hand-written backprop
//! - [`recon`]: CG-SENSE, the unrolled reconstruction and its reverse pass
//! - [`ssltrain`]: mask splitting, self-supervised losses, training and inference
//! - [`metrics`]: NRMSE/NMAE, mean DWI, tensor fitting, FA
//! - [`io`]: run configuration, the `MIRIDSET` container, PGM export
//! - [`cli`]: the `mirid` subcommands

pub mod cli;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod operators;
pub mod recon;
pub mod simulate;
pub mod ssltrain;

pub use error::{Error, Result};
pub use num_complex::Complex64;
