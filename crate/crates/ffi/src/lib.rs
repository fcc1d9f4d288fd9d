//! C ABI over the mirid library.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`MiridStatus`]; on failure [`mirid_last_error`] describes the problem for
//! the calling thread. Panics are caught and reported as
//! [`MiridStatus::Panic`], never unwound into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mirid::io::RunConfig;
use mirid::numerics::{fft2c, ifft2c, ComplexTensor, RealTensor, RngStream};
use mirid::recon::{combine_shots, ReconMode};
use mirid::simulate::{simulate_dataset, SimulatedDataset};
use mirid::ssltrain::Model;
use mirid::{Complex64, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiridStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiridMethod {
    Sense = 0,
    Mirid = 1,
    Sirid = 2,
}

impl From<MiridMethod> for ReconMode {
    fn from(m: MiridMethod) -> Self {
        match m {
            MiridMethod::Sense => ReconMode::Sense,
            MiridMethod::Mirid => ReconMode::Mirid,
            MiridMethod::Sirid => ReconMode::Sirid,
        }
    }
}

/// Geometry of a dataset.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MiridDims {
    /// Volumes including the b=0 one.
    pub volumes: usize,
    pub nshots: usize,
    pub ncoils: usize,
    pub ny: usize,
    pub nx: usize,
}

/// Opaque simulated or loaded acquisition.
pub struct MiridDataset {
    inner: SimulatedDataset,
}

/// Opaque reconstruction model (CG-SENSE, joint or single-shot).
pub struct MiridModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(MiridStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => MiridStatus::Io,
            Error::Format(_) => MiridStatus::Format,
            Error::NonFinite(_) => MiridStatus::Numerical,
            _ => MiridStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MiridStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure(MiridStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MiridStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MiridStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MiridStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(format!("{what} is not UTF-8")))
}

unsafe fn config_from(p: *const c_char) -> Result<RunConfig, Failure> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::parse(c_str(p, "config")?)?)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != need {
        return Err(bad(format!("{what} holds {len} values, {need} required")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mirid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulates a dataset. `config_toml` may be null for the defaults.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_simulate(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut MiridDataset,
) -> MiridStatus {
    guard(|| {
        let cfg = config_from(config_toml)?;
        let protocol = cfg.protocol.build()?;
        let inner = simulate_dataset(&cfg.acquisition, &cfg.phantom, &protocol, seed)?;
        write_handle(out, MiridDataset { inner })
    })
}

/// Loads a dataset container.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_open(path: *const c_char, out: *mut *mut MiridDataset) -> MiridStatus {
    guard(|| {
        let p = PathBuf::from(c_str(path, "path")?);
        let inner = mirid::io::load_dataset(&p)?;
        write_handle(out, MiridDataset { inner })
    })
}

/// Writes a dataset container.
///
/// # Safety
/// `ds` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_save(ds: *const MiridDataset, path: *const c_char) -> MiridStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let p = PathBuf::from(c_str(path, "path")?);
        Ok(mirid::io::save_dataset(&p, &ds.inner)?)
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_free(ds: *mut MiridDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_dims(ds: *const MiridDataset, out: *mut MiridDims) -> MiridStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("dims"))?;
        *out = MiridDims {
            volumes: ds.volumes.len(),
            nshots: ds.mask.nshots(),
            ncoils: ds.coils.ncoils(),
            ny: ds.coils.ny(),
            nx: ds.coils.nx(),
        };
        Ok(())
    })
}

/// Copies the ground-truth magnitude of `volume` into `out` (`ny * nx` values).
///
/// # Safety
/// `ds` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mirid_dataset_truth(
    ds: *const MiridDataset,
    volume: usize,
    out: *mut f64,
    len: usize,
) -> MiridStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let vol = ds.volumes.get(volume).ok_or_else(|| bad(format!("volume {volume} out of range")))?;
        out_slice(out, len, vol.truth.len(), "output buffer")?.copy_from_slice(vol.truth.data());
        Ok(())
    })
}

/// Creates a model with freshly initialized denoisers (none for CG-SENSE).
/// With untrained denoisers the unrolled methods reduce to a net-free
/// proximal iteration.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_model_untrained(
    method: MiridMethod,
    config_toml: *const c_char,
    nshots: usize,
    seed: u64,
    out: *mut *mut MiridModel,
) -> MiridStatus {
    guard(|| {
        let cfg = config_from(config_toml)?;
        let inner = Model::untrained(method.into(), &cfg.recon, nshots, &RngStream::new(seed))?;
        write_handle(out, MiridModel { inner })
    })
}

/// Loads a trained checkpoint, checked against the configured architecture.
///
/// # Safety
/// `path` must be a NUL-terminated string, `config_toml` null or one; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_model_open(
    path: *const c_char,
    config_toml: *const c_char,
    nshots: usize,
    out: *mut *mut MiridModel,
) -> MiridStatus {
    guard(|| {
        let p = PathBuf::from(c_str(path, "path")?);
        let cfg = config_from(config_toml)?;
        let inner = mirid::io::load_model(&p, &cfg.recon, nshots)?;
        write_handle(out, MiridModel { inner })
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mirid_model_free(model: *mut MiridModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reconstructs `volume` and writes its shot-combined magnitude (`ny * nx`).
///
/// # Safety
/// Handles must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mirid_reconstruct(
    model: *const MiridModel,
    ds: *const MiridDataset,
    volume: usize,
    out: *mut f64,
    len: usize,
) -> MiridStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let vol = ds.volumes.get(volume).ok_or_else(|| bad(format!("volume {volume} out of range")))?;
        let img = combine_shots(&model.reconstruct(&vol.kspace, &ds.coils, &ds.mask)?)?;
        out_slice(out, len, img.len(), "output buffer")?.copy_from_slice(img.data());
        Ok(())
    })
}

/// `100 * ||x - reference|| / ||reference||` over `len` values.
///
/// # Safety
/// `x` and `reference` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mirid_nrmse(x: *const f64, reference: *const f64, len: usize, out: *mut f64) -> MiridStatus {
    guard(|| {
        let x = RealTensor::from_vec(&[len], in_slice(x, len, "x")?.to_vec())?;
        let r = RealTensor::from_vec(&[len], in_slice(reference, len, "reference")?.to_vec())?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = mirid::metrics::nrmse(&x, &r, None)?;
        Ok(())
    })
}

/// Centered orthonormal 2-D FFT (inverse when `inverse != 0`) of an
/// `ny x nx` complex image stored as interleaved (re, im) pairs.
///
/// # Safety
/// `input` and `output` must each hold `2 * ny * nx` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn mirid_fft2c(
    input: *const f64,
    output: *mut f64,
    ny: usize,
    nx: usize,
    inverse: i32,
) -> MiridStatus {
    guard(|| {
        let n = ny.checked_mul(nx).and_then(|n| n.checked_mul(2)).ok_or_else(|| bad("size overflows"))?;
        let data: Vec<Complex64> = in_slice(input, n, "input")?
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        let x = ComplexTensor::from_vec(&[ny, nx], data)?;
        let y = if inverse != 0 { ifft2c(&x)? } else { fft2c(&x)? };
        let out = out_slice(output, n, n, "output")?;
        for (o, v) in out.chunks_exact_mut(2).zip(y.data()) {
            o[0] = v.re;
            o[1] = v.im;
        }
        Ok(())
    })
}
