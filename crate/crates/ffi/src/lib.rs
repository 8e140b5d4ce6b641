//! C interface to the fockscope simulator and estimators.
//!
//! Objects are opaque handles created by `fs_*_new`-style functions and released
//! with the matching `fs_*_free`. Every fallible call returns an [`FsStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`fs_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fockscope::fock::{heralded_lossy_state, FockDiagonal, HeraldParams, SqueezeParam};
use fockscope::quadrature::{fock_marginal, sample_quadratures, wigner_at, QuadratureBatch};
use fockscope::tomography::{eta_from_variance, extract_eta_gamma, maxlik_diag, MaxLikConfig, ReconstructionResult};
use fockscope::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    BufferTooSmall = 3,
    NoHerald = 4,
    CalibrationRequired = 5,
    EstimationFailed = 6,
    ModelMismatch = 7,
    Unidentifiable = 8,
    InsufficientData = 9,
    Io = 10,
    Panic = 11,
    Other = 12,
}

/// Photon-number populations.
pub struct FsState(FockDiagonal);

/// Quadrature samples in vacuum-variance-half units.
pub struct FsBatch(QuadratureBatch);

/// Maximum-likelihood reconstruction with its uncertainties.
pub struct FsReconstruction(ReconstructionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FsStatus {
    match err {
        Error::InvalidParameter(_) => FsStatus::InvalidParameter,
        Error::NoHeraldPossible => FsStatus::NoHerald,
        Error::CalibrationRequired | Error::CalibrationFailed(_) => FsStatus::CalibrationRequired,
        Error::EstimationFailed(_) | Error::IllConditioned(_) => FsStatus::EstimationFailed,
        Error::ModelMismatch(_) => FsStatus::ModelMismatch,
        Error::Unidentifiable(_) => FsStatus::Unidentifiable,
        Error::InsufficientData(_) => FsStatus::InsufficientData,
        Error::Io(_) | Error::Parse { .. } => FsStatus::Io,
        _ => FsStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FsStatus, String)>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FsStatus::Panic
        }
    }
}

fn lift<T>(r: fockscope::Result<T>) -> Result<T, (FsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FsStatus, String) {
    (FsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (FsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (FsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (FsStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, capacity: usize) -> Result<(), (FsStatus, String)> {
    if capacity < src.len() {
        return Err((
            FsStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or 0
/// when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Number-state quadrature marginal `|psi_n(q)|^2`.
#[no_mangle]
pub extern "C" fn fs_fock_marginal(n: usize, q: f64) -> f64 {
    fock_marginal(n, q)
}

/// State from explicit populations, which must be non-negative and sum to one.
///
/// # Safety
/// `weights` must point to `len` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_state_new(weights: *const f64, len: usize, out: *mut *mut FsState) -> FsStatus {
    guard(|| {
        let w = input(weights, len, "weights")?;
        let state = lift(FockDiagonal::new(w.to_vec()))?;
        write_out(out, Box::into_raw(Box::new(FsState(state))), "out")
    })
}

/// Heralded single photon after optical loss `eta`, truncated at `n_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_state_heralded(
    gamma_sq: f64,
    eta_t: f64,
    eta: f64,
    n_max: usize,
    out: *mut *mut FsState,
) -> FsStatus {
    guard(|| {
        let state = lift(
            SqueezeParam::from_gamma_sq(gamma_sq)
                .and_then(|g| Ok((g, HeraldParams::new(eta_t)?)))
                .and_then(|(g, h)| heralded_lossy_state(g, h, eta, n_max)),
        )?;
        write_out(out, Box::into_raw(Box::new(FsState(state))), "out")
    })
}

/// Number of populations (`n_max + 1`), or 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_state_len(state: *const FsState) -> usize {
    state.as_ref().map_or(0, |s| s.0.probs().len())
}

/// # Safety
/// `state` must be a live handle and `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn fs_state_probs(state: *const FsState, out: *mut f64, capacity: usize) -> FsStatus {
    guard(|| copy_out(deref(state, "state")?.0.probs(), out, capacity))
}

/// Wigner function at phase-space radius `r`.
///
/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_state_wigner(state: *const FsState, r: f64, out: *mut f64) -> FsStatus {
    guard(|| {
        let s = deref(state, "state")?;
        write_out(out, wigner_at(&s.0, r), "out")
    })
}

/// Efficiency and pair probability implied by the first three populations.
///
/// # Safety
/// `state` must be a live handle; `eta` and `gamma_sq` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_state_extract(state: *const FsState, eta: *mut f64, gamma_sq: *mut f64) -> FsStatus {
    guard(|| {
        let e = lift(extract_eta_gamma(&deref(state, "state")?.0))?;
        write_out(eta, e.eta, "eta")?;
        write_out(gamma_sq, e.gamma_sq, "gamma_sq")
    })
}

/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_state_free(state: *mut FsState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Draws `count` calibrated quadratures from `state`.
///
/// # Safety
/// `state` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_sample(
    state: *const FsState,
    count: usize,
    seed: u64,
    out: *mut *mut FsBatch,
) -> FsStatus {
    guard(|| {
        let batch = sample_quadratures(&deref(state, "state")?.0, count, seed);
        write_out(out, Box::into_raw(Box::new(FsBatch(batch))), "out")
    })
}

/// Wraps already calibrated quadratures.
///
/// # Safety
/// `values` must point to `len` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_from_calibrated(values: *const f64, len: usize, out: *mut *mut FsBatch) -> FsStatus {
    guard(|| {
        let v = input(values, len, "values")?;
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err((FsStatus::InvalidParameter, format!("non-finite quadrature {bad}")));
        }
        write_out(
            out,
            Box::into_raw(Box::new(FsBatch(QuadratureBatch::calibrated(v.to_vec())))),
            "out",
        )
    })
}

/// # Safety
/// `batch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_len(batch: *const FsBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `batch` must be a live handle and `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_values(batch: *const FsBatch, out: *mut f64, capacity: usize) -> FsStatus {
    guard(|| copy_out(deref(batch, "batch")?.0.values(), out, capacity))
}

/// Overall efficiency from the quadrature variance, with its standard error.
///
/// # Safety
/// `batch` must be a live handle; `eta` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_eta(batch: *const FsBatch, eta: *mut f64, std_error: *mut f64) -> FsStatus {
    guard(|| {
        let e = lift(eta_from_variance(&deref(batch, "batch")?.0))?;
        write_out(eta, e.eta, "eta")?;
        write_out(std_error, e.std_error, "std_error")
    })
}

/// # Safety
/// `batch` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_batch_free(batch: *mut FsBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Maximum-likelihood populations up to `n_max`. A run that hits `max_iter`
/// still succeeds; check [`fs_recon_converged`].
///
/// # Safety
/// `batch` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_reconstruct(
    batch: *const FsBatch,
    n_max: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut FsReconstruction,
) -> FsStatus {
    guard(|| {
        let b = deref(batch, "batch")?;
        let config = MaxLikConfig { n_max, tol, max_iter };
        let result = lift(config.validate().and_then(|_| maxlik_diag(&b.0, &config)))?;
        write_out(out, Box::into_raw(Box::new(FsReconstruction(result))), "out")
    })
}

/// Reconstructed populations as a new state handle.
///
/// # Safety
/// `recon` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_state(recon: *const FsReconstruction, out: *mut *mut FsState) -> FsStatus {
    guard(|| {
        let state = deref(recon, "reconstruction")?.0.state.clone();
        write_out(out, Box::into_raw(Box::new(FsState(state))), "out")
    })
}

/// One-sigma uncertainties, one per population.
///
/// # Safety
/// `recon` must be a live handle and `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_sigma(recon: *const FsReconstruction, out: *mut f64, capacity: usize) -> FsStatus {
    guard(|| copy_out(&deref(recon, "reconstruction")?.0.sigma, out, capacity))
}

/// # Safety
/// `recon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_log_likelihood(recon: *const FsReconstruction) -> f64 {
    recon.as_ref().map_or(f64::NAN, |r| r.0.log_likelihood)
}

/// # Safety
/// `recon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_iterations(recon: *const FsReconstruction) -> usize {
    recon.as_ref().map_or(0, |r| r.0.iterations)
}

/// # Safety
/// `recon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_converged(recon: *const FsReconstruction) -> bool {
    recon.as_ref().is_some_and(|r| r.0.converged)
}

/// # Safety
/// `recon` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_recon_free(recon: *mut FsReconstruction) {
    if !recon.is_null() {
        drop(Box::from_raw(recon));
    }
}
