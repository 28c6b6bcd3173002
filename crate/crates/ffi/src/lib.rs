//! C interface to the `qdyne` library.
//!
//! Traces and spectra are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`QdyneStatus`]; on failure [`qdyne_last_error`] describes what went wrong
//! on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qdyne::acquisition::{read_trace, run_qdyne, write_trace, AcquisitionTrace};
use qdyne::config::ExperimentConfig;
use qdyne::sensor::{filter_weight, PulseSequence};
use qdyne::spectral::{self, PeriodogramOptions, PrecisionModel, Spectrum, Window};
use qdyne::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdyneStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the domain of the operation, or an output buffer too small.
    InvalidArgument = 2,
    /// Configuration rejected (schema, invariant or unsupported combination).
    Config = 3,
    Numerical = 4,
    NoPeak = 5,
    Io = 6,
    CorruptTrace = 7,
    Panic = 8,
}

/// A simulated or loaded acquisition trace.
pub struct QdyneTrace {
    inner: AcquisitionTrace,
}

/// A one-sided power spectrum.
pub struct QdyneSpectrum {
    inner: Spectrum,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdyneWindow {
    Rectangular = 0,
    Hann = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdynePeriodogramOptions {
    pub window: QdyneWindow,
    pub zero_pad_factor: usize,
    pub bin_factor: usize,
    pub segments: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QdynePeakFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub noise_floor: f64,
    /// Half-widths of the 95% confidence intervals.
    pub center_ci: f64,
    pub fwhm_ci: f64,
    pub amplitude_ci: f64,
    pub noise_floor_ci: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QdyneAlias {
    pub delta: f64,
    pub sign: f64,
    pub comb_line: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdynePrecisionModel {
    pub k: f64,
    pub t2: f64,
    pub t_memory: f64,
    pub t_clock: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdyneMethod {
    DynamicalDecoupling = 0,
    Memory = 1,
    Qdyne = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> QdyneStatus {
    match e {
        Error::Domain(_) | Error::Range { .. } => QdyneStatus::InvalidArgument,
        Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) | Error::Capacity { .. } => QdyneStatus::Config,
        Error::Numerical(_) => QdyneStatus::Numerical,
        Error::NoPeak { .. } => QdyneStatus::NoPeak,
        Error::Io(_) => QdyneStatus::Io,
        Error::CorruptTrace { .. } => QdyneStatus::CorruptTrace,
    }
}

/// Runs `f`, recording any error or panic for [`qdyne_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (QdyneStatus, String)>) -> QdyneStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QdyneStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QdyneStatus::Panic
        }
    }
}

fn lib(e: Error) -> (QdyneStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QdyneStatus, String) {
    (QdyneStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QdyneStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (QdyneStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (QdyneStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn copy_into<T: Copy>(src: &[T], dst: *mut T, capacity: usize) -> Result<(), (QdyneStatus, String)> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if capacity < src.len() {
        return Err((QdyneStatus::InvalidArgument, format!("buffer holds {capacity}, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn options(opts: &QdynePeriodogramOptions) -> PeriodogramOptions {
    PeriodogramOptions {
        window: match opts.window {
            QdyneWindow::Rectangular => Window::Rectangular,
            QdyneWindow::Hann => Window::Hann,
        },
        zero_pad_factor: opts.zero_pad_factor,
        bin_factor: opts.bin_factor,
        segments: opts.segments,
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qdyne_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdyne_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates the Qdyne acquisition described by a TOML experiment
/// definition (same schema as the command-line tool; relative paths resolve
/// against the working directory).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_simulate(config_toml: *const c_char, out: *mut *mut QdyneTrace) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        *slot = ptr::null_mut();
        let mut cfg = ExperimentConfig::parse(unsafe { text(config_toml, "config_toml")? }).map_err(lib)?;
        cfg.resolve(Path::new(".")).map_err(lib)?;
        let qcfg = cfg.qdyne_config(cfg.field_source().map_err(lib)?).map_err(lib)?;
        let trace = run_qdyne(&qcfg).map_err(lib)?;
        *slot = Box::into_raw(Box::new(QdyneTrace { inner: trace }));
        Ok(())
    })
}

/// Loads a binary trace and its JSON sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_read(path: *const c_char, out: *mut *mut QdyneTrace) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        *slot = ptr::null_mut();
        let trace = read_trace(Path::new(unsafe { text(path, "path")? })).map_err(lib)?;
        *slot = Box::into_raw(Box::new(QdyneTrace { inner: trace }));
        Ok(())
    })
}

/// Writes a trace as `path` plus `path.json`.
///
/// # Safety
/// `trace` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_write(trace: *const QdyneTrace, path: *const c_char) -> QdyneStatus {
    guard(|| {
        let trace = unsafe { trace.as_ref() }.ok_or_else(|| null("trace"))?;
        write_trace(&trace.inner, Path::new(unsafe { text(path, "path")? })).map_err(lib)
    })
}

/// Number of records; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_len(trace: *const QdyneTrace) -> usize {
    unsafe { trace.as_ref() }.map_or(0, |t| t.inner.len())
}

/// Nominal measurement period `T_L`, seconds; NaN for a null handle.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_measurement_period(trace: *const QdyneTrace) -> f64 {
    unsafe { trace.as_ref() }.map_or(f64::NAN, |t| t.inner.metadata.measurement_period)
}

/// Copies the measurement start times into `dst` (capacity in elements).
///
/// # Safety
/// `dst` must point to at least `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_copy_start_times(
    trace: *const QdyneTrace,
    dst: *mut f64,
    capacity: usize,
) -> QdyneStatus {
    guard(|| {
        let trace = unsafe { trace.as_ref() }.ok_or_else(|| null("trace"))?;
        unsafe { copy_into(&trace.inner.start_times, dst, capacity) }
    })
}

/// Copies the photon counts into `dst` (capacity in elements).
///
/// # Safety
/// `dst` must point to at least `capacity` writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_copy_photons(
    trace: *const QdyneTrace,
    dst: *mut u32,
    capacity: usize,
) -> QdyneStatus {
    guard(|| {
        let trace = unsafe { trace.as_ref() }.ok_or_else(|| null("trace"))?;
        unsafe { copy_into(&trace.inner.photons, dst, capacity) }
    })
}

/// # Safety
/// `trace` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdyne_trace_free(trace: *mut QdyneTrace) {
    if !trace.is_null() {
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Rectangular window, no padding, binning or segmentation.
#[no_mangle]
pub extern "C" fn qdyne_periodogram_default_options() -> QdynePeriodogramOptions {
    QdynePeriodogramOptions { window: QdyneWindow::Rectangular, zero_pad_factor: 1, bin_factor: 1, segments: 1 }
}

/// Periodogram of a trace's photon counts.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_periodogram(
    trace: *const QdyneTrace,
    opts: *const QdynePeriodogramOptions,
    out: *mut *mut QdyneSpectrum,
) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        *slot = ptr::null_mut();
        let trace = unsafe { trace.as_ref() }.ok_or_else(|| null("trace"))?;
        let opts = unsafe { opts.as_ref() }.ok_or_else(|| null("opts"))?;
        let spec = spectral::periodogram(&trace.inner, &options(opts)).map_err(lib)?;
        *slot = Box::into_raw(Box::new(QdyneSpectrum { inner: spec }));
        Ok(())
    })
}

/// Periodogram of `n` uniformly spaced samples.
///
/// # Safety
/// `values` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_periodogram_series(
    values: *const f64,
    n: usize,
    sample_period: f64,
    opts: *const QdynePeriodogramOptions,
    out: *mut *mut QdyneSpectrum,
) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        *slot = ptr::null_mut();
        if values.is_null() {
            return Err(null("values"));
        }
        let opts = unsafe { opts.as_ref() }.ok_or_else(|| null("opts"))?;
        let values = unsafe { std::slice::from_raw_parts(values, n) };
        let spec = spectral::periodogram_series(values, sample_period, &options(opts)).map_err(lib)?;
        *slot = Box::into_raw(Box::new(QdyneSpectrum { inner: spec }));
        Ok(())
    })
}

/// Number of frequency bins; 0 for a null handle.
///
/// # Safety
/// `spectrum` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qdyne_spectrum_len(spectrum: *const QdyneSpectrum) -> usize {
    unsafe { spectrum.as_ref() }.map_or(0, |s| s.inner.power.len())
}

/// Bin spacing, Hz; bin `k` sits at `k` times this. NaN for a null handle.
///
/// # Safety
/// `spectrum` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn qdyne_spectrum_bin_width(spectrum: *const QdyneSpectrum) -> f64 {
    unsafe { spectrum.as_ref() }.map_or(f64::NAN, |s| s.inner.bin_width)
}

/// # Safety
/// `dst` must point to at least `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qdyne_spectrum_copy_power(
    spectrum: *const QdyneSpectrum,
    dst: *mut f64,
    capacity: usize,
) -> QdyneStatus {
    guard(|| {
        let spec = unsafe { spectrum.as_ref() }.ok_or_else(|| null("spectrum"))?;
        unsafe { copy_into(&spec.inner.power, dst, capacity) }
    })
}

/// # Safety
/// `spectrum` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdyne_spectrum_free(spectrum: *mut QdyneSpectrum) {
    if !spectrum.is_null() {
        drop(unsafe { Box::from_raw(spectrum) });
    }
}

/// Lorentzian-plus-constant fit to the bins in `[lo, hi]` Hz.
///
/// # Safety
/// `spectrum` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_fit_peak(
    spectrum: *const QdyneSpectrum,
    lo: f64,
    hi: f64,
    out: *mut QdynePeakFit,
) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        let spec = unsafe { spectrum.as_ref() }.ok_or_else(|| null("spectrum"))?;
        let f = spectral::fit_peak(&spec.inner, lo, hi).map_err(lib)?;
        *slot = QdynePeakFit {
            center: f.center,
            fwhm: f.fwhm,
            amplitude: f.amplitude,
            noise_floor: f.noise_floor,
            center_ci: f.center_ci,
            fwhm_ci: f.fwhm_ci,
            amplitude_ci: f.amplitude_ci,
            noise_floor_ci: f.noise_floor_ci,
            converged: f.converged,
            residual_norm: f.residual_norm,
            iterations: f.iterations,
        };
        Ok(())
    })
}

/// Folds `nu` onto the sampling comb of period `t_l`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_alias_offset(nu: f64, t_l: f64, out: *mut QdyneAlias) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        let a = spectral::alias_offset(nu, t_l).map_err(lib)?;
        *slot = QdyneAlias { delta: a.delta, sign: a.sign, comb_line: a.comb_line };
        Ok(())
    })
}

/// Normalized filter weight of an `n_pulses` sequence with spacing `tau` at `nu`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_filter_weight(nu: f64, n_pulses: u32, tau: f64, out: *mut f64) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        let seq = PulseSequence::new(n_pulses, tau).map_err(lib)?;
        *slot = filter_weight(nu, &seq).map_err(lib)?;
        Ok(())
    })
}

/// Predicted frequency precision after total time `t` for one method.
///
/// # Safety
/// `model` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_predict_precision(
    model: *const QdynePrecisionModel,
    method: QdyneMethod,
    t: f64,
    out: *mut f64,
) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        let m = PrecisionModel::new(m.k, m.t2, m.t_memory, m.t_clock).map_err(lib)?;
        *slot = match method {
            QdyneMethod::DynamicalDecoupling => spectral::predict_precision_dd(&m, t),
            QdyneMethod::Memory => spectral::predict_precision_memory(&m, t),
            QdyneMethod::Qdyne => spectral::predict_precision_qdyne(&m, t),
        }
        .map_err(lib)?;
        Ok(())
    })
}

/// Cramér–Rao bound on the frequency of a sampled tone in white noise, Hz.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdyne_crb_tone_frequency(
    amplitude_over_noise: f64,
    sample_period: f64,
    n_samples: u64,
    out: *mut f64,
) -> QdyneStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out")? };
        *slot = spectral::crb_tone_frequency(amplitude_over_noise, sample_period, n_samples).map_err(lib)?;
        Ok(())
    })
}
