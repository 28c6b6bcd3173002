//! Spectra and frequency estimates from acquisition traces.

mod fit;
mod periodogram;
mod precision;
mod scaling;

pub use fit::{fit_lorentzian, fit_peak, lorentzian, peak_is_significant, snr, LorentzFit, PeakFit, Snr};
pub use periodogram::{periodogram, periodogram_series, write_spectrum_csv, PeriodogramOptions, Spectrum, Window};
pub use precision::{
    crb_tone_frequency, predict_precision_dd, predict_precision_memory, predict_precision_qdyne, PrecisionModel,
};
pub use scaling::{
    loglog_slope, scaling_harness, FitBand, QdyneAnalysis, ScalingMethod, ScalingResult, ScalingRow, Slope,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed beat frequency of a tone sampled every `T_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliasOffset {
    /// Distance to the nearest comb line, in `[0, 1/(2T_L)]`, Hz.
    pub delta: f64,
    /// `+1` when the tone sits above the comb line, `-1` below.
    pub sign: f64,
    /// Nearest integer multiple of `1/T_L`, Hz.
    pub comb_line: f64,
}

/// Folds `nu` onto the sampling comb `m / T_L`.
pub fn alias_offset(nu: f64, t_l: f64) -> Result<AliasOffset> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::domain(format!("frequency must be > 0, got {nu}")));
    }
    if !(t_l > 0.0) || !t_l.is_finite() {
        return Err(Error::domain(format!("measurement period must be > 0, got {t_l}")));
    }
    let cycles = nu * t_l;
    let m = cycles.floor();
    // fraction of a comb spacing above the line below
    let r = cycles - m;
    let fs = 1.0 / t_l;
    let (frac, sign, line) = if r <= 0.5 { (r, 1.0, m) } else { (1.0 - r, -1.0, m + 1.0) };
    Ok(AliasOffset { delta: frac * fs, sign, comb_line: line * fs })
}
