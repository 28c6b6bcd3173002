use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionTrace;
use crate::error::{Error, Result};
use crate::fmt::num;

/// Shortest series (per segment) accepted by the periodogram.
pub const MIN_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => {
                let denom = (n - 1) as f64;
                (0..n).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / denom).cos()).collect()
            }
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodogramOptions {
    #[serde(default)]
    pub window: Window,
    /// Transform length as a multiple of the segment length.
    #[serde(default = "one")]
    pub zero_pad_factor: usize,
    /// Consecutive records summed into one sample before the transform.
    #[serde(default = "one")]
    pub bin_factor: usize,
    /// Number of equal, non-overlapping segments whose spectra are averaged.
    #[serde(default = "one")]
    pub segments: usize,
}

impl Default for PeriodogramOptions {
    fn default() -> Self {
        PeriodogramOptions { window: Window::Rectangular, zero_pad_factor: 1, bin_factor: 1, segments: 1 }
    }
}

impl PeriodogramOptions {
    pub fn validate(&self) -> Result<()> {
        if self.zero_pad_factor == 0 || self.bin_factor == 0 || self.segments == 0 {
            return Err(Error::config("zero_pad_factor, bin_factor and segments must all be >= 1"));
        }
        Ok(())
    }
}

/// One-sided power spectrum on the grid `k · bin_width`, `k = 0 ..= n_fft/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub power: Vec<f64>,
    pub bin_width: f64,
    pub window: Window,
    /// Input samples (records) the spectrum was computed from.
    pub n_records: usize,
    /// Spacing of the transformed series, seconds.
    pub sample_period: f64,
    pub n_fft: usize,
    pub segments: usize,
    /// Mean over segments of the windowed, mean-subtracted time-domain energy.
    pub energy: f64,
}

impl Spectrum {
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_width
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.power.len()).map(|k| self.frequency(k)).collect()
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.sample_period
    }

    /// Bin range `[lo, hi]` covering the closed frequency band.
    pub fn band_bins(&self, lo: f64, hi: f64) -> (usize, usize) {
        let last = self.power.len() - 1;
        let a = ((lo / self.bin_width).ceil().max(0.0) as usize).min(last);
        let b = ((hi / self.bin_width).floor().max(0.0) as usize).min(last);
        (a, b)
    }

    /// Relative mismatch between total power and time-domain energy.
    pub fn parseval_error(&self) -> f64 {
        let total: f64 = self.power.iter().sum();
        if self.energy == 0.0 {
            total.abs()
        } else {
            (total - self.energy).abs() / self.energy
        }
    }
}

fn bin_series(values: &[f64], factor: usize) -> Vec<f64> {
    if factor == 1 {
        return values.to_vec();
    }
    values.chunks_exact(factor).map(|c| c.iter().sum()).collect()
}

/// Periodogram of photon counts from a trace.
pub fn periodogram(trace: &AcquisitionTrace, opts: &PeriodogramOptions) -> Result<Spectrum> {
    if trace.start_times.len() != trace.photons.len() {
        return Err(Error::CorruptTrace { record: 0, reason: "time and count columns differ in length".into() });
    }
    let counts = trace.counts();
    periodogram_series(&counts, trace.metadata.measurement_period, opts)
}

/// Periodogram of a uniformly sampled series.
///
/// Each segment is mean-subtracted, windowed and zero-padded to
/// `zero_pad_factor × length`; bin powers are `c_k |X_k|² / n_fft` with
/// `c_k = 2` for interior bins, so the one-sided spectrum sums to the
/// windowed time-domain energy.
pub fn periodogram_series(values: &[f64], sample_period: f64, opts: &PeriodogramOptions) -> Result<Spectrum> {
    opts.validate()?;
    if !(sample_period > 0.0) {
        return Err(Error::domain("sample period must be > 0"));
    }
    let series = bin_series(values, opts.bin_factor);
    let seg_len = series.len() / opts.segments;
    if seg_len < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "{} samples in {} segment(s) after binning by {}; each segment needs at least {MIN_SAMPLES}",
            series.len(),
            opts.segments,
            opts.bin_factor
        )));
    }
    let dt = sample_period * opts.bin_factor as f64;
    let n_fft = seg_len * opts.zero_pad_factor;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window = opts.window.coefficients(seg_len);
    let n_bins = n_fft / 2 + 1;
    let mut power = vec![0.0; n_bins];
    let mut energy = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for seg in series.chunks_exact(seg_len).take(opts.segments) {
        let mean = seg.iter().sum::<f64>() / seg_len as f64;
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for ((z, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            let v = (x - mean) * w;
            energy += v * v;
            z.re = v;
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let interior = k != 0 && 2 * k != n_fft;
            let c = if interior { 2.0 } else { 1.0 };
            *p += c * buf[k].norm_sqr() / n_fft as f64;
        }
    }
    let scale = 1.0 / opts.segments as f64;
    power.iter_mut().for_each(|p| *p *= scale);
    Ok(Spectrum {
        power,
        bin_width: 1.0 / (n_fft as f64 * dt),
        window: opts.window,
        n_records: values.len(),
        sample_period: dt,
        n_fft,
        segments: opts.segments,
        energy: energy * scale,
    })
}

/// CSV with header `freq_hz,power`.
pub fn write_spectrum_csv(spec: &Spectrum, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "freq_hz,power")?;
    for (k, p) in spec.power.iter().enumerate() {
        writeln!(w, "{},{}", num(spec.frequency(k)), num(*p))?;
    }
    w.flush()?;
    Ok(())
}
