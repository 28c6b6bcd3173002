//! Monte-Carlo harness for linewidth, SNR and precision versus total time.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_lorentzian, fit_peak, snr};
use super::periodogram::{periodogram_series, PeriodogramOptions};
use crate::acquisition::{run_sweep, simulate_binned, QdyneConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::fmt::num;
use crate::rng::derive_seed;
use crate::sensor::PulseSequence;

/// Smallest accepted ratio between the longest and shortest total time.
pub const MIN_GRID_SPAN: f64 = 31.622_776_601_683_793; // 10^1.5
pub const MIN_TRIALS: usize = 10;
/// Largest fraction of failed fits a grid point may have and still count.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// Fit window `center ± max(half_width / T, min_half_width)`.
///
/// The `1/T` part follows a transform-limited line; the floor keeps a line
/// broadened by clock noise inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBand {
    pub center: f64,
    /// Half-width in units of `1/T`.
    pub half_width: f64,
    /// Lower bound on the half-width, Hz.
    #[serde(default)]
    pub min_half_width: f64,
}

impl FitBand {
    pub fn at(&self, total_time: f64) -> (f64, f64) {
        let h = (self.half_width / total_time).max(self.min_half_width);
        ((self.center - h).max(0.0), self.center + h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdyneAnalysis {
    pub periodogram: PeriodogramOptions,
    pub band: FitBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ScalingMethod {
    Qdyne { config: QdyneConfig, analysis: QdyneAnalysis },
    /// Repetitions per point are chosen so the sweep fills the total time.
    Sweep { config: SweepConfig },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub total_time: f64,
    /// Mean fitted FWHM over accepted trials, Hz.
    pub fwhm: f64,
    pub snr: f64,
    /// Standard deviation of fitted centers across trials, Hz.
    pub precision: f64,
    pub mean_center: f64,
    pub trials: usize,
    pub excluded: usize,
    /// False when more than 20% of the trials were excluded.
    pub valid: bool,
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub fwhm_slope: Slope,
    pub snr_slope: Slope,
    pub precision_slope: Slope,
}

impl ScalingResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "total_time_s,fwhm_hz,snr,precision_hz,mean_center_hz,trials,excluded,valid")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                num(r.total_time),
                num(r.fwhm),
                num(r.snr),
                num(r.precision),
                num(r.mean_center),
                r.trials,
                r.excluded,
                r.valid
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ordinary least squares slope of `ln y` against `ln x` with its standard error.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<Slope> {
    if x.len() != y.len() {
        return Err(Error::domain("x and y lengths differ"));
    }
    if x.len() < 3 {
        return Err(Error::Numerical(format!("{} points; a slope with an error bar needs at least 3", x.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Numerical("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Numerical("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(Slope { slope, stderr, intercept, points: lx.len() })
}

struct Outcome {
    fwhm: f64,
    snr: f64,
    center: f64,
}

fn qdyne_cell(config: &QdyneConfig, analysis: &QdyneAnalysis, t: f64, seed: u64) -> Result<Option<Outcome>> {
    let cfg = QdyneConfig { total_time: t, seed, ..config.clone() };
    let opts = analysis.periodogram;
    let binned = simulate_binned(&cfg, opts.bin_factor)?;
    let spec = periodogram_series(&binned.counts, binned.sample_period, &PeriodogramOptions { bin_factor: 1, ..opts })?;
    let (lo, hi) = analysis.band.at(t);
    let Ok(fit) = fit_peak(&spec, lo, hi) else {
        return Ok(None);
    };
    if !fit.converged {
        return Ok(None);
    }
    let Ok(s) = snr(&spec, &fit) else {
        return Ok(None);
    };
    Ok(Some(Outcome { fwhm: fit.fwhm, snr: s.value, center: fit.center }))
}

fn sweep_period(config: &SweepConfig) -> Result<f64> {
    let mut total = 0.0;
    for &tau in &config.taus {
        total += PulseSequence::new(config.n_pulses, tau)?.interaction_time() + config.sensor.readout_dead_time;
    }
    Ok(total)
}

fn sweep_cell(config: &SweepConfig, t: f64, seed: u64) -> Result<Option<Outcome>> {
    let repetitions = (t / sweep_period(config)?).floor() as u64;
    if repetitions == 0 {
        return Err(Error::config(format!("total time {t} s is shorter than one pass over the tau grid")));
    }
    let cfg = SweepConfig { repetitions, seed, ..config.clone() };
    let mut points = run_sweep(&cfg)?;
    points.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    let x: Vec<f64> = points.iter().map(|p| p.frequency).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let Ok(fit) = fit_lorentzian(&x, &y) else {
        return Ok(None);
    };
    if !fit.converged || fit.amplitude >= 0.0 {
        return Ok(None);
    }
    let noise = points.iter().map(|p| p.stderr).sum::<f64>() / points.len() as f64;
    Ok(Some(Outcome { fwhm: fit.fwhm, snr: fit.amplitude.abs() / noise, center: fit.center }))
}

/// Runs `trials` seeded simulations at every total time and fits power laws.
///
/// Cells `(T, trial)` run in parallel with seeds derived from the base
/// configuration's seed, so results do not depend on scheduling. Failed or
/// non-converged fits are excluded and counted.
pub fn scaling_harness(method: &ScalingMethod, times: &[f64], trials: usize) -> Result<ScalingResult> {
    if times.len() < 3 {
        return Err(Error::config("time grid needs at least 3 points"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || !(times[0] > 0.0) {
        return Err(Error::config("time grid must be positive and strictly increasing"));
    }
    if times[times.len() - 1] / times[0] < MIN_GRID_SPAN * (1.0 - 1e-9) {
        return Err(Error::config("time grid must span at least 1.5 decades"));
    }
    if trials < MIN_TRIALS {
        return Err(Error::config(format!("at least {MIN_TRIALS} trials per point required")));
    }
    let base_seed = match method {
        ScalingMethod::Qdyne { config, .. } => config.seed,
        ScalingMethod::Sweep { config } => config.seed,
    };
    let cells: Vec<(usize, usize)> = (0..times.len()).flat_map(|i| (0..trials).map(move |j| (i, j))).collect();
    let outcomes: Vec<Option<Outcome>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let seed = derive_seed(base_seed, i as u64, j as u64);
            match method {
                ScalingMethod::Qdyne { config, analysis } => qdyne_cell(config, analysis, times[i], seed),
                ScalingMethod::Sweep { config } => sweep_cell(config, times[i], seed),
            }
        })
        .collect::<Result<_>>()?;

    let rows: Vec<ScalingRow> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let ok: Vec<&Outcome> = outcomes[i * trials..(i + 1) * trials].iter().flatten().collect();
            let n = ok.len() as f64;
            let mean = |f: fn(&Outcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / n;
            let mean_center = mean(|o| o.center);
            let precision = (ok.iter().map(|o| (o.center - mean_center).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let excluded = trials - ok.len();
            ScalingRow {
                total_time: t,
                fwhm: mean(|o| o.fwhm),
                snr: mean(|o| o.snr),
                precision,
                mean_center,
                trials,
                excluded,
                valid: ok.len() >= 2 && excluded as f64 <= MAX_EXCLUDED_FRACTION * trials as f64,
            }
        })
        .collect();

    let valid: Vec<&ScalingRow> = rows.iter().filter(|r| r.valid).collect();
    let xs: Vec<f64> = valid.iter().map(|r| r.total_time).collect();
    let column = |f: fn(&ScalingRow) -> f64| -> Vec<f64> { valid.iter().map(|r| f(r)).collect() };
    Ok(ScalingResult {
        fwhm_slope: loglog_slope(&xs, &column(|r| r.fwhm))?,
        snr_slope: loglog_slope(&xs, &column(|r| r.snr))?,
        precision_slope: loglog_slope(&xs, &column(|r| r.precision))?,
        rows,
    })
}
