//! Local-oscillator time base for measurement start times.
//!
//! Tick `n` occurs at `T_n = Σ_{i≤n} P_i` with periods
//! `P_i = T_L (1 + f_i) + w_i`: `w` is white period jitter and `f` a random
//! walk in fractional frequency. The two components produce the canonical
//! `τ^{-1/2}` and `τ^{+1/2}` Allan slopes respectively.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::num;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Nominal measurement period T_L, seconds.
    pub nominal_period: f64,
    /// Standard deviation of the white per-period jitter, seconds.
    pub white_jitter_sigma: f64,
    /// Random-walk step of the fractional frequency, per tick.
    pub frequency_random_walk_sigma: f64,
    /// Stability horizon T_LO, seconds. Metadata for the analytic precision models.
    pub stability_horizon: f64,
}

impl ClockModel {
    pub fn perfect(nominal_period: f64) -> Self {
        ClockModel {
            nominal_period,
            white_jitter_sigma: 0.0,
            frequency_random_walk_sigma: 0.0,
            stability_horizon: 500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_period > 0.0) || !self.nominal_period.is_finite() {
            return Err(Error::config(format!("clock period must be > 0, got {}", self.nominal_period)));
        }
        if !(self.white_jitter_sigma >= 0.0) || !(self.frequency_random_walk_sigma >= 0.0) {
            return Err(Error::config("clock noise sigmas must be >= 0"));
        }
        if !(self.stability_horizon > 0.0) {
            return Err(Error::config("clock stability horizon must be > 0"));
        }
        Ok(())
    }

    pub fn is_perfect(&self) -> bool {
        self.white_jitter_sigma == 0.0 && self.frequency_random_walk_sigma == 0.0
    }
}

/// Sequential tick generator.
///
/// The noiseless part `n·T_L` is computed directly and only the accumulated
/// deviation is summed, so a perfect clock hits `n·T_L` exactly.
#[derive(Debug, Clone)]
pub struct Ticker {
    model: ClockModel,
    rng: SimRng,
    n: u64,
    deviation: f64,
    frequency: f64,
}

impl Ticker {
    pub fn new(model: ClockModel, rng: SimRng) -> Result<Self> {
        model.validate()?;
        Ok(Ticker { model, rng, n: 0, deviation: 0.0, frequency: 0.0 })
    }

    /// Number of ticks produced so far.
    pub fn count(&self) -> u64 {
        self.n
    }

    /// Fast-forwards so the next tick is number `n + 1`.
    pub fn advance_to(&mut self, n: u64) -> Result<()> {
        if self.model.is_perfect() {
            self.n = self.n.max(n);
            return Ok(());
        }
        while self.n < n {
            self.next_tick()?;
        }
        Ok(())
    }

    pub fn next_tick(&mut self) -> Result<f64> {
        self.n += 1;
        let tl = self.model.nominal_period;
        if !self.model.is_perfect() {
            if self.model.frequency_random_walk_sigma > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                self.frequency += self.model.frequency_random_walk_sigma * z;
            }
            let w = if self.model.white_jitter_sigma > 0.0 {
                let z: f64 = self.rng.sample(StandardNormal);
                self.model.white_jitter_sigma * z
            } else {
                0.0
            };
            let excess = tl * self.frequency + w;
            if tl + excess <= 0.0 {
                return Err(Error::config(format!(
                    "clock produced non-positive period {} s at tick {}; noise sigmas too large",
                    tl + excess,
                    self.n
                )));
            }
            self.deviation += excess;
        }
        Ok(self.n as f64 * tl + self.deviation)
    }
}

/// `T_1 … T_n` for `model`.
pub fn tick_times(model: &ClockModel, n_ticks: usize, rng: SimRng) -> Result<Vec<f64>> {
    if n_ticks == 0 {
        return Err(Error::domain("need at least one tick"));
    }
    let mut ticker = Ticker::new(*model, rng)?;
    (0..n_ticks).map(|_| ticker.next_tick()).collect()
}

pub fn write_ticks_csv(ticks: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t_s")?;
    for t in ticks {
        writeln!(w, "{}", num(*t))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllanPoint {
    /// Averaging time actually used, `m × mean period`.
    pub tau: f64,
    pub adev: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanResult {
    pub points: Vec<AllanPoint>,
    /// Requested averaging times that had too few samples.
    pub skipped: Vec<f64>,
}

/// Overlapping Allan deviation of the fractional frequency implied by the
/// tick intervals.
pub fn allan_deviation(ticks: &[f64], averaging_taus: &[f64]) -> Result<AllanResult> {
    if ticks.len() < 3 {
        return Err(Error::domain("Allan deviation needs at least 3 ticks"));
    }
    let n = ticks.len();
    let tau0 = (ticks[n - 1] - ticks[0]) / (n - 1) as f64;
    if !(tau0 > 0.0) {
        return Err(Error::domain("tick series must be increasing"));
    }
    // time error against the mean-rate clock
    let x: Vec<f64> = ticks
        .iter()
        .enumerate()
        .map(|(k, t)| (t - ticks[0]) - k as f64 * tau0)
        .collect();

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &tau in averaging_taus {
        let m = (tau / tau0).round() as usize;
        if m == 0 || 2 * m >= n {
            skipped.push(tau);
            continue;
        }
        let terms = n - 2 * m;
        let sum: f64 = (0..terms)
            .map(|k| {
                let d = x[k + 2 * m] - 2.0 * x[k + m] + x[k];
                d * d
            })
            .sum();
        let t = m as f64 * tau0;
        let avar = sum / (2.0 * t * t * terms as f64);
        points.push(AllanPoint { tau: t, adev: avar.sqrt(), m });
    }
    Ok(AllanResult { points, skipped })
}
