use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sensor::{
    accumulated_phase, bright_probability, sample_photons, PulseSequence, ReadoutAxis, SensorParams, ToneResponse,
};
use crate::signals::FieldSource;

fn population_axis() -> ReadoutAxis {
    ReadoutAxis::POPULATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub source: FieldSource,
    pub sensor: SensorParams,
    #[serde(default = "population_axis")]
    pub axis: ReadoutAxis,
    /// Number of π pulses per block; every grid point uses the same count.
    pub n_pulses: u32,
    /// Interpulse delays, strictly increasing, seconds.
    pub taus: Vec<f64>,
    pub repetitions: u64,
    /// Draw a fresh uniform signal phase for every repetition.
    pub random_phase: bool,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        if self.taus.is_empty() {
            return Err(Error::config("tau grid is empty"));
        }
        for &tau in &self.taus {
            PulseSequence::new(self.n_pulses, tau)?;
        }
        if let Some(w) = self.taus.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::config(format!("tau grid must be strictly increasing ({} then {})", w[0], w[1])));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        if self.random_phase && self.source.tones().is_none() {
            return Err(Error::Unsupported("random signal phase needs a tone source".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    /// Filter resonance `1/(2τ)`, Hz.
    pub frequency: f64,
    pub mean: f64,
    pub stderr: f64,
}

fn sweep_point(cfg: &SweepConfig, index: usize) -> Result<SweepPoint> {
    let tau = cfg.taus[index];
    let seq = PulseSequence::new(cfg.n_pulses, tau)?;
    let coherence = cfg.sensor.coherence(seq.interaction_time());
    let period = seq.interaction_time() + cfg.sensor.readout_dead_time;
    let mut rng = stream_rng(derive_seed(cfg.seed, index as u64, 0), stream::SWEEP);
    let responses: Vec<ToneResponse> = cfg
        .source
        .tones()
        .map(|tones| tones.iter().map(|t| ToneResponse::new(*t, &seq)).collect())
        .unwrap_or_default();

    // Welford accumulation of the photon counts
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for r in 0..cfg.repetitions {
        let phi = if cfg.random_phase {
            responses
                .iter()
                .map(|resp| {
                    let (s, c) = (2.0 * PI * rng.random::<f64>()).sin_cos();
                    c * resp.gain.im + s * resp.gain.re
                })
                .sum()
        } else {
            accumulated_phase(&cfg.source, &seq, r as f64 * period)?
        };
        let p = bright_probability(phi, cfg.axis, coherence);
        let x = sample_photons(p, &cfg.sensor, &mut rng) as f64;
        let n = (r + 1) as f64;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    let n = cfg.repetitions as f64;
    let stderr = if cfg.repetitions > 1 { (m2 / (n - 1.0) / n).sqrt() } else { f64::NAN };
    Ok(SweepPoint { tau, frequency: seq.resonance(), mean, stderr })
}

/// Conventional swept spectroscopy: averaged photon counts versus τ.
///
/// Grid points run in parallel, each on its own random stream, so the result
/// does not depend on the thread count.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    (0..cfg.taus.len()).into_par_iter().map(|i| sweep_point(cfg, i)).collect()
}
