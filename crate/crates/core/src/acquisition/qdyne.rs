use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::clock::{ClockModel, Ticker};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, SimRng};
use crate::sensor::{
    accumulated_phase, bright_probability, resonance_phase_amplitude, sample_photons, PulseSequence,
    ReadoutAxis, SensorParams, ToneResponse,
};
use crate::signals::FieldSource;
use crate::spectral::alias_offset;

/// Smallest number of measurements a Qdyne run may contain.
pub const MIN_MEASUREMENTS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdyneConfig {
    pub source: FieldSource,
    pub sequence: PulseSequence,
    pub sensor: SensorParams,
    pub axis: ReadoutAxis,
    pub clock: ClockModel,
    /// Total measurement time T, seconds.
    pub total_time: f64,
    pub seed: u64,
    /// Index of the first measurement; nonzero continues an earlier run.
    #[serde(default)]
    pub first_index: u64,
}

impl QdyneConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.clock.validate()?;
        PulseSequence::new(self.sequence.n_pulses, self.sequence.tau)?;
        let tl = self.sequence.interaction_time() + self.sensor.readout_dead_time;
        let nominal = self.clock.nominal_period;
        if (tl - nominal).abs() > 1e-9 * nominal {
            return Err(Error::config(format!(
                "interaction time {} s + dead time {} s = {} s must equal the clock period {} s",
                self.sequence.interaction_time(),
                self.sensor.readout_dead_time,
                tl,
                nominal
            )));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::config("total measurement time must be > 0"));
        }
        let n = self.n_measurements();
        if n < MIN_MEASUREMENTS {
            return Err(Error::config(format!(
                "total time {} s gives {n} measurements; at least {MIN_MEASUREMENTS} required",
                self.total_time
            )));
        }
        Ok(())
    }

    /// `N = floor(T / T_L)`, tolerant of the rounding in `T / T_L`.
    pub fn n_measurements(&self) -> u64 {
        let ratio = self.total_time / self.clock.nominal_period;
        (ratio * (1.0 + 1e-12)).floor() as u64
    }

    pub fn measurement_period(&self) -> f64 {
        self.clock.nominal_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub index: u64,
    pub t_start: f64,
    pub photons: u32,
}

enum PhaseModel {
    Tones(Vec<ToneResponse>),
    General(FieldSource),
}

/// Streaming Qdyne acquisition: one [`Record`] per clock tick.
///
/// The signal phase is never reset between measurements; each window sees
/// the field at its true start time.
pub struct QdyneSimulator {
    phase: PhaseModel,
    sequence: PulseSequence,
    sensor: SensorParams,
    axis: ReadoutAxis,
    coherence: f64,
    ticker: Ticker,
    photon_rng: SimRng,
    next_index: u64,
    end_index: u64,
}

impl QdyneSimulator {
    pub fn new(cfg: &QdyneConfig) -> Result<Self> {
        cfg.validate()?;
        let phase = match cfg.source.tones() {
            Some(tones) => PhaseModel::Tones(tones.iter().map(|t| ToneResponse::new(*t, &cfg.sequence)).collect()),
            None => PhaseModel::General(cfg.source.clone()),
        };
        let mut ticker = Ticker::new(cfg.clock, stream_rng(cfg.seed, stream::CLOCK))?;
        ticker.advance_to(cfg.first_index)?;
        let mut photon_rng = stream_rng(cfg.seed, stream::PHOTONS);
        photon_rng.set_word_pos(2 * cfg.first_index as u128);
        Ok(QdyneSimulator {
            phase,
            sequence: cfg.sequence,
            sensor: cfg.sensor,
            axis: cfg.axis,
            coherence: cfg.sensor.coherence(cfg.sequence.interaction_time()),
            ticker,
            photon_rng,
            next_index: cfg.first_index,
            end_index: cfg.first_index + cfg.n_measurements(),
        })
    }

    pub fn remaining(&self) -> u64 {
        self.end_index - self.next_index
    }

    fn step(&mut self) -> Result<Record> {
        let t_start = self.ticker.next_tick()?;
        let phi = match &self.phase {
            PhaseModel::Tones(responses) => responses.iter().map(|r| r.phase(t_start)).sum(),
            PhaseModel::General(source) => accumulated_phase(source, &self.sequence, t_start)?,
        };
        let p = bright_probability(phi, self.axis, self.coherence);
        let photons = sample_photons(p, &self.sensor, &mut self.photon_rng);
        let index = self.next_index;
        self.next_index += 1;
        Ok(Record { index, t_start, photons })
    }
}

impl Iterator for QdyneSimulator {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_index >= self.end_index {
            return None;
        }
        let r = self.step();
        if r.is_err() {
            // abort the run on the first failure
            self.end_index = self.next_index;
        }
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining() as usize;
        (n, Some(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub seed: u64,
    pub n_records: u64,
    pub first_index: u64,
    /// Nominal measurement period T_L, seconds.
    pub measurement_period: f64,
    pub interaction_time: f64,
    /// Snapshot of the generating configuration, if known.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

/// Per-measurement photon counts, densely indexed from `first_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionTrace {
    pub start_times: Vec<f64>,
    pub photons: Vec<u32>,
    pub metadata: TraceMetadata,
}

impl AcquisitionTrace {
    pub fn from_records(records: &[Record], metadata: TraceMetadata) -> Result<Self> {
        let first = metadata.first_index;
        for (i, r) in records.iter().enumerate() {
            let expected = first + i as u64;
            if r.index != expected {
                return Err(Error::CorruptTrace {
                    record: i as u64,
                    reason: format!("index {} where {expected} expected (gaps unsupported)", r.index),
                });
            }
            if i > 0 && !(r.t_start > records[i - 1].t_start) {
                return Err(Error::CorruptTrace {
                    record: i as u64,
                    reason: format!("start time {} not after {}", r.t_start, records[i - 1].t_start),
                });
            }
        }
        Ok(AcquisitionTrace {
            start_times: records.iter().map(|r| r.t_start).collect(),
            photons: records.iter().map(|r| r.photons).collect(),
            metadata: TraceMetadata { n_records: records.len() as u64, ..metadata },
        })
    }

    pub fn len(&self) -> usize {
        self.photons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photons.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        let first = self.metadata.first_index;
        self.start_times
            .iter()
            .zip(&self.photons)
            .enumerate()
            .map(move |(i, (&t_start, &photons))| Record { index: first + i as u64, t_start, photons })
    }

    /// First `n` records.
    pub fn truncated(&self, n: usize) -> AcquisitionTrace {
        let n = n.min(self.len());
        AcquisitionTrace {
            start_times: self.start_times[..n].to_vec(),
            photons: self.photons[..n].to_vec(),
            metadata: TraceMetadata { n_records: n as u64, ..self.metadata.clone() },
        }
    }

    pub fn counts(&self) -> Vec<f64> {
        self.photons.iter().map(|&c| c as f64).collect()
    }
}

/// Runs a full Qdyne acquisition and keeps every record.
pub fn run_qdyne(cfg: &QdyneConfig) -> Result<AcquisitionTrace> {
    let sim = QdyneSimulator::new(cfg)?;
    let n = sim.remaining() as usize;
    let mut start_times = Vec::with_capacity(n);
    let mut photons = Vec::with_capacity(n);
    for r in sim {
        let r = r?;
        start_times.push(r.t_start);
        photons.push(r.photons);
    }
    Ok(AcquisitionTrace {
        metadata: TraceMetadata {
            seed: cfg.seed,
            n_records: photons.len() as u64,
            first_index: cfg.first_index,
            measurement_period: cfg.measurement_period(),
            interaction_time: cfg.sequence.interaction_time(),
            config: serde_json::to_value(cfg).ok(),
        },
        start_times,
        photons,
    })
}

/// Photon counts summed over consecutive groups of records.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCounts {
    pub counts: Vec<f64>,
    /// Duration of one bin, `bin_factor × T_L`.
    pub sample_period: f64,
    pub bin_factor: usize,
}

impl BinnedCounts {
    pub fn from_trace(trace: &AcquisitionTrace, bin_factor: usize) -> Result<Self> {
        if bin_factor == 0 {
            return Err(Error::domain("bin factor must be >= 1"));
        }
        let counts = trace
            .photons
            .chunks_exact(bin_factor)
            .map(|c| c.iter().map(|&x| x as f64).sum())
            .collect();
        Ok(BinnedCounts { counts, sample_period: bin_factor as f64 * trace.metadata.measurement_period, bin_factor })
    }
}

/// Streams a Qdyne run straight into bins without storing records.
///
/// A trailing partial bin is dropped.
pub fn simulate_binned(cfg: &QdyneConfig, bin_factor: usize) -> Result<BinnedCounts> {
    if bin_factor == 0 {
        return Err(Error::domain("bin factor must be >= 1"));
    }
    let sim = QdyneSimulator::new(cfg)?;
    let mut counts = Vec::with_capacity(sim.remaining() as usize / bin_factor);
    let mut acc = 0u64;
    let mut filled = 0usize;
    for r in sim {
        acc += r?.photons as u64;
        filled += 1;
        if filled == bin_factor {
            counts.push(acc as f64);
            acc = 0;
            filled = 0;
        }
    }
    Ok(BinnedCounts { counts, sample_period: bin_factor as f64 * cfg.measurement_period(), bin_factor })
}

/// Closed-form phase series `(2kT_s/π) cos(2π s δ T_n + Φ)` for a single tone
/// and a perfect clock.
///
/// `δ` and the sign `s` come from [`alias_offset`]; `Φ` is the tone phase at
/// `t = 0`, so the first measurement at `T_L` carries the `2πsδT_L` offset.
pub fn expected_phase_series(cfg: &QdyneConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let FieldSource::Tone(tone) = &cfg.source else {
        return Err(Error::Unsupported("closed-form phase series needs a single-tone source".into()));
    };
    if !cfg.clock.is_perfect() {
        return Err(Error::Unsupported("closed-form phase series needs a perfect clock".into()));
    }
    let tl = cfg.clock.nominal_period;
    let alias = alias_offset(tone.frequency, tl)?;
    let amp = resonance_phase_amplitude(tone.amplitude, &cfg.sequence);
    let beat = alias.sign * alias.delta;
    Ok((0..cfg.n_measurements())
        .map(|i| {
            let t_n = (cfg.first_index + i + 1) as f64 * tl;
            // reduce the beat phase before scaling to keep precision for long runs
            let cycles = beat * t_n;
            amp * (2.0 * PI * (cycles - cycles.floor()) + tone.phase).cos()
        })
        .collect())
}
