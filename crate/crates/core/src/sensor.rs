//! Two-level sensor under an XY8 decoupling sequence.
//!
//! Phase accumulation is modelled in the toggling frame: every ideal π pulse
//! flips the sign with which the field `k(t)` enters the relative phase, so
//! the accumulated phase over one interaction window is `∫ f(u) k(t₀+u) du`
//! with `f = ±1`.
//!
//! Timing: the window `[t₀, t₀ + T_s]` with `T_s = n τ` is split into `n`
//! free-evolution intervals of length `τ`, with π pulses at `t₀ + jτ`,
//! `j = 1..n` (the last one coinciding with the end of the window). At
//! `τ = 1/(2ν)` this rectifies `k sin(2πνt + Φ)` and yields the phase
//! `(2kT_s/π) cos Φ`.

use std::f64::consts::{FRAC_PI_2, PI};

use rustfft::num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{FieldSource, ModulatedCarrier, SampledTrace, Tone};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    /// Number of π pulses; a positive multiple of 8.
    pub n_pulses: u32,
    /// Interpulse delay τ, seconds.
    pub tau: f64,
}

impl PulseSequence {
    pub fn new(n_pulses: u32, tau: f64) -> Result<Self> {
        if n_pulses == 0 || n_pulses % 8 != 0 {
            return Err(Error::config(format!(
                "XY8 pulse count must be a positive multiple of 8, got {n_pulses}"
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::config(format!("interpulse delay must be > 0, got {tau}")));
        }
        Ok(PulseSequence { n_pulses, tau })
    }

    /// XY8-N with `order` repetitions of the 8-pulse block.
    pub fn xy8(order: u32, tau: f64) -> Result<Self> {
        PulseSequence::new(8 * order, tau)
    }

    /// Interaction time `T_s`.
    pub fn interaction_time(&self) -> f64 {
        self.n_pulses as f64 * self.tau
    }

    /// Frequency the sequence is tuned to, `1/(2τ)`.
    pub fn resonance(&self) -> f64 {
        1.0 / (2.0 * self.tau)
    }

    /// Toggling-frame intervals as `(start, end, sign)` relative to the window start.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.n_pulses).map(move |j| {
            let a = j as f64 * self.tau;
            let b = (j + 1) as f64 * self.tau;
            (a, b, if j % 2 == 0 { 1.0 } else { -1.0 })
        })
    }

    /// `∫₀^{T_s} f(u) e^{iωu} du` for angular frequency `omega`.
    pub fn transfer(&self, omega: f64) -> Complex64 {
        // each interval contributes sign * e^{iωa} * τ e^{iωτ/2} sinc(ωτ/2)
        let half = 0.5 * omega * self.tau;
        let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
        let per_interval = Complex64::from_polar(self.tau * sinc, half);
        let step = Complex64::from_polar(1.0, omega * self.tau);
        let mut z = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.n_pulses {
            if j % 2 == 0 {
                acc += z;
            } else {
                acc -= z;
            }
            z *= step;
        }
        acc * per_interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    /// Coherence time T₂, seconds.
    pub t2: f64,
    /// Stretch exponent of the coherence decay.
    pub decay_exponent: f64,
    /// Fractional fluorescence contrast between bright and dark states.
    pub contrast: f64,
    /// Mean detected photons per readout of the bright state.
    pub mean_photons_bright: f64,
    /// Readout plus re-initialisation time appended after each window, seconds.
    pub readout_dead_time: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            t2: 100e-6,
            decay_exponent: 1.0,
            contrast: 0.3,
            mean_photons_bright: 0.03,
            readout_dead_time: 5e-6,
        }
    }
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0) {
            return Err(Error::config(format!("t2 must be > 0, got {}", self.t2)));
        }
        if !(self.decay_exponent > 0.0) || !self.decay_exponent.is_finite() {
            return Err(Error::config("decay exponent must be > 0"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::config(format!("contrast must lie in (0, 1], got {}", self.contrast)));
        }
        if !(self.mean_photons_bright > 0.0) || !self.mean_photons_bright.is_finite() {
            return Err(Error::config("mean photons per bright readout must be > 0"));
        }
        if !(self.readout_dead_time >= 0.0) || !self.readout_dead_time.is_finite() {
            return Err(Error::config("readout dead time must be >= 0"));
        }
        Ok(())
    }

    /// Interference-term envelope `exp(−(T_s/T₂)^β)` after interaction time `ts`.
    pub fn coherence(&self, ts: f64) -> f64 {
        (-(ts / self.t2).powf(self.decay_exponent)).exp()
    }

    /// Mean photon count for bright-state probability `p`.
    pub fn mean_photons(&self, p: f64) -> f64 {
        self.mean_photons_bright * (p + (1.0 - p) * (1.0 - self.contrast))
    }
}

/// Phase of the closing π/2 rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutAxis {
    pub final_pulse_phase: f64,
}

impl ReadoutAxis {
    /// Response ∝ sin φ; maximal slope for small phases. Used by Qdyne.
    pub const PHASE: ReadoutAxis = ReadoutAxis { final_pulse_phase: 0.0 };
    /// Response ∝ cos φ; plain population readout used by swept spectroscopy.
    pub const POPULATION: ReadoutAxis = ReadoutAxis { final_pulse_phase: FRAC_PI_2 };
}

impl Default for ReadoutAxis {
    fn default() -> Self {
        ReadoutAxis::PHASE
    }
}

/// Precomputed response of a sequence to one tone: `φ = Im[e^{iθ₀} gain]`,
/// where `θ₀` is the tone phase at the window start.
#[derive(Debug, Clone, Copy)]
pub struct ToneResponse {
    pub tone: Tone,
    pub gain: Complex64,
}

impl ToneResponse {
    pub fn new(tone: Tone, seq: &PulseSequence) -> Self {
        let gain = seq.transfer(2.0 * PI * tone.frequency) * tone.amplitude;
        ToneResponse { tone, gain }
    }

    #[inline]
    pub fn phase(&self, t_start: f64) -> f64 {
        let theta = self.tone.phase_at(t_start);
        let (s, c) = theta.sin_cos();
        // Im[(c + i s)(g.re + i g.im)]
        c * self.gain.im + s * self.gain.re
    }
}

/// `∫_a^b` of the linear interpolant of `trace`.
fn integrate_linear(trace: &SampledTrace, a: f64, b: f64) -> f64 {
    let (ia, _) = trace.locate(a);
    let (ib, _) = trace.locate(b);
    let value = |t: f64| {
        let (i, w) = trace.locate(t);
        trace.values[i] + w * (trace.values[i + 1] - trace.values[i])
    };
    let knot = |i: usize| trace.start + i as f64 * trace.period;
    let mut acc = 0.0;
    let mut left_t = a;
    let mut left_v = value(a);
    for i in (ia + 1)..=ib {
        let t = knot(i);
        if t <= left_t || t >= b {
            continue;
        }
        let v = trace.values[i];
        acc += 0.5 * (left_v + v) * (t - left_t);
        left_t = t;
        left_v = v;
    }
    acc + 0.5 * (left_v + value(b)) * (b - left_t)
}

fn check_window(trace: &SampledTrace, t_start: f64, ts: f64) -> Result<()> {
    let end = trace.end();
    let t_end = t_start + ts;
    if t_start < trace.start || t_end > end + end.abs() * 4.0 * f64::EPSILON {
        return Err(Error::Range { t: if t_start < trace.start { t_start } else { t_end }, start: trace.start, end });
    }
    Ok(())
}

fn modulated_phase(m: &ModulatedCarrier, seq: &PulseSequence, t_start: f64) -> Result<f64> {
    let ts = seq.interaction_time();
    check_window(&m.in_phase, t_start, ts)?;
    // The envelope is taken at the window midpoint; it varies on the bath
    // correlation time, which is long compared with T_s.
    let (i, q) = m.envelope(t_start + 0.5 * ts)?;
    let cycles = m.carrier * t_start;
    let theta = 2.0 * PI * (cycles - cycles.floor());
    let gain = seq.transfer(2.0 * PI * m.carrier);
    Ok((Complex64::new(i, q) * Complex64::from_polar(1.0, theta) * gain).re)
}

/// Net sensor phase for an interaction window starting at `t_start`.
pub fn accumulated_phase(source: &FieldSource, seq: &PulseSequence, t_start: f64) -> Result<f64> {
    if t_start < 0.0 {
        return Err(Error::domain("window start must be >= 0"));
    }
    match source {
        FieldSource::Tone(tone) => Ok(ToneResponse::new(*tone, seq).phase(t_start)),
        FieldSource::Tones(tones) => {
            Ok(tones.iter().map(|t| ToneResponse::new(*t, seq).phase(t_start)).sum())
        }
        FieldSource::Sampled(trace) => {
            check_window(trace, t_start, seq.interaction_time())?;
            Ok(seq
                .intervals()
                .map(|(a, b, sign)| sign * integrate_linear(trace, t_start + a, t_start + b))
                .sum())
        }
        FieldSource::Modulated(m) => modulated_phase(m, seq, t_start),
    }
}

/// Closed-form resonant phase amplitude `2kT_s/π`.
pub fn resonance_phase_amplitude(k: f64, seq: &PulseSequence) -> f64 {
    2.0 * k * seq.interaction_time() / PI
}

/// Normalized sensitivity of the sequence to a tone at `nu`; 1 on resonance.
///
/// Maximizes the phase over the tone phase using the quadrature pair
/// `Φ = 0` and `Φ = π/2`.
pub fn filter_weight(nu: f64, seq: &PulseSequence) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::domain(format!("frequency must be > 0, got {nu}")));
    }
    let phase = |phi: f64| -> Result<f64> {
        accumulated_phase(&FieldSource::Tone(Tone::new(1.0, nu, phi)?), seq, 0.0)
    };
    let (p0, p90) = (phase(0.0)?, phase(FRAC_PI_2)?);
    Ok(p0.hypot(p90) / resonance_phase_amplitude(1.0, seq))
}

/// Probability of the bright outcome for sensor phase `phi`.
///
/// `coherence` is the decay envelope, usually [`SensorParams::coherence`].
pub fn bright_probability(phi: f64, axis: ReadoutAxis, coherence: f64) -> f64 {
    (0.5 + 0.5 * coherence * (phi + axis.final_pulse_phase).sin()).clamp(0.0, 1.0)
}

/// Largest mean for which photons are drawn by single-uniform inversion.
const INVERSION_LIMIT: f64 = 30.0;

/// Poisson draw consuming exactly one `u64` from `rng` when `mean <= 30`.
///
/// The fixed consumption keeps the photon stream addressable by record
/// index, which lets a continued run reproduce the tail of a longer one.
pub fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= INVERSION_LIMIT {
        let u: f64 = rng.random();
        if !(mean > 0.0) {
            return 0;
        }
        let mut k = 0u32;
        let mut pmf = (-mean).exp();
        let mut cdf = pmf;
        while u >= cdf {
            k += 1;
            pmf *= mean / k as f64;
            let next = cdf + pmf;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    } else {
        Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
    }
}

/// Photon count of one readout with bright-state probability `p_bright`.
pub fn sample_photons<R: Rng + ?Sized>(p_bright: f64, params: &SensorParams, rng: &mut R) -> u32 {
    poisson_draw(params.mean_photons(p_bright.clamp(0.0, 1.0)), rng)
}
