//! Oscillating-field sources that drive the sensor.
//!
//! A field is expressed directly as the coupling `k(t)` in rad/s, the
//! coefficient of `σ_z` in the sensor Hamiltonian. Conversion from tesla is an
//! explicit configuration step ([`FieldUnitConversion`]).

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::num;

/// Half the electron gyromagnetic ratio, rad/s per tesla.
pub const DEFAULT_GYROMAGNETIC_SCALE: f64 = 1.760_859_630_23e11 / 2.0;

/// `k sin(2πνt + Φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Coupling amplitude `k`, rad/s.
    pub amplitude: f64,
    /// Frequency `ν`, Hz.
    pub frequency: f64,
    /// Phase `Φ`, rad, normalized to `[0, 2π)`.
    pub phase: f64,
}

impl Tone {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::domain(format!("tone amplitude must be >= 0, got {amplitude}")));
        }
        if !(frequency > 0.0) || !frequency.is_finite() {
            return Err(Error::domain(format!("tone frequency must be > 0, got {frequency}")));
        }
        if !phase.is_finite() {
            return Err(Error::domain("tone phase must be finite"));
        }
        Ok(Tone { amplitude, frequency, phase: normalize_phase(phase) })
    }

    /// Signal phase `2πνt + Φ` reduced to `[0, 2π)`.
    ///
    /// The product `νt` is reduced to its fractional part before scaling so
    /// that the result stays accurate for `t` of hours at MHz frequencies.
    #[inline]
    pub fn phase_at(&self, t: f64) -> f64 {
        let cycles = self.frequency * t;
        normalize_phase(TAU * (cycles - cycles.floor()) + self.phase)
    }

    #[inline]
    pub fn evaluate(&self, t: f64) -> f64 {
        self.amplitude * self.phase_at(t).sin()
    }
}

pub(crate) fn normalize_phase(phi: f64) -> f64 {
    let p = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if p >= TAU { 0.0 } else { p }
}

/// Uniformly sampled `k(t)`, linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrace {
    pub start: f64,
    pub period: f64,
    pub values: Vec<f64>,
}

impl SampledTrace {
    pub fn new(start: f64, period: f64, values: Vec<f64>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::domain(format!("sample period must be > 0, got {period}")));
        }
        if values.len() < 2 {
            return Err(Error::domain("a sampled trace needs at least two samples"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("sampled trace contains non-finite values"));
        }
        Ok(SampledTrace { start, period, values })
    }

    pub fn end(&self) -> f64 {
        self.start + (self.values.len() - 1) as f64 * self.period
    }

    fn check_span(&self, t: f64) -> Result<()> {
        // half-ulp slack at the right edge so `end()` itself is evaluable
        let end = self.end();
        if t < self.start || t > end + end.abs() * 4.0 * f64::EPSILON {
            return Err(Error::Range { t, start: self.start, end });
        }
        Ok(())
    }

    /// Sample index and interpolation weight for `t` (caller checked the span).
    #[inline]
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t - self.start) / self.period;
        let last = self.values.len() - 2;
        let i = (x.floor().max(0.0) as usize).min(last);
        (i, (x - i as f64).clamp(0.0, 1.0))
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        self.check_span(t)?;
        let (i, w) = self.locate(t);
        Ok(self.values[i] + w * (self.values[i + 1] - self.values[i]))
    }

    /// Loads a `time_s,k_rad_per_s` CSV with a one-line header.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let reader = BufReader::new(File::open(path)?);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err(i + 1, "expected two columns".into()));
            };
            let t: f64 = t.trim().parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(parse_err(times.len() + 1, "need at least two samples".into()));
        }
        let period = times[1] - times[0];
        for (j, pair) in times.windows(2).enumerate() {
            let dt = pair[1] - pair[0];
            if (dt - period).abs() > 1e-6 * period.abs() {
                return Err(parse_err(j + 3, format!("non-uniform sample spacing {dt} vs {period}")));
            }
        }
        // recover the exact period from the full span rather than one difference
        let period = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        SampledTrace::new(times[0], period, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "time_s,k_rad_per_s")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", num(self.start + i as f64 * self.period), num(*v))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Carrier at a fixed frequency with a slowly varying complex envelope.
///
/// `k(t) = I(t) cos(2πνt) − Q(t) sin(2πνt)`, with `I` and `Q` sampled
/// uniformly and linearly interpolated. Used for nuclear-spin bath fields,
/// where the envelope varies on the correlation time and the carrier is the
/// Larmor frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatedCarrier {
    pub carrier: f64,
    pub in_phase: SampledTrace,
    pub quadrature: SampledTrace,
}

impl ModulatedCarrier {
    pub fn new(carrier: f64, in_phase: SampledTrace, quadrature: SampledTrace) -> Result<Self> {
        if !(carrier > 0.0) {
            return Err(Error::domain("carrier frequency must be > 0"));
        }
        if in_phase.start != quadrature.start
            || in_phase.period != quadrature.period
            || in_phase.values.len() != quadrature.values.len()
        {
            return Err(Error::domain("in-phase and quadrature envelopes must share a grid"));
        }
        Ok(ModulatedCarrier { carrier, in_phase, quadrature })
    }

    /// Complex envelope `I + iQ` at `t`.
    pub fn envelope(&self, t: f64) -> Result<(f64, f64)> {
        Ok((self.in_phase.evaluate(t)?, self.quadrature.evaluate(t)?))
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let (i, q) = self.envelope(t)?;
        let cycles = self.carrier * t;
        let theta = TAU * (cycles - cycles.floor());
        Ok(i * theta.cos() - q * theta.sin())
    }
}

/// A field `k(t)` acting on the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSource {
    Tone(Tone),
    Tones(Vec<Tone>),
    Sampled(SampledTrace),
    Modulated(ModulatedCarrier),
}

impl FieldSource {
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::domain(format!("evaluation time must be >= 0, got {t}")));
        }
        match self {
            FieldSource::Tone(tone) => Ok(tone.evaluate(t)),
            FieldSource::Tones(tones) => Ok(tones.iter().map(|tone| tone.evaluate(t)).sum()),
            FieldSource::Sampled(trace) => trace.evaluate(t),
            FieldSource::Modulated(m) => m.evaluate(t),
        }
    }

    /// Tones making up this source, if it is purely tonal.
    pub fn tones(&self) -> Option<&[Tone]> {
        match self {
            FieldSource::Tone(tone) => Some(std::slice::from_ref(tone)),
            FieldSource::Tones(tones) => Some(tones),
            _ => None,
        }
    }

    /// Same source with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> FieldSource {
        let scale_trace = |t: &SampledTrace| SampledTrace {
            values: t.values.iter().map(|v| v * factor).collect(),
            ..t.clone()
        };
        match self {
            FieldSource::Tone(t) => FieldSource::Tone(Tone { amplitude: t.amplitude * factor, ..*t }),
            FieldSource::Tones(ts) => FieldSource::Tones(
                ts.iter().map(|t| Tone { amplitude: t.amplitude * factor, ..*t }).collect(),
            ),
            FieldSource::Sampled(t) => FieldSource::Sampled(scale_trace(t)),
            FieldSource::Modulated(m) => FieldSource::Modulated(ModulatedCarrier {
                carrier: m.carrier,
                in_phase: scale_trace(&m.in_phase),
                quadrature: scale_trace(&m.quadrature),
            }),
        }
    }
}

impl From<Tone> for FieldSource {
    fn from(t: Tone) -> Self {
        FieldSource::Tone(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldUnitConversion {
    /// rad/s per tesla
    pub gyromagnetic_scale: f64,
}

impl FieldUnitConversion {
    pub fn new(gyromagnetic_scale: f64) -> Result<Self> {
        if !(gyromagnetic_scale > 0.0) || !gyromagnetic_scale.is_finite() {
            return Err(Error::domain("gyromagnetic scale must be strictly positive"));
        }
        Ok(FieldUnitConversion { gyromagnetic_scale })
    }
}

impl Default for FieldUnitConversion {
    fn default() -> Self {
        FieldUnitConversion { gyromagnetic_scale: DEFAULT_GYROMAGNETIC_SCALE }
    }
}

/// Field amplitude in tesla to coupling in rad/s.
pub fn field_to_k(b_tesla: f64, conv: FieldUnitConversion) -> Result<f64> {
    if !(b_tesla >= 0.0) {
        return Err(Error::domain(format!("field amplitude must be >= 0, got {b_tesla}")));
    }
    Ok(conv.gyromagnetic_scale * b_tesla)
}
