//! Experiment definitions read from TOML.
//!
//! One file describes one experiment. Every section is optional and falls
//! back to the defaults below; [`ExperimentConfig::resolve`] fills in the
//! values that depend on other sections so the manifest can record exactly
//! what ran.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{QdyneConfig, SweepConfig};
use crate::clock::ClockModel;
use crate::error::{Error, Result};
use crate::nanonmr::BathConfig;
use crate::sensor::{PulseSequence, ReadoutAxis, SensorParams};
use crate::signals::{field_to_k, FieldSource, FieldUnitConversion, SampledTrace, Tone, DEFAULT_GYROMAGNETIC_SCALE};
use crate::spectral::{alias_offset, FitBand, PeriodogramOptions, QdyneAnalysis, ScalingMethod, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Single Qdyne acquisition: trace, spectrum and peak fit.
    Qdyne,
    /// Conventional τ sweep with a Lorentzian dip fit.
    Sweep,
    /// Linewidth, SNR and precision versus total time.
    Scaling,
    /// Qdyne line power versus detuning from the filter resonance.
    Bandwidth,
    /// Several tones resolved in one spectrum.
    Multitone,
    /// Qdyne acquisition of a simulated nuclear spin bath.
    Nmr,
    /// Spectrum and fit of a stored trace.
    Analyze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub sensor: SensorParams,
    #[serde(default)]
    pub clock: ClockSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub bandwidth: BandwidthSection,
    #[serde(default)]
    pub bath: BathConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A tone given either as a coupling (`amplitude`, rad/s) or as a field
/// (`field_tesla`, converted with the section's gyromagnetic scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_tesla: Option<f64>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl ToneSpec {
    fn coupling(&self, conv: FieldUnitConversion) -> Result<f64> {
        match (self.amplitude, self.field_tesla) {
            (Some(k), None) => Ok(k),
            (None, Some(b)) => field_to_k(b, conv),
            // an effective config records both; accept them when they agree
            (Some(k), Some(b)) if field_to_k(b, conv)? == k => Ok(k),
            (Some(_), Some(_)) => Err(Error::config("signal.tones: give either amplitude or field_tesla, not both")),
            (None, None) => Err(Error::config("signal.tones: each tone needs amplitude or field_tesla")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    /// Defaults to one 880 nT tone at 1 MHz + 20 Hz when no trace is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tones: Option<Vec<ToneSpec>>,
    /// Two-column `(time_s, k_rad_per_s)` CSV, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
    /// rad/s per tesla.
    pub gyromagnetic_scale: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        SignalSection { tones: None, trace_csv: None, gyromagnetic_scale: DEFAULT_GYROMAGNETIC_SCALE }
    }
}

fn default_tones() -> Vec<ToneSpec> {
    vec![ToneSpec { amplitude: None, field_tesla: Some(880e-9), frequency: 1e6 + 20.0, phase: 0.0 }]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    pub n_pulses: u32,
    /// Interpulse delay, seconds.
    pub tau: f64,
}

impl Default for SequenceSection {
    fn default() -> Self {
        SequenceSection { n_pulses: 8, tau: 500e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockSection {
    /// Defaults to the interaction time plus the readout dead time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_period: Option<f64>,
    pub white_jitter_sigma: f64,
    pub frequency_random_walk_sigma: f64,
    pub stability_horizon: f64,
}

impl Default for ClockSection {
    fn default() -> Self {
        ClockSection {
            nominal_period: None,
            white_jitter_sigma: 0.0,
            frequency_random_walk_sigma: 0.0,
            stability_horizon: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    /// Total acquisition time, seconds.
    pub total_time: f64,
    /// Phase of the final π/2 pulse, rad. `0` reads `sin φ`, `π/2` reads `cos φ`.
    pub readout_phase: f64,
    pub first_index: u64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection { total_time: 10.0, readout_phase: 0.0, first_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub window: Window,
    pub zero_pad_factor: usize,
    pub bin_factor: usize,
    pub segments: usize,
    /// Explicit fit band `[lo, hi]`, Hz. Otherwise bands are centred on the
    /// expected alias of each tone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    /// Half-width of the automatic bands, Hz. Defaults to `8 / T`, with `T`
    /// the acquisition time or the stored trace's duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_half_width: Option<f64>,
    /// False-alarm probability of the peak significance gate.
    pub false_alarm: f64,
    /// Stored trace for `kind = "analyze"`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            window: Window::Rectangular,
            zero_pad_factor: 8,
            bin_factor: 1,
            segments: 1,
            band: None,
            band_half_width: None,
            false_alarm: 1e-3,
            trace: None,
        }
    }
}

impl AnalysisSection {
    pub fn periodogram(&self) -> PeriodogramOptions {
        PeriodogramOptions {
            window: self.window,
            zero_pad_factor: self.zero_pad_factor,
            bin_factor: self.bin_factor,
            segments: self.segments,
        }
    }

    /// Fit band around `center` for an acquisition of length `total_time`.
    pub fn band_around(&self, center: f64, total_time: f64) -> (f64, f64) {
        if let Some([lo, hi]) = self.band {
            return (lo, hi);
        }
        let h = self.band_half_width.unwrap_or(8.0 / total_time);
        ((center - h).max(0.0), center + h)
    }

    pub fn validate(&self) -> Result<()> {
        self.periodogram().validate()?;
        if let Some([lo, hi]) = self.band {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::config(format!("analysis.band must satisfy 0 <= lo < hi, got [{lo}, {hi}]")));
            }
        }
        if let Some(h) = self.band_half_width {
            if !(h > 0.0) {
                return Err(Error::config("analysis.band_half_width must be > 0"));
            }
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return Err(Error::config("analysis.false_alarm must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Filter resonance `1/(2τ)` of the first grid point, Hz.
    pub start_frequency: f64,
    pub stop_frequency: f64,
    pub points: usize,
    pub repetitions: u64,
    pub random_phase: bool,
    pub readout_phase: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            start_frequency: 0.5e6,
            stop_frequency: 1.5e6,
            points: 50,
            repetitions: 10_000,
            random_phase: true,
            readout_phase: FRAC_PI_2,
        }
    }
}

impl SweepSection {
    /// Interpulse delays for frequencies evenly spaced over the range, in
    /// increasing τ order.
    pub fn taus(&self) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(Error::config("sweep.points must be >= 2"));
        }
        if !(self.start_frequency > 0.0 && self.stop_frequency > self.start_frequency) {
            return Err(Error::config("sweep frequencies must satisfy 0 < start_frequency < stop_frequency"));
        }
        let step = (self.stop_frequency - self.start_frequency) / (self.points - 1) as f64;
        let mut taus: Vec<f64> =
            (0..self.points).map(|i| 1.0 / (2.0 * (self.start_frequency + i as f64 * step))).collect();
        taus.reverse();
        Ok(taus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingKind {
    Qdyne,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub method: ScalingKind,
    /// Total times, seconds.
    pub times: Vec<f64>,
    pub trials: usize,
    /// Qdyne fit half-width in units of `1/T`.
    pub band_half_width: f64,
    /// Floor on the Qdyne fit half-width, Hz.
    pub min_band_half_width: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            method: ScalingKind::Qdyne,
            times: vec![1.0, 3.0, 10.0, 32.0],
            trials: 10,
            band_half_width: 1.5,
            min_band_half_width: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthSection {
    /// Detunings from the first tone's frequency, Hz.
    pub detuning_start: f64,
    pub detuning_stop: f64,
    pub detuning_step: f64,
}

impl Default for BandwidthSection {
    fn default() -> Self {
        BandwidthSection { detuning_start: -300e3, detuning_stop: 300e3, detuning_step: 10e3 }
    }
}

impl BandwidthSection {
    pub fn detunings(&self) -> Result<Vec<f64>> {
        if !(self.detuning_step > 0.0) || !(self.detuning_stop >= self.detuning_start) {
            return Err(Error::config("bandwidth: need detuning_step > 0 and detuning_stop >= detuning_start"));
        }
        let n = ((self.detuning_stop - self.detuning_start) / self.detuning_step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.detuning_start + i as f64 * self.detuning_step).collect())
    }
}

impl ExperimentConfig {
    /// Parses a config file. Schema violations come back as [`Error::Parse`]
    /// naming the offending field.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let cfg = Self::parse(text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })?;
        Ok((cfg, bytes))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse { path: PathBuf::from("<config>"), message: e.to_string() })
    }

    /// Fills defaults that depend on other sections, rebases relative input
    /// paths on `base_dir`, and checks the sections the kind uses.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<()> {
        if self.signal.trace_csv.is_some() && self.signal.tones.is_some() {
            return Err(Error::config("signal: give either tones or trace_csv, not both"));
        }
        if self.signal.trace_csv.is_none() && self.signal.tones.is_none() {
            self.signal.tones = Some(default_tones());
        }
        let conv = FieldUnitConversion::new(self.signal.gyromagnetic_scale)?;
        if let Some(tones) = &mut self.signal.tones {
            if tones.is_empty() {
                return Err(Error::config("signal.tones is empty"));
            }
            for t in tones.iter_mut() {
                t.amplitude = Some(t.coupling(conv)?);
            }
        }
        for p in [&mut self.signal.trace_csv, &mut self.analysis.trace].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        let seq = self.pulse_sequence()?;
        self.sensor.validate()?;
        if self.clock.nominal_period.is_none() {
            self.clock.nominal_period = Some(seq.interaction_time() + self.sensor.readout_dead_time);
        }
        self.clock_model().validate()?;
        self.analysis.validate()?;
        // a stored trace sets its own length
        if self.analysis.band_half_width.is_none() && self.analysis.band.is_none() && self.kind != ExperimentKind::Analyze {
            self.analysis.band_half_width = Some(8.0 / self.acquisition.total_time);
        }
        self.bath.seed = self.seed;
        self.check_kind()
    }

    fn check_kind(&self) -> Result<()> {
        match self.kind {
            ExperimentKind::Qdyne | ExperimentKind::Multitone => {
                self.qdyne_config(FieldSource::Tone(Tone::new(0.0, 1.0, 0.0)?))?.validate()?;
                if self.kind == ExperimentKind::Multitone && self.signal.tones.is_none() {
                    return Err(Error::config("multitone needs signal.tones"));
                }
                if self.signal.tones.is_none() && self.analysis.band.is_none() {
                    return Err(Error::config("analysis.band is required for a sampled signal"));
                }
            }
            ExperimentKind::Sweep => self.sweep_config(self.sweep.repetitions)?.validate()?,
            ExperimentKind::Scaling => {
                if self.scaling.times.is_empty() {
                    return Err(Error::config("scaling.times is empty"));
                }
                if self.scaling.method == ScalingKind::Qdyne {
                    self.tone_list()?;
                    self.qdyne_config(FieldSource::Tone(Tone::new(0.0, 1.0, 0.0)?))?.validate()?;
                } else {
                    self.sweep_config(1)?.validate()?;
                }
            }
            ExperimentKind::Bandwidth => {
                self.tone_list()?;
                self.bandwidth.detunings()?;
                self.qdyne_config(FieldSource::Tone(Tone::new(0.0, 1.0, 0.0)?))?.validate()?;
            }
            ExperimentKind::Nmr => {
                self.bath.validate()?;
                self.qdyne_config(FieldSource::Tone(Tone::new(0.0, 1.0, 0.0)?))?.validate()?;
                let needed = self.acquisition.total_time + 2.0 * self.clock_model().nominal_period;
                if self.bath.duration < needed {
                    return Err(Error::config(format!(
                        "bath.duration {} s must cover the acquisition ({needed} s)",
                        self.bath.duration
                    )));
                }
            }
            // the trace may also come from the command line
            ExperimentKind::Analyze => {}
        }
        Ok(())
    }

    pub fn pulse_sequence(&self) -> Result<PulseSequence> {
        PulseSequence::new(self.sequence.n_pulses, self.sequence.tau)
    }

    pub fn clock_model(&self) -> ClockModel {
        ClockModel {
            nominal_period: self.clock.nominal_period.unwrap_or(f64::NAN),
            white_jitter_sigma: self.clock.white_jitter_sigma,
            frequency_random_walk_sigma: self.clock.frequency_random_walk_sigma,
            stability_horizon: self.clock.stability_horizon,
        }
    }

    /// Resolved tones; fails for a sampled signal.
    pub fn tone_list(&self) -> Result<Vec<Tone>> {
        let specs = self
            .signal
            .tones
            .as_ref()
            .ok_or_else(|| Error::Unsupported("this experiment needs signal.tones".into()))?;
        let conv = FieldUnitConversion::new(self.signal.gyromagnetic_scale)?;
        // after `resolve` the converted coupling sits next to the field it came from
        specs
            .iter()
            .map(|t| Tone::new(t.amplitude.map_or_else(|| t.coupling(conv), Ok)?, t.frequency, t.phase))
            .collect()
    }

    pub fn field_source(&self) -> Result<FieldSource> {
        if let Some(path) = &self.signal.trace_csv {
            return Ok(FieldSource::Sampled(SampledTrace::load_csv(path)?));
        }
        let mut tones = self.tone_list()?;
        Ok(if tones.len() == 1 { FieldSource::Tone(tones.remove(0)) } else { FieldSource::Tones(tones) })
    }

    pub fn qdyne_config(&self, source: FieldSource) -> Result<QdyneConfig> {
        Ok(QdyneConfig {
            source,
            sequence: self.pulse_sequence()?,
            sensor: self.sensor,
            axis: ReadoutAxis { final_pulse_phase: self.acquisition.readout_phase },
            clock: self.clock_model(),
            total_time: self.acquisition.total_time,
            seed: self.seed,
            first_index: self.acquisition.first_index,
        })
    }

    pub fn sweep_config(&self, repetitions: u64) -> Result<SweepConfig> {
        Ok(SweepConfig {
            source: self.field_source()?,
            sensor: self.sensor,
            axis: ReadoutAxis { final_pulse_phase: self.sweep.readout_phase },
            n_pulses: self.sequence.n_pulses,
            taus: self.sweep.taus()?,
            repetitions,
            random_phase: self.sweep.random_phase,
            seed: self.seed,
        })
    }

    /// Expected alias of every tone, Hz.
    pub fn alias_centers(&self) -> Result<Vec<f64>> {
        let t_l = self.clock_model().nominal_period;
        self.tone_list()?.iter().map(|t| Ok(alias_offset(t.frequency, t_l)?.delta)).collect()
    }

    pub fn scaling_method(&self) -> Result<ScalingMethod> {
        Ok(match self.scaling.method {
            ScalingKind::Qdyne => {
                let source = self.field_source()?;
                let center = self.alias_centers()?[0];
                ScalingMethod::Qdyne {
                    config: self.qdyne_config(source)?,
                    analysis: QdyneAnalysis {
                        periodogram: self.analysis.periodogram(),
                        band: FitBand {
                            center,
                            half_width: self.scaling.band_half_width,
                            min_half_width: self.scaling.min_band_half_width,
                        },
                    },
                }
            }
            ScalingKind::Sweep => ScalingMethod::Sweep { config: self.sweep_config(1)? },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::parse(text)?;
        cfg.resolve(Path::new("."))?;
        Ok(cfg)
    }

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let cfg = resolved("kind = \"qdyne\"").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.sequence, SequenceSection::default());
        assert_eq!(cfg.sensor, SensorParams::default());
        assert!((cfg.clock.nominal_period.unwrap() - 9e-6).abs() < 1e-18);
        let tone = cfg.signal.tones.as_ref().unwrap()[0];
        assert_eq!(tone.amplitude, Some(880e-9 * DEFAULT_GYROMAGNETIC_SCALE));
        assert_eq!(cfg.analysis.band_half_width, Some(0.8));
        assert!((cfg.alias_centers().unwrap()[0] - 20.0).abs() < 1e-6);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::parse("kind = \"qdyne\"\n[sensor]\nt3 = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("t3"), "{err}");
        let err = ExperimentConfig::parse("kind = \"teleport\"").unwrap_err();
        assert!(err.to_string().contains("teleport"), "{err}");
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = resolved("kind = \"qdyne\"\n[sensor]\nmean_photons_bright = 1.0\n").unwrap();
        assert_eq!(cfg.sensor.mean_photons_bright, 1.0);
        assert_eq!(cfg.sensor.t2, SensorParams::default().t2);
    }

    #[test]
    fn tone_amplitude_and_field_are_exclusive() {
        let text = "kind = \"qdyne\"\n[[signal.tones]]\namplitude = 1.0\nfield_tesla = 1e-9\nfrequency = 1e6\n";
        assert!(matches!(resolved(text), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_clock_is_rejected() {
        let text = "kind = \"qdyne\"\n[clock]\nnominal_period = 10e-6\n";
        assert!(matches!(resolved(text), Err(Error::Config(_))));
    }

    #[test]
    fn nmr_bath_must_cover_acquisition() {
        let text = "kind = \"nmr\"\n[acquisition]\ntotal_time = 2.0\n";
        assert!(matches!(resolved(text), Err(Error::Config(_))));
        assert!(resolved("kind = \"nmr\"\n[acquisition]\ntotal_time = 0.5\n").is_ok());
    }

    #[test]
    fn sweep_grid_runs_in_increasing_tau() {
        let taus = SweepSection::default().taus().unwrap();
        assert_eq!(taus.len(), 50);
        assert!((taus[0] - 1.0 / 3e6).abs() < 1e-18);
        assert!((taus[49] - 1e-6).abs() < 1e-18);
        assert!(taus.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn detuning_grid_includes_both_ends() {
        let d = BandwidthSection::default().detunings().unwrap();
        assert_eq!(d.len(), 61);
        assert_eq!(d[0], -300e3);
        assert!((d[60] - 300e3).abs() < 1e-6);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = resolved("kind = \"multitone\"\n[[signal.tones]]\namplitude = 5.0\nfrequency = 1e6\n").unwrap();
        let mut back: ExperimentConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        back.resolve(Path::new(".")).unwrap();
        assert_eq!(back, cfg);
        let mut default_tone = resolved("kind = \"qdyne\"").unwrap();
        let again = default_tone.clone();
        default_tone.resolve(Path::new(".")).unwrap();
        assert_eq!(default_tone, again);
    }
}
