//! Command-line front end: `run`, `analyze` and `validate`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::acquisition::{
    read_trace, run_qdyne, run_sweep, simulate_binned, write_sweep_csv, write_trace, AcquisitionTrace, QdyneConfig,
};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::fmt::{num, short};
use crate::nanonmr::{correlation_time, simulate_bath};
use crate::rng::derive_seed;
use crate::sensor::filter_weight;
use crate::signals::{FieldSource, Tone};
use crate::spectral::{
    alias_offset, fit_lorentzian, fit_peak, peak_is_significant, periodogram, periodogram_series, scaling_harness,
    snr, write_spectrum_csv, Spectrum,
};

pub mod exit {
    pub const OK: i32 = 0;
    pub const SCHEMA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const IO: i32 = 4;
    pub const CORRUPT_TRACE: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "qdyne", version, about = "Qdyne sensing simulation and spectral analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel harnesses (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the output directory in the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Format of tabular artifacts.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Spectrum and peak fit of a stored trace.
    Analyze { trace: PathBuf, config: PathBuf },
    /// Check a config file and print its effective values.
    Validate { config: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) | Error::Capacity { .. } => exit::SCHEMA,
        Error::Domain(_) | Error::Range { .. } | Error::NoPeak { .. } | Error::Numerical(_) => exit::NUMERICAL,
        Error::Io(_) => exit::IO,
        Error::CorruptTrace { .. } => exit::CORRUPT_TRACE,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::SCHEMA } else { exit::OK };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::config("--threads must be >= 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Validate { config } => {
            let (cfg, _) = load(config, cli, None)?;
            let text = toml::to_string(&cfg).map_err(|e| Error::Numerical(e.to_string()))?;
            println!("# {} is valid; effective configuration:\n{text}", config.display());
            Ok(())
        }
        Command::Run { config } => {
            let (cfg, bytes) = load(config, cli, None)?;
            let mut session = Session::open(cfg, &bytes, cli, threads, "run", config)?;
            match session.cfg.kind {
                ExperimentKind::Qdyne => run_qdyne_kind(&mut session)?,
                ExperimentKind::Multitone => run_multitone(&mut session)?,
                ExperimentKind::Sweep => run_sweep_kind(&mut session)?,
                ExperimentKind::Scaling => run_scaling(&mut session)?,
                ExperimentKind::Bandwidth => run_bandwidth(&mut session)?,
                ExperimentKind::Nmr => run_nmr(&mut session)?,
                ExperimentKind::Analyze => {
                    let Some(trace) = session.cfg.analysis.trace.clone() else {
                        return Err(Error::config("kind = \"analyze\" needs analysis.trace (or use `qdyne analyze`)"));
                    };
                    analyze_trace(&mut session, &trace)?
                }
            }
            session.finish()
        }
        Command::Analyze { trace, config } => {
            let (cfg, bytes) = load(config, cli, Some(trace))?;
            let mut session = Session::open(cfg, &bytes, cli, threads, "analyze", config)?;
            analyze_trace(&mut session, trace)?;
            session.finish()
        }
    })
}

/// Loads and resolves a config, applying command-line overrides.
fn load(path: &Path, cli: &Cli, trace: Option<&Path>) -> Result<(ExperimentConfig, Vec<u8>)> {
    let (mut cfg, bytes) = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(trace) = trace {
        cfg.kind = ExperimentKind::Analyze;
        cfg.analysis.trace = Some(std::path::absolute(trace)?);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(base).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((cfg, bytes))
}

struct Session {
    cfg: ExperimentConfig,
    hash: String,
    format: Format,
    threads: usize,
    command: &'static str,
    config_path: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
}

impl Session {
    fn open(
        cfg: ExperimentConfig,
        bytes: &[u8],
        cli: &Cli,
        threads: usize,
        command: &'static str,
        config_path: &Path,
    ) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir)?;
        let hash = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Session {
            cfg,
            hash,
            format: cli.format,
            threads,
            command,
            config_path: config_path.to_path_buf(),
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.cfg.output_dir.join(name)
    }

    /// Writes `value` with the config hash and seed merged in.
    fn json(&mut self, name: &str, value: Value) -> Result<()> {
        let mut doc = json!({ "config_sha256": self.hash, "seed": self.cfg.seed });
        if let (Value::Object(dst), Value::Object(src)) = (&mut doc, value) {
            dst.extend(src);
        }
        let path = self.path(name);
        write_json(&path, &doc)
    }

    fn spectrum(&mut self, name: &str, spec: &Spectrum) -> Result<()> {
        match self.format {
            Format::Csv => {
                let path = self.path(&format!("{name}.csv"));
                write_spectrum_csv(spec, &path)
            }
            Format::Json => self.json(
                &format!("{name}.json"),
                json!({
                    "bin_width_hz": spec.bin_width,
                    "window": spec.window,
                    "n_records": spec.n_records,
                    "sample_period_s": spec.sample_period,
                    "n_fft": spec.n_fft,
                    "segments": spec.segments,
                    "freq_hz": spec.frequencies(),
                    "power": spec.power,
                }),
            ),
        }
    }

    fn finish(mut self) -> Result<()> {
        let effective = serde_json::to_value(&self.cfg).map_err(|e| Error::Numerical(e.to_string()))?;
        self.artifacts.sort();
        let manifest = json!({
            "tool": "qdyne",
            "version": env!("CARGO_PKG_VERSION"),
            "platform": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            "command": self.command,
            "config_path": self.config_path,
            "config_sha256": self.hash,
            "seed": self.cfg.seed,
            "threads": self.threads,
            "format": self.format,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "artifacts": self.artifacts,
            "effective_config": effective,
        });
        write_json(&self.cfg.output_dir.join("manifest.json"), &manifest)?;
        println!("wrote {} artifacts and manifest.json to {}", self.artifacts.len(), self.cfg.output_dir.display());
        Ok(())
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Peak fit in `[lo, hi]`, or a `no_peak` diagnostic when the band holds
/// nothing significant.
fn peak_report(spec: &Spectrum, lo: f64, hi: f64, false_alarm: f64) -> Result<Value> {
    let no_peak = |reason: String| json!({ "no_peak": true, "band_hz": [lo, hi], "reason": reason });
    match peak_is_significant(spec, lo, hi, false_alarm) {
        Ok(true) => {}
        Ok(false) => return Ok(no_peak(format!("band maximum below the false-alarm threshold (p = {false_alarm})"))),
        Err(e @ Error::NoPeak { .. }) => return Ok(no_peak(e.to_string())),
        Err(e) => return Err(e),
    }
    let fit = match fit_peak(spec, lo, hi) {
        Ok(fit) => fit,
        Err(e @ Error::NoPeak { .. }) => return Ok(no_peak(e.to_string())),
        Err(e) => return Err(e),
    };
    let snr = snr(spec, &fit).ok();
    Ok(json!({
        "no_peak": false,
        "band_hz": [lo, hi],
        "line_shape": "lorentzian",
        "fit": fit,
        "snr": snr,
    }))
}

fn describe_peak(label: &str, report: &Value) {
    if report["no_peak"] == Value::Bool(true) {
        println!("{label}: no peak ({})", report["reason"].as_str().unwrap_or(""));
        return;
    }
    let f = &report["fit"];
    let get = |k: &str| f[k].as_f64().unwrap_or(f64::NAN);
    println!(
        "{label}: center {} ± {} Hz, FWHM {} Hz, amplitude {}",
        short(get("center")),
        short(get("center_ci")),
        short(get("fwhm")),
        short(get("amplitude"))
    );
}

/// Band around the first tone's alias, or the explicit band.
fn primary_band(cfg: &ExperimentConfig, total_time: f64) -> Result<(f64, f64)> {
    if let Some([lo, hi]) = cfg.analysis.band {
        return Ok((lo, hi));
    }
    let center = cfg.alias_centers()?[0];
    Ok(cfg.analysis.band_around(center, total_time))
}

fn run_qdyne_kind(s: &mut Session) -> Result<()> {
    let qcfg = s.cfg.qdyne_config(s.cfg.field_source()?)?;
    let trace = run_qdyne(&qcfg)?;
    let path = s.path("trace.bin");
    write_trace(&trace, &path)?;
    s.artifacts.push("trace.bin.json".into());
    println!("simulated {} measurements ({} photons)", trace.len(), trace.photons.iter().map(|&p| p as u64).sum::<u64>());
    spectrum_and_peak(s, &trace)
}

fn spectrum_and_peak(s: &mut Session, trace: &AcquisitionTrace) -> Result<()> {
    let spec = periodogram(trace, &s.cfg.analysis.periodogram())?;
    s.spectrum("spectrum", &spec)?;
    let (lo, hi) = primary_band(&s.cfg, trace.len() as f64 * trace.metadata.measurement_period)?;
    let mut report = peak_report(&spec, lo, hi, s.cfg.analysis.false_alarm)?;
    if let Ok(centers) = s.cfg.alias_centers() {
        report["expected_alias_hz"] = json!(centers[0]);
    }
    describe_peak("peak", &report);
    s.json("peak.json", report)
}

fn run_multitone(s: &mut Session) -> Result<()> {
    let qcfg = s.cfg.qdyne_config(s.cfg.field_source()?)?;
    let opts = s.cfg.analysis.periodogram();
    let binned = simulate_binned(&qcfg, opts.bin_factor)?;
    let spec = periodogram_series(&binned.counts, binned.sample_period, &crate::spectral::PeriodogramOptions { bin_factor: 1, ..opts })?;
    s.spectrum("spectrum", &spec)?;
    let mut peaks = Vec::new();
    for (i, center) in s.cfg.alias_centers()?.into_iter().enumerate() {
        let (lo, hi) = s.cfg.analysis.band_around(center, qcfg.total_time);
        let mut report = peak_report(&spec, lo, hi, s.cfg.analysis.false_alarm)?;
        report["expected_alias_hz"] = json!(center);
        describe_peak(&format!("tone {i}"), &report);
        peaks.push(report);
    }
    let centers: Vec<Option<f64>> = peaks.iter().map(|p| p["fit"]["center"].as_f64()).collect();
    let spacings: Vec<Option<f64>> = centers
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        })
        .collect();
    s.json("peaks.json", json!({ "peaks": peaks, "spacings_hz": spacings }))
}

fn run_sweep_kind(s: &mut Session) -> Result<()> {
    let cfg = s.cfg.sweep_config(s.cfg.sweep.repetitions)?;
    let mut points = run_sweep(&cfg)?;
    match s.format {
        Format::Csv => {
            let path = s.path("sweep.csv");
            write_sweep_csv(&points, &path)?;
        }
        Format::Json => s.json("sweep.json", json!({ "points": points }))?,
    }
    points.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    let x: Vec<f64> = points.iter().map(|p| p.frequency).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let report = match fit_lorentzian(&x, &y) {
        Ok(fit) => json!({ "no_peak": false, "line_shape": "lorentzian", "fit": fit }),
        Err(e) => json!({ "no_peak": true, "reason": e.to_string() }),
    };
    describe_peak("sweep line", &report);
    s.json("sweep_fit.json", report)
}

fn run_scaling(s: &mut Session) -> Result<()> {
    let method = s.cfg.scaling_method()?;
    let result = scaling_harness(&method, &s.cfg.scaling.times, s.cfg.scaling.trials)?;
    for r in &result.rows {
        println!(
            "T = {} s: FWHM {} Hz, SNR {}, precision {} Hz ({} of {} trials excluded)",
            short(r.total_time),
            short(r.fwhm),
            short(r.snr),
            short(r.precision),
            r.excluded,
            r.trials
        );
    }
    for (name, sl) in [("FWHM", result.fwhm_slope), ("SNR", result.snr_slope), ("precision", result.precision_slope)] {
        println!("{name} slope {} ± {}", short(sl.slope), short(sl.stderr));
    }
    if s.format == Format::Csv {
        let path = s.path("scaling.csv");
        result.write_csv(&path)?;
    }
    s.json("scaling.json", to_value(&result))
}

fn run_bandwidth(s: &mut Session) -> Result<()> {
    let base = s.cfg.tone_list()?[0];
    let seq = s.cfg.pulse_sequence()?;
    let t_l = s.cfg.clock_model().nominal_period;
    let opts = s.cfg.analysis.periodogram();
    let detunings = s.cfg.bandwidth.detunings()?;
    let cfg = &s.cfg;
    let measure = |index: u64, offset: f64| -> Result<(f64, f64)> {
        let tone = Tone::new(base.amplitude, base.frequency + offset, base.phase)?;
        let mut qcfg: QdyneConfig = cfg.qdyne_config(FieldSource::Tone(tone))?;
        qcfg.seed = derive_seed(cfg.seed, index, 0);
        let binned = simulate_binned(&qcfg, opts.bin_factor)?;
        let spec = periodogram_series(
            &binned.counts,
            binned.sample_period,
            &crate::spectral::PeriodogramOptions { bin_factor: 1, ..opts },
        )?;
        let alias = alias_offset(tone.frequency, t_l)?.delta;
        let (lo, hi) = cfg.analysis.band_around(alias, qcfg.total_time);
        let amplitude = match fit_peak(&spec, lo, hi) {
            Ok(fit) if fit.converged => fit.amplitude,
            Ok(_) | Err(Error::NoPeak { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok((alias, amplitude))
    };
    let (_, reference) = measure(u64::MAX, 0.0)?;
    let w0 = filter_weight(base.frequency, &seq)?;
    let rows: Vec<(f64, f64, f64, f64)> = detunings
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let (alias, amplitude) = measure(i as u64, d)?;
            let w = filter_weight(base.frequency + d, &seq)?;
            Ok((d, alias, (w / w0).powi(2), amplitude / reference))
        })
        .collect::<Result<_>>()?;
    let header = ["detuning_hz", "alias_hz", "expected_relative_power", "relative_power"];
    match s.format {
        Format::Csv => {
            let path = s.path("bandwidth.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "{}", header.join(","))?;
            for (d, a, e, p) in &rows {
                writeln!(w, "{},{},{},{}", num(*d), num(*a), num(*e), num(*p))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let table: Vec<Value> = rows
                .iter()
                .map(|r| json!({ header[0]: r.0, header[1]: r.1, header[2]: r.2, header[3]: r.3 }))
                .collect();
            s.json("bandwidth.json", json!({ "reference_amplitude": reference, "rows": table }))?;
        }
    }
    let (sq, n) = rows.iter().filter(|r| r.3.is_finite()).fold((0.0, 0usize), |(sq, n), r| (sq + (r.3 - r.2).powi(2), n + 1));
    println!("{} detunings, rms deviation from filter weight² {}", rows.len(), short((sq / n.max(1) as f64).sqrt()));
    Ok(())
}

fn run_nmr(s: &mut Session) -> Result<()> {
    let bath = simulate_bath(&s.cfg.bath)?;
    let prefix = s.cfg.output_dir.join("bath");
    bath.export(&s.cfg.bath, &prefix)?;
    s.artifacts.extend(["bath_in_phase.csv", "bath_quadrature.csv", "bath.json"].map(String::from));
    let tc = correlation_time(&bath).ok();
    println!("{} spins, envelope rms {} rad/s", bath.n_spins, short(bath.rms()));
    let mut qcfg = s.cfg.qdyne_config(bath.field_source()?)?;
    qcfg.seed = derive_seed(s.cfg.seed, 1, 0);
    let trace = run_qdyne(&qcfg)?;
    let path = s.path("trace.bin");
    write_trace(&trace, &path)?;
    s.artifacts.push("trace.bin.json".into());
    let spec = periodogram(&trace, &s.cfg.analysis.periodogram())?;
    s.spectrum("spectrum", &spec)?;
    let t_l = s.cfg.clock_model().nominal_period;
    let alias = alias_offset(s.cfg.bath.larmor_frequency, t_l)?.delta;
    let (lo, hi) = s.cfg.analysis.band_around(alias, qcfg.total_time);
    let mut report = peak_report(&spec, lo, hi, s.cfg.analysis.false_alarm)?;
    report["expected_alias_hz"] = json!(alias);
    report["bath"] = json!({
        "n_spins": bath.n_spins,
        "envelope_rms_rad_per_s": bath.rms(),
        "correlation_time_s": tc,
    });
    describe_peak("NMR line", &report);
    s.json("peak.json", report)
}

fn analyze_trace(s: &mut Session, path: &Path) -> Result<()> {
    let trace = read_trace(path).map_err(|e| match e {
        Error::Parse { .. } => Error::CorruptTrace { record: 0, reason: e.to_string() },
        other => other,
    })?;
    let spec = periodogram(&trace, &s.cfg.analysis.periodogram())?;
    s.spectrum("spectrum", &spec)?;
    let duration = trace.len() as f64 * trace.metadata.measurement_period;
    let center = stored_alias(&trace);
    let band = match (s.cfg.analysis.band, center) {
        (Some([lo, hi]), _) => (lo, hi),
        (None, Some(c)) => {
            let h = *s.cfg.analysis.band_half_width.get_or_insert(8.0 / duration);
            ((c - h).max(0.0), c + h)
        }
        (None, None) => {
            return Err(Error::config("analysis.band is required: the trace metadata names no tone"));
        }
    };
    let mut report = peak_report(&spec, band.0, band.1, s.cfg.analysis.false_alarm)?;
    report["trace"] = json!({ "path": path, "n_records": trace.len(), "first_index": trace.metadata.first_index });
    if let Some(c) = center {
        report["expected_alias_hz"] = json!(c);
    }
    describe_peak("peak", &report);
    s.json("peak.json", report)
}

/// Alias of the first tone recorded in the trace sidecar, if any.
fn stored_alias(trace: &AcquisitionTrace) -> Option<f64> {
    let cfg: QdyneConfig = serde_json::from_value(trace.metadata.config.clone()?).ok()?;
    let tone = cfg.source.tones()?.first().copied()?;
    alias_offset(tone.frequency, trace.metadata.measurement_period).ok().map(|a| a.delta)
}
