//! Stochastic field from a statistically polarized, diffusing proton bath
//! above a shallow sensor.
//!
//! Geometry: the surface is the plane `z = 0`, the sample occupies
//! `[-x/2, x/2] × [-y/2, y/2] × [0, z]` (nm) and the sensor sits at
//! `(0, 0, -depth)` with its quantization axis along `z`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, stream_rng, SimRng};
use crate::signals::{FieldSource, ModulatedCarrier, SampledTrace};

/// Proton dipolar constant `μ0 γe γp ħ / 4π` in rad/s·nm³.
pub const PROTON_DIPOLAR_CONSTANT: f64 = 4.97e5;
const M2_TO_NM2: f64 = 1e18;
/// Spins simulated together and summed into one partial trace.
const GROUP_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct ExplicitSpin {
    /// Position in nm.
    pub position: [f64; 3],
    /// Initial polarization `±1`; random when omitted.
    #[serde(default)]
    pub polarization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinPopulation {
    /// Spins per nm³, placed uniformly in the box.
    Density(f64),
    Count(usize),
    Explicit(Vec<ExplicitSpin>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// Sample box `(x, y, z)` in nm.
    pub box_nm: [f64; 3],
    /// Sensor depth below the surface, nm.
    pub nv_depth: f64,
    pub spins: SpinPopulation,
    /// Diffusion coefficient, m²/s.
    pub diffusion: f64,
    /// Nuclear spin relaxation time; `None` freezes polarizations.
    pub t1p: Option<f64>,
    pub larmor_frequency: f64,
    /// Envelope bandwidth that the timestep must resolve, Hz.
    pub bandwidth: f64,
    pub timestep: f64,
    pub duration: f64,
    /// Dipolar constant κ, rad/s·nm³.
    pub coupling: f64,
    pub max_spins: usize,
    pub seed: u64,
}

impl Default for BathConfig {
    fn default() -> Self {
        BathConfig {
            box_nm: [6.0, 6.0, 6.0],
            nv_depth: 3.0,
            spins: SpinPopulation::Count(400),
            diffusion: 1e-15,
            t1p: Some(0.32e-3),
            larmor_frequency: 1.02e6,
            bandwidth: 5e3,
            timestep: 10e-6,
            duration: 1.0,
            coupling: PROTON_DIPOLAR_CONSTANT,
            max_spins: 100_000,
            seed: 0,
        }
    }
}

impl BathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.box_nm.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::config("box dimensions must be positive"));
        }
        if !(self.nv_depth > 0.0) {
            return Err(Error::config("sensor depth must be > 0"));
        }
        if !(self.diffusion >= 0.0) {
            return Err(Error::config("diffusion coefficient must be >= 0"));
        }
        if !(self.timestep > 0.0) || !(self.duration >= self.timestep) {
            return Err(Error::config("need 0 < timestep <= duration"));
        }
        if let Some(t1p) = self.t1p {
            if !(t1p > 0.0) {
                return Err(Error::config("spin relaxation time must be > 0"));
            }
            if !(self.timestep < t1p / 10.0) {
                return Err(Error::config(format!("timestep {} s must be < T1p/10 = {} s", self.timestep, t1p / 10.0)));
            }
        }
        if !(self.bandwidth > 0.0) || !(self.timestep < 1.0 / (10.0 * self.bandwidth)) {
            return Err(Error::config(format!(
                "timestep {} s must be < 1/(10 × bandwidth {} Hz)",
                self.timestep, self.bandwidth
            )));
        }
        if !(self.larmor_frequency > 0.0) || !(self.coupling.is_finite()) {
            return Err(Error::config("Larmor frequency must be > 0 and coupling finite"));
        }
        match &self.spins {
            SpinPopulation::Density(rho) if !(*rho >= 0.0) => {
                return Err(Error::config("spin density must be >= 0"));
            }
            SpinPopulation::Explicit(spins) => {
                for (i, s) in spins.iter().enumerate() {
                    if !self.contains(s.position) {
                        return Err(Error::config(format!("spin {i} at {:?} lies outside the box", s.position)));
                    }
                    if let Some(p) = s.polarization {
                        if p != 1.0 && p != -1.0 {
                            return Err(Error::config(format!("spin {i} polarization must be ±1")));
                        }
                    }
                }
            }
            _ => {}
        }
        let n = self.spin_count();
        if n > self.max_spins {
            return Err(Error::Capacity { requested: n, budget: self.max_spins });
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.box_nm.iter().product()
    }

    pub fn spin_count(&self) -> usize {
        match &self.spins {
            SpinPopulation::Density(rho) => (rho * self.volume()).round() as usize,
            SpinPopulation::Count(n) => *n,
            SpinPopulation::Explicit(s) => s.len(),
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration / self.timestep * (1.0 + 1e-12)).floor() as usize + 1
    }

    fn bounds(&self) -> [(f64, f64); 3] {
        let [x, y, z] = self.box_nm;
        [(-x / 2.0, x / 2.0), (-y / 2.0, y / 2.0), (0.0, z)]
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.bounds().iter().zip(p).all(|(&(lo, hi), v)| v >= lo && v <= hi)
    }

    /// Coupling `κ (3cos²θ − 1) / r³` of a spin at `p`.
    pub fn coupling_at(&self, p: [f64; 3]) -> f64 {
        let dz = p[2] + self.nv_depth;
        let r2 = p[0] * p[0] + p[1] * p[1] + dz * dz;
        let cos2 = dz * dz / r2;
        self.coupling * (3.0 * cos2 - 1.0) / (r2 * r2.sqrt())
    }
}

/// Folds `x` back into `[lo, hi]` by mirror reflection at the walls.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * w);
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

struct Spin {
    position: [f64; 3],
    polarization: f64,
    carrier_phase: (f64, f64),
    rng: SimRng,
}

fn init_spin(cfg: &BathConfig, index: usize, seed: u64) -> Spin {
    let mut rng = stream_rng(derive_seed(seed, index as u64, 0), stream::BATH);
    let (position, fixed) = match &cfg.spins {
        SpinPopulation::Explicit(spins) => (spins[index].position, spins[index].polarization),
        _ => {
            let b = cfg.bounds();
            let mut p = [0.0; 3];
            for (v, (lo, hi)) in p.iter_mut().zip(b) {
                *v = lo + (hi - lo) * rng.random::<f64>();
            }
            (p, None)
        }
    };
    let random_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let polarization = fixed.unwrap_or(random_sign);
    let psi = 2.0 * PI * rng.random::<f64>();
    Spin { position, polarization, carrier_phase: (psi.cos(), psi.sin()), rng }
}

/// Bath field samples on a uniform grid starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathTrace {
    pub sample_period: f64,
    /// `Σ c_i σ_i(t)`, rad/s.
    pub envelope: Vec<f64>,
    /// `Σ c_i σ_i(t) cos ψ_i`, rad/s.
    pub in_phase: Vec<f64>,
    /// `Σ c_i σ_i(t) sin ψ_i`, rad/s.
    pub quadrature: Vec<f64>,
    pub larmor_frequency: f64,
    pub n_spins: usize,
}

impl BathTrace {
    pub fn duration(&self) -> f64 {
        (self.envelope.len() - 1) as f64 * self.sample_period
    }

    /// Root-mean-square of the envelope over time.
    pub fn rms(&self) -> f64 {
        (self.envelope.iter().map(|v| v * v).sum::<f64>() / self.envelope.len() as f64).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.envelope.iter().sum::<f64>() / self.envelope.len() as f64
    }

    pub fn envelope_trace(&self) -> Result<SampledTrace> {
        SampledTrace::new(0.0, self.sample_period, self.envelope.clone())
    }

    /// The bath as a field source: the Larmor carrier with the stochastic
    /// in-phase and quadrature envelopes.
    pub fn field_source(&self) -> Result<FieldSource> {
        Ok(FieldSource::Modulated(ModulatedCarrier::new(
            self.larmor_frequency,
            SampledTrace::new(0.0, self.sample_period, self.in_phase.clone())?,
            SampledTrace::new(0.0, self.sample_period, self.quadrature.clone())?,
        )?))
    }

    /// Writes `<prefix>_in_phase.csv`, `<prefix>_quadrature.csv` (both in the
    /// sampled-trace CSV layout) and `<prefix>.json` echoing `cfg`.
    pub fn export(&self, cfg: &BathConfig, prefix: &Path) -> Result<[PathBuf; 3]> {
        let with_suffix = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        let paths = [with_suffix("_in_phase.csv"), with_suffix("_quadrature.csv"), with_suffix(".json")];
        SampledTrace::new(0.0, self.sample_period, self.in_phase.clone())?.write_csv(&paths[0])?;
        SampledTrace::new(0.0, self.sample_period, self.quadrature.clone())?.write_csv(&paths[1])?;
        let sidecar = serde_json::json!({
            "config": cfg,
            "n_spins": self.n_spins,
            "n_samples": self.envelope.len(),
            "sample_period_s": self.sample_period,
            "larmor_frequency_hz": self.larmor_frequency,
            "envelope_rms_rad_per_s": self.rms(),
        });
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(&paths[2], text)?;
        Ok(paths)
    }
}

fn simulate_group(cfg: &BathConfig, spins: std::ops::Range<usize>, n: usize) -> [Vec<f64>; 3] {
    let mut env = vec![0.0; n];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let step_sd = (2.0 * cfg.diffusion * M2_TO_NM2 * cfg.timestep).sqrt();
    let flip = cfg.t1p.map(|t1p| 0.5 * (1.0 - (-2.0 * cfg.timestep / t1p).exp())).unwrap_or(0.0);
    let bounds = cfg.bounds();
    for index in spins {
        let mut s = init_spin(cfg, index, cfg.seed);
        let (cos_psi, sin_psi) = s.carrier_phase;
        let mut c = cfg.coupling_at(s.position);
        for k in 0..n {
            let v = c * s.polarization;
            env[k] += v;
            re[k] += v * cos_psi;
            im[k] += v * sin_psi;
            if step_sd > 0.0 {
                for (axis, &(lo, hi)) in bounds.iter().enumerate() {
                    let dx: f64 = s.rng.sample(StandardNormal);
                    s.position[axis] = reflect(s.position[axis] + step_sd * dx, lo, hi);
                }
                c = cfg.coupling_at(s.position);
            }
            if flip > 0.0 && s.rng.random::<f64>() < flip {
                s.polarization = -s.polarization;
            }
        }
    }
    [env, re, im]
}

/// Evolves every spin independently and sums their fields.
///
/// Spins run in fixed groups on their own random streams and partial sums
/// are added in group order, so the trace is identical for any thread count.
pub fn simulate_bath(cfg: &BathConfig) -> Result<BathTrace> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let n_spins = cfg.spin_count();
    let groups: Vec<std::ops::Range<usize>> =
        (0..n_spins).step_by(GROUP_SIZE).map(|a| a..(a + GROUP_SIZE).min(n_spins)).collect();
    let mut total = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    // bounded batches keep memory flat for large baths
    for batch in groups.chunks(rayon::current_num_threads().max(1) * 2) {
        let partials: Vec<[Vec<f64>; 3]> = batch.par_iter().map(|g| simulate_group(cfg, g.clone(), n)).collect();
        for part in partials {
            for (acc, p) in total.iter_mut().zip(part) {
                acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        }
    }
    let [envelope, in_phase, quadrature] = total;
    Ok(BathTrace {
        sample_period: cfg.timestep,
        envelope,
        in_phase,
        quadrature,
        larmor_frequency: cfg.larmor_frequency,
        n_spins,
    })
}

/// Ensemble rms of the `t = 0` envelope over seeded bath realizations.
pub fn bath_rms(cfg: &BathConfig, n_realizations: usize) -> Result<f64> {
    if n_realizations < 10 {
        return Err(Error::domain("bath_rms needs at least 10 realizations"));
    }
    cfg.validate()?;
    let n_spins = cfg.spin_count();
    let squares: Vec<f64> = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, r as u64, 0xB47);
            let e: f64 = (0..n_spins)
                .map(|i| {
                    let s = init_spin(cfg, i, seed);
                    cfg.coupling_at(s.position) * s.polarization
                })
                .sum();
            e * e
        })
        .collect();
    Ok((squares.iter().sum::<f64>() / n_realizations as f64).sqrt())
}

/// Normalized autocorrelation of the envelope, lags `0..len`.
///
/// The envelope is not mean-subtracted: statistical polarization has zero
/// mean, and a frozen bath must keep a flat correlation.
pub fn envelope_autocorrelation(trace: &BathTrace) -> Result<Vec<f64>> {
    let n = trace.envelope.len();
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = trace.envelope.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(m, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(m).process(&mut buf);
    buf.iter_mut().for_each(|z| *z = Complex64::new(z.norm_sqr(), 0.0));
    planner.plan_fft_inverse(m).process(&mut buf);
    let zero = buf[0].re;
    if !(zero > 0.0) {
        return Err(Error::Numerical("envelope is identically zero".into()));
    }
    // unbiased estimate: divide by the overlap length
    Ok((0..n).map(|k| buf[k].re / (n - k) as f64 / (zero / n as f64)).collect())
}

/// Lag at which the envelope autocorrelation first drops below `1/e`.
pub fn correlation_time(trace: &BathTrace) -> Result<f64> {
    let acf = envelope_autocorrelation(trace)?;
    let target = (-1.0f64).exp();
    // only trust lags with at least half the trace overlapping
    let usable = acf.len() / 2;
    for k in 1..usable {
        if acf[k] < target {
            let (a, b) = (acf[k - 1], acf[k]);
            let frac = (a - target) / (a - b);
            return Ok((k as f64 - 1.0 + frac) * trace.sample_period);
        }
    }
    Err(Error::Numerical(format!(
        "envelope autocorrelation never falls below 1/e within {} s",
        usable as f64 * trace.sample_period
    )))
}
