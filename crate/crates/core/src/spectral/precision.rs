//! Closed-form precision models and the single-tone Cramér–Rao bound.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weak-signal validity threshold on `k · T2`.
pub const WEAK_SIGNAL_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionModel {
    /// Coupling strength, rad/s.
    pub k: f64,
    pub t2: f64,
    /// Memory-qubit lifetime T_M, seconds.
    pub t_memory: f64,
    /// Local-oscillator stability horizon T_LO, seconds.
    pub t_clock: f64,
}

impl PrecisionModel {
    pub fn new(k: f64, t2: f64, t_memory: f64, t_clock: f64) -> Result<Self> {
        let m = PrecisionModel { k, t2, t_memory, t_clock };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("t2", self.t2), ("t_memory", self.t_memory), ("t_clock", self.t_clock)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// The closed forms assume `k · T2` well below one.
    pub fn weak_signal(&self) -> bool {
        self.k * self.t2 < WEAK_SIGNAL_LIMIT
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("measurement time must be > 0, got {t}")));
    }
    Ok(())
}

/// Dynamical decoupling: `1 / (k T2 √(T T2))`.
pub fn predict_precision_dd(model: &PrecisionModel, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 / (model.k * model.t2 * (t * model.t2).sqrt()))
}

/// Memory-assisted correlation spectroscopy: `1 / (k T2 √(T T_M))`.
pub fn predict_precision_memory(model: &PrecisionModel, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0 / (model.k * model.t2 * (t * model.t_memory).sqrt()))
}

/// Qdyne: `1 / (k T √(T T2))` up to `T_LO`, then `1 / (k T_LO √(T T2))`.
pub fn predict_precision_qdyne(model: &PrecisionModel, t: f64) -> Result<f64> {
    check_time(t)?;
    let coherent = t.min(model.t_clock);
    Ok(1.0 / (model.k * coherent * (t * model.t2).sqrt()))
}

/// Cramér–Rao lower bound on the frequency std of a sampled tone in white
/// Gaussian noise: `sqrt(12 / ((2π)² (A/σ)² Δt² N (N² − 1)))`.
pub fn crb_tone_frequency(amplitude_over_noise: f64, sample_period: f64, n_samples: u64) -> Result<f64> {
    if n_samples < 3 {
        return Err(Error::domain(format!("need at least 3 samples, got {n_samples}")));
    }
    if !(amplitude_over_noise > 0.0) || !(sample_period > 0.0) {
        return Err(Error::domain("amplitude/noise ratio and sample period must be > 0"));
    }
    let n = n_samples as f64;
    let denom = (2.0 * PI).powi(2) * amplitude_over_noise.powi(2) * sample_period.powi(2) * n * (n * n - 1.0);
    Ok((12.0 / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PrecisionModel {
        PrecisionModel::new(1000.0, 100e-6, 10e-3, 1e4).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a / b - 1.0).abs()
    }

    #[test]
    fn closed_form_values() {
        let m = model();
        assert!(rel(predict_precision_dd(&m, 100.0).unwrap(), 100.0) < 1e-12);
        assert!(rel(predict_precision_memory(&m, 100.0).unwrap(), 10.0) < 1e-12);
        assert!(rel(predict_precision_qdyne(&m, 100.0).unwrap(), 1e-4) < 1e-12);
        assert!(PrecisionModel { k: 500.0, ..m }.weak_signal());
        assert!(!PrecisionModel::new(2000.0, 100e-6, 1.0, 1.0).unwrap().weak_signal());
    }

    #[test]
    fn exponent_laws() {
        let m = model();
        let dd = predict_precision_dd(&m, 10.0).unwrap() / predict_precision_dd(&m, 40.0).unwrap();
        assert!(rel(dd, 2.0) < 1e-12);
        let q = predict_precision_qdyne(&m, 10.0).unwrap() / predict_precision_qdyne(&m, 40.0).unwrap();
        assert!(rel(q, 8.0) < 1e-12);
        let late = predict_precision_qdyne(&m, 1e6).unwrap() / predict_precision_qdyne(&m, 4e6).unwrap();
        assert!(rel(late, 2.0) < 1e-12);
    }

    #[test]
    fn memory_degenerates_to_dd() {
        let m = PrecisionModel { t_memory: 100e-6, ..model() };
        assert_eq!(predict_precision_memory(&m, 3.0).unwrap(), predict_precision_dd(&m, 3.0).unwrap());
    }

    #[test]
    fn qdyne_continuous_and_monotone() {
        let m = model();
        let below = predict_precision_qdyne(&m, m.t_clock * (1.0 - 1e-12)).unwrap();
        let at = predict_precision_qdyne(&m, m.t_clock).unwrap();
        assert!(rel(below, at) < 1e-10);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let t = 10f64.powf(-2.0 + i as f64 * 0.05);
            let v = predict_precision_qdyne(&m, t).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn crb_example_and_scaling() {
        let b = crb_tone_frequency(1.0, 9e-6, 1_000_000).unwrap();
        assert!((b - 6.126e-5).abs() < 0.01e-5, "{b}");
        let ratio = b / crb_tone_frequency(1.0, 9e-6, 4_000_000).unwrap();
        assert!(rel(ratio, 8.0) < 1e-3);
        assert!(crb_tone_frequency(1.0, 9e-6, 2).is_err());
    }

    #[test]
    fn crb_monotone_in_each_argument() {
        let base = crb_tone_frequency(0.5, 1e-3, 100).unwrap();
        assert!(crb_tone_frequency(0.6, 1e-3, 100).unwrap() < base);
        assert!(crb_tone_frequency(0.5, 2e-3, 100).unwrap() < base);
        assert!(crb_tone_frequency(0.5, 1e-3, 101).unwrap() < base);
    }
}
