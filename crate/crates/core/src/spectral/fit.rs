use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, StudentsT};

use super::periodogram::Spectrum;
use crate::error::{Error, Result};

/// Fewest bins a peak fit accepts.
pub const MIN_FIT_BINS: usize = 8;
/// Fewest off-peak bins for a noise estimate.
pub const MIN_NOISE_BINS: usize = 16;
/// Half-width of the region excluded around a peak when estimating noise, in FWHM.
pub const NOISE_EXCLUSION_FWHM: f64 = 5.0;

const MAX_ITERATIONS: usize = 500;

/// `amplitude / (1 + (2 (x - center) / fwhm)²) + floor`.
pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, floor: f64) -> f64 {
    let z = 2.0 * (x - center) / fwhm;
    amplitude / (1.0 + z * z) + floor
}

/// Lorentzian-plus-constant least-squares fit.
///
/// Confidence half-widths are 95% Student-t intervals from the linearized
/// covariance at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub noise_floor: f64,
    pub center_ci: f64,
    pub fwhm_ci: f64,
    pub amplitude_ci: f64,
    pub noise_floor_ci: f64,
    pub converged: bool,
    /// Euclidean norm of the residuals, in input units.
    pub residual_norm: f64,
    pub iterations: usize,
}

pub type LorentzFit = PeakFit;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Problem<'a> {
    u: &'a [f64],
    y: &'a [f64],
}

impl Problem<'_> {
    fn cost(&self, p: &Vector4<f64>) -> f64 {
        self.u.iter().zip(self.y).map(|(&u, &y)| (y - lorentzian(u, p[0], p[1], p[2], p[3])).powi(2)).sum()
    }

    /// `JᵀJ` and `Jᵀr` of the residual model.
    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let (x0, g, a) = (p[0], p[1], p[2]);
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&u, &y) in self.u.iter().zip(self.y) {
            let z = 2.0 * (u - x0) / g;
            let d = 1.0 + z * z;
            let row = Vector4::new(4.0 * a * z / (g * d * d), 2.0 * a * z * z / (g * d * d), 1.0 / d, 1.0);
            let r = y - (a / d + p[3]);
            jtj += row * row.transpose();
            jtr += row * r;
        }
        (jtj, jtr)
    }
}

/// Levenberg–Marquardt on scaled data; returns (params, cost, iterations, converged).
fn levenberg_marquardt(prob: &Problem, start: Vector4<f64>) -> (Vector4<f64>, f64, usize, bool) {
    let mut p = start;
    let mut cost = prob.cost(&p);
    let mut lambda = 1e-3;
    for it in 1..=MAX_ITERATIONS {
        if cost < 1e-28 {
            return (p, cost, it, true);
        }
        let (jtj, jtr) = prob.normal_equations(&p);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_cost = if trial[1] > 0.0 && trial.iter().all(|v| v.is_finite()) {
                prob.cost(&trial)
            } else {
                f64::INFINITY
            };
            if trial_cost <= cost {
                let small_step = (0..4).all(|i| step[i].abs() <= 1e-10 * (p[i].abs() + 1e-8));
                let small_gain = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    return (p, cost, it, true);
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point
            return (p, cost, it, true);
        }
    }
    (p, cost, MAX_ITERATIONS, false)
}

/// Fits a single Lorentzian plus constant to `(x, y)`.
///
/// The line may be a peak or a dip; the starting point is taken from the
/// sample with the largest deviation from the median and its half-height
/// crossings. Non-convergence is reported through [`PeakFit::converged`].
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<PeakFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::domain("x and y lengths differ"));
    }
    if n < MIN_FIT_BINS {
        return Err(Error::domain(format!("{n} points; at least {MIN_FIT_BINS} needed for a fit")));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("x must be strictly increasing"));
    }
    let (lo, hi) = (x[0], x[n - 1]);
    let width = hi - lo;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NoPeak { lo, hi });
    }
    let u: Vec<f64> = x.iter().map(|&v| (v - lo) / width).collect();
    let ys: Vec<f64> = y.iter().map(|&v| v / scale).collect();

    let floor0 = median(&ys);
    let (imax, _) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - floor0).abs().total_cmp(&(b.1 - floor0).abs()))
        .expect("non-empty");
    let amp0 = ys[imax] - floor0;
    let half = floor0 + 0.5 * amp0;
    let beyond = |v: f64| if amp0 > 0.0 { v < half } else { v > half };
    let mut left = imax;
    while left > 0 && !beyond(ys[left]) {
        left -= 1;
    }
    let mut right = imax;
    while right < n - 1 && !beyond(ys[right]) {
        right += 1;
    }
    let min_width = (u[n - 1] - u[0]) / (n - 1) as f64;
    let g0 = (u[right] - u[left]).max(min_width);
    let start = Vector4::new(u[imax], g0, amp0, floor0);

    let prob = Problem { u: &u, y: &ys };
    let (p, cost, iterations, mut converged) = levenberg_marquardt(&prob, start);

    let dof = (n - 4) as f64;
    let (jtj, _) = prob.normal_equations(&p);
    let cov_diag = match jtj.try_inverse() {
        Some(inv) if n > 4 => {
            let s2 = cost / dof;
            Vector4::new(inv[(0, 0)], inv[(1, 1)], inv[(2, 2)], inv[(3, 3)]).map(|v| (s2 * v).max(0.0))
        }
        _ => {
            converged = false;
            Vector4::repeat(f64::INFINITY)
        }
    };
    let t = if n > 4 {
        StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .inverse_cdf(0.975)
    } else {
        f64::INFINITY
    };
    let half_width = cov_diag.map(|v| t * v.sqrt());
    let center = lo + p[0] * width;
    if !(p[0] >= 0.0 && p[0] <= 1.0) || !p.iter().all(|v| v.is_finite()) {
        converged = false;
    }
    Ok(PeakFit {
        center,
        fwhm: p[1].abs() * width,
        amplitude: p[2] * scale,
        noise_floor: p[3] * scale,
        center_ci: half_width[0] * width,
        fwhm_ci: half_width[1] * width,
        amplitude_ci: half_width[2] * scale,
        noise_floor_ci: half_width[3] * scale,
        converged,
        residual_norm: cost.sqrt() * scale,
        iterations,
    })
}

/// Fits the strongest line of `spec` within the band `[lo, hi]` Hz.
pub fn fit_peak(spec: &Spectrum, lo: f64, hi: f64) -> Result<PeakFit> {
    if !(hi > lo) || lo < 0.0 || hi > spec.frequency(spec.power.len() - 1) * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "band [{lo}, {hi}] Hz outside spectrum [0, {}] Hz",
            spec.frequency(spec.power.len() - 1)
        )));
    }
    let (a, b) = spec.band_bins(lo, hi);
    if b < a || b - a + 1 < MIN_FIT_BINS {
        return Err(Error::domain(format!("band [{lo}, {hi}] Hz holds fewer than {MIN_FIT_BINS} bins")));
    }
    let y = &spec.power[a..=b];
    let (imax, &pmax) = y.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1)).expect("non-empty");
    if imax == 0 || imax == y.len() - 1 || !(pmax > 0.0) {
        return Err(Error::NoPeak { lo, hi });
    }
    let x: Vec<f64> = (a..=b).map(|k| spec.frequency(k)).collect();
    let mut fit = fit_lorentzian(&x, y)?;
    if fit.amplitude <= 0.0 {
        fit.converged = false;
    }
    Ok(fit)
}

/// Whether the largest bin in `[lo, hi]` exceeds what white noise alone
/// would produce with probability `false_alarm`.
///
/// A bin averaged over `M` segments of white noise is Gamma distributed with
/// shape `M` (exponential for one segment). Its mean is estimated from the
/// median of the whole spectrum, excluding DC.
pub fn peak_is_significant(spec: &Spectrum, lo: f64, hi: f64, false_alarm: f64) -> Result<bool> {
    if !(false_alarm > 0.0 && false_alarm < 1.0) {
        return Err(Error::domain("false-alarm probability must lie in (0, 1)"));
    }
    let (a, b) = spec.band_bins(lo, hi);
    if b < a || spec.power.len() < 2 {
        return Err(Error::domain(format!("band [{lo}, {hi}] Hz is empty")));
    }
    let shape = spec.segments.max(1) as f64;
    let law = Gamma::new(shape, shape).map_err(|e| Error::Numerical(e.to_string()))?;
    let noise_mean = median(&spec.power[1..]) / law.inverse_cdf(0.5);
    let pmax = spec.power[a..=b].iter().fold(0.0f64, |m, &p| m.max(p));
    let bins = (b - a + 1) as f64;
    Ok(pmax > noise_mean * law.inverse_cdf(1.0 - false_alarm / bins))
}

/// Amplitude signal-to-noise ratio of a fitted line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    /// `√amplitude / std(√power)` over off-peak bins; infinite when noiseless.
    pub value: f64,
    /// Set when the off-peak bins carry no fluctuation at all.
    pub noiseless: bool,
    pub noise_bins: usize,
}

/// SNR of `peak` against the off-peak bins of `spec`.
///
/// Bins within ±5 FWHM of the center and the DC bin are excluded. Working
/// with square roots of power puts signal and noise on an amplitude scale,
/// so the ratio grows as √T for a coherent tone in white noise.
pub fn snr(spec: &Spectrum, peak: &PeakFit) -> Result<Snr> {
    let exclusion = NOISE_EXCLUSION_FWHM * peak.fwhm;
    let noise: Vec<f64> = spec
        .power
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(k, _)| (spec.frequency(*k) - peak.center).abs() > exclusion)
        .map(|(_, p)| p.max(0.0).sqrt())
        .collect();
    if noise.len() < MIN_NOISE_BINS {
        return Err(Error::domain(format!(
            "{} off-peak bins; at least {MIN_NOISE_BINS} needed for a noise estimate",
            noise.len()
        )));
    }
    let m = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / m;
    let sd = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let signal = peak.amplitude.max(0.0).sqrt();
    let scale = noise.iter().fold(signal, |a, &b| a.max(b));
    if sd <= 1e-12 * scale {
        let value = if signal > 0.0 { f64::INFINITY } else { 0.0 };
        return Ok(Snr { value, noiseless: true, noise_bins: noise.len() });
    }
    Ok(Snr { value: signal / sd, noiseless: false, noise_bins: noise.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;

    fn synthetic(center: f64, fwhm: f64, amp: f64, floor: f64, n: usize, bw: f64) -> Spectrum {
        let power = (0..n).map(|k| lorentzian(k as f64 * bw, center, fwhm, amp, floor)).collect();
        Spectrum {
            power,
            bin_width: bw,
            window: Window::Rectangular,
            n_records: 2 * (n - 1),
            sample_period: 0.5 / ((n - 1) as f64 * bw),
            n_fft: 2 * (n - 1),
            segments: 1,
            energy: 0.0,
        }
    }

    #[test]
    fn recovers_exact_lorentzian() {
        let s = synthetic(12.34, 0.9, 250.0, 3.0, 401, 0.1);
        let f = fit_peak(&s, 5.0, 20.0).unwrap();
        assert!(f.converged);
        for (got, want) in [(f.center, 12.34), (f.fwhm, 0.9), (f.amplitude, 250.0), (f.noise_floor, 3.0)] {
            assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(f.center_ci >= 0.0 && f.center_ci < 1e-6);
    }

    #[test]
    fn scaling_power_keeps_center() {
        let mut s = synthetic(7.7, 1.3, 40.0, 1.0, 301, 0.1);
        for (k, p) in s.power.iter_mut().enumerate() {
            *p += 0.3 * ((k * 37 % 11) as f64 / 11.0);
        }
        let f1 = fit_peak(&s, 2.0, 14.0).unwrap();
        let c = 123.456;
        s.power.iter_mut().for_each(|p| *p *= c);
        let f2 = fit_peak(&s, 2.0, 14.0).unwrap();
        assert!((f1.center - f2.center).abs() <= 1e-9 * f1.center);
        assert!((f2.amplitude / f1.amplitude / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn edge_maximum_is_no_peak() {
        let s = synthetic(1.0, 0.5, 10.0, 0.0, 201, 0.1);
        assert!(matches!(fit_peak(&s, 3.0, 10.0), Err(Error::NoPeak { .. })));
    }

    #[test]
    fn too_few_bins() {
        let s = synthetic(5.0, 0.5, 10.0, 0.0, 201, 0.1);
        assert!(fit_peak(&s, 4.8, 5.3).is_err());
    }

    #[test]
    fn fits_dips() {
        let x: Vec<f64> = (0..60).map(|i| 0.5e6 + i as f64 * 2e4).collect();
        let y: Vec<f64> = x.iter().map(|&v| lorentzian(v, 1.01e6, 2.5e5, -0.2, 1.0)).collect();
        let f = fit_lorentzian(&x, &y).unwrap();
        assert!(f.converged);
        assert!((f.center - 1.01e6).abs() < 1.0);
        assert!((f.fwhm - 2.5e5).abs() < 1.0);
        assert!((f.amplitude + 0.2).abs() < 1e-7);
    }

    #[test]
    fn snr_edge_cases() {
        let s = synthetic(25.0, 0.5, 100.0, 2.0, 501, 0.1);
        let f = fit_peak(&s, 20.0, 30.0).unwrap();
        // off-peak bins still carry the Lorentzian tails, so build a flat floor instead
        let mut flat = s.clone();
        flat.power.iter_mut().for_each(|p| *p = 2.0);
        flat.power[250] = 102.0;
        let r = snr(&flat, &f).unwrap();
        assert!(r.noiseless && r.value.is_infinite());
        let zero = PeakFit { amplitude: 0.0, ..f };
        let mut noisy = flat.clone();
        for (k, p) in noisy.power.iter_mut().enumerate() {
            *p += (k % 5) as f64;
        }
        assert_eq!(snr(&noisy, &zero).unwrap().value, 0.0);
        let wide = PeakFit { fwhm: 10.0, ..f };
        assert!(snr(&flat, &wide).is_err());
    }

    #[test]
    fn significance_gate() {
        let mut s = synthetic(25.0, 0.5, 0.0, 1.0, 2001, 0.1);
        for (k, p) in s.power.iter_mut().enumerate() {
            // deterministic exponential-looking noise
            let u = ((k as f64 * 0.618_033_988_75).fract() * 0.999) + 0.0005;
            *p = -u.ln();
        }
        assert!(!peak_is_significant(&s, 20.0, 30.0, 0.01).unwrap());
        s.power[250] = 200.0;
        assert!(peak_is_significant(&s, 20.0, 30.0, 0.01).unwrap());
    }
}
