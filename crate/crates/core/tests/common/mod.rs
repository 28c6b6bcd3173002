//! Independent numerical oracles shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use qdyne::acquisition::QdyneConfig;
use qdyne::clock::ClockModel;
use qdyne::sensor::{PulseSequence, ReadoutAxis, SensorParams};
use qdyne::signals::{FieldSource, Tone};

/// Five-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683,
    0.538_469_310_105_683,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
    0.236_926_885_056_189,
];

/// Composite Gauss–Legendre quadrature of `f` over `[a, b]` in `pieces` panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    let mut acc = 0.0;
    for i in 0..pieces {
        let mid = a + (i as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// Breakpoints on `[a, b]` refined geometrically towards `focus`.
pub fn graded_breaks(a: f64, b: f64, focus: f64, scale: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    let mut s = scale / 16.0;
    while s < (b - a) {
        for p in [focus - s, focus + s] {
            if p > a && p < b {
                pts.push(p);
            }
        }
        s *= 1.6;
    }
    if focus > a && focus < b {
        pts.push(focus);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Gauss–Legendre over each graded panel.
pub fn integrate_graded(f: impl Fn(f64) -> f64, breaks: &[f64], per_panel: usize) -> f64 {
    breaks.windows(2).map(|w| integrate(&f, w[0], w[1], per_panel)).sum()
}

/// Phase accumulated by the toggled sensor from a tone, by direct quadrature
/// of `∫ s(t) k sin(2πν t + Φ) dt` with `s = ±1` alternating every `τ`.
pub fn phase_by_quadrature(tone: &Tone, n_pulses: u32, tau: f64, t_start: f64) -> f64 {
    (0..n_pulses)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let a = t_start + j as f64 * tau;
            sign * integrate(|t| tone.amplitude * (2.0 * PI * tone.frequency * t + tone.phase).sin(), a, a + tau, 8)
        })
        .sum()
}

/// `∫_box ((3cos²θ − 1) / r³)² dV` for a sensor at depth `d` below the
/// box `[-x/2, x/2] × [-y/2, y/2] × [0, z]`, by tensor quadrature.
pub fn dipolar_continuum(box_nm: [f64; 3], depth: f64) -> f64 {
    let [lx, ly, lz] = box_nm;
    let xb = graded_breaks(-lx / 2.0, lx / 2.0, 0.0, depth);
    let yb = graded_breaks(-ly / 2.0, ly / 2.0, 0.0, depth);
    let zb = graded_breaks(0.0, lz, 0.0, depth);
    integrate_graded(
        |z| {
            let dz = z + depth;
            integrate_graded(
                |y| {
                    integrate_graded(
                        |x| {
                            let r2 = x * x + y * y + dz * dz;
                            let g = 3.0 * dz * dz / r2 - 1.0;
                            g * g / (r2 * r2 * r2)
                        },
                        &xb,
                        2,
                    )
                },
                &yb,
                2,
            )
        },
        &zb,
        2,
    )
}

/// Bessel `J0(x)` as `(1/π) ∫₀^π cos(x sin θ) dθ`.
pub fn bessel_j0(x: f64) -> f64 {
    integrate(|t| (x * t.sin()).cos(), 0.0, PI, 64) / PI
}

/// Bessel `J1(x)` as `(1/π) ∫₀^π cos(θ − x sin θ) dθ`.
pub fn bessel_j1(x: f64) -> f64 {
    integrate(|t| (t - x * t.sin()).cos(), 0.0, PI, 64) / PI
}

/// XY8-1 at τ = 500 ns on a 9 µs clock with a single tone.
pub fn fig3_config(amplitude: f64, frequency: f64, phase: f64, total_time: f64, sensor: SensorParams) -> QdyneConfig {
    QdyneConfig {
        source: FieldSource::Tone(Tone::new(amplitude, frequency, phase).unwrap()),
        sequence: PulseSequence::xy8(1, 500e-9).unwrap(),
        sensor,
        axis: ReadoutAxis::PHASE,
        clock: ClockModel::perfect(9e-6),
        total_time,
        seed: 1,
        first_index: 0,
    }
}

/// Coupling that gives resonant phase amplitude `phi` for interaction time `ts`.
pub fn coupling_for_phase(phi: f64, ts: f64) -> f64 {
    phi * PI / (2.0 * ts)
}

/// Sensor with a desk-scale photon budget (one photon per bright readout).
pub fn bright_sensor() -> SensorParams {
    SensorParams { mean_photons_bright: 1.0, ..SensorParams::default() }
}
