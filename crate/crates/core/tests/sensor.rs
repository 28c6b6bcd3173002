mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use qdyne::rng::{stream, stream_rng};
use qdyne::sensor::{
    accumulated_phase, bright_probability, filter_weight, poisson_draw, resonance_phase_amplitude, sample_photons,
    PulseSequence, ReadoutAxis, SensorParams,
};
use qdyne::signals::{FieldSource, Tone};

fn xy8() -> PulseSequence {
    PulseSequence::xy8(1, 500e-9).unwrap()
}

/// Phase amplitude maximized over the tone phase, by quadrature.
fn quadrature_amplitude(nu: f64, t_start: f64) -> f64 {
    let p0 = common::phase_by_quadrature(&Tone::new(1.0, nu, 0.0).unwrap(), 8, 500e-9, t_start);
    let p90 = common::phase_by_quadrature(&Tone::new(1.0, nu, PI / 2.0).unwrap(), 8, 500e-9, t_start);
    p0.hypot(p90)
}

#[test]
fn resonant_phase_matches_quadrature() {
    let tone = Tone::new(1000.0, 1e6, 0.0).unwrap();
    let oracle = common::phase_by_quadrature(&tone, 8, 500e-9, 0.0);
    let got = accumulated_phase(&FieldSource::Tone(tone), &xy8(), 0.0).unwrap();
    assert!((got / oracle - 1.0).abs() < 1e-9, "{got} vs {oracle}");
    assert!((oracle - 2.546e-3).abs() < 1e-6);
    assert!((resonance_phase_amplitude(1000.0, &xy8()) / oracle - 1.0).abs() < 1e-9);
}

#[test]
fn off_resonant_phases_match_quadrature() {
    for (nu, phase, t0) in [(0.73e6, 0.4, 0.0), (1.2e6, 2.0, 3.3e-6), (3.1e6, 5.5, 17e-6), (45e3, 1.0, 1e-3)] {
        let tone = Tone::new(2500.0, nu, phase).unwrap();
        let oracle = common::phase_by_quadrature(&tone, 8, 500e-9, t0);
        let got = accumulated_phase(&FieldSource::Tone(tone), &xy8(), t0).unwrap();
        assert!((got - oracle).abs() <= 1e-9 * oracle.abs().max(1e-6), "ν = {nu}: {got} vs {oracle}");
    }
}

#[test]
fn phase_is_linear_in_the_source() {
    let tones: Vec<Tone> = [(700.0, 0.98e6, 0.1), (300.0, 1.01e6, 2.0), (50.0, 1.3e6, 4.0)]
        .iter()
        .map(|&(k, nu, p)| Tone::new(k, nu, p).unwrap())
        .collect();
    let doubled: Vec<Tone> = tones.iter().map(|t| Tone::new(2.0 * t.amplitude, t.frequency, t.phase).unwrap()).collect();
    let a = accumulated_phase(&FieldSource::Tones(tones.clone()), &xy8(), 2.2e-6).unwrap();
    let b = accumulated_phase(&FieldSource::Tones(doubled), &xy8(), 2.2e-6).unwrap();
    assert!((b / a - 2.0).abs() < 1e-12);
    let sum: f64 = tones.iter().map(|t| accumulated_phase(&FieldSource::Tone(*t), &xy8(), 2.2e-6).unwrap()).sum();
    assert!((a - sum).abs() <= 1e-12 * a.abs());
}

#[test]
fn filter_weight_matches_quadrature_and_ignores_time_origin() {
    let reference = quadrature_amplitude(1e6, 0.0);
    for nu in [0.6e6, 0.9e6, 1.0e6, 1.1e6, 1.2e6, 2.0e6] {
        let w = filter_weight(nu, &xy8()).unwrap();
        for t0 in [0.0, 0.37e-6, 123.4e-6] {
            let q = quadrature_amplitude(nu, t0) / reference;
            assert!((w - q).abs() < 1e-8, "ν = {nu}, t0 = {t0}: {w} vs {q}");
        }
    }
}

#[test]
fn main_lobe_first_zero_near_inverse_interaction_time() {
    // golden-section search for the minimum of the quadrature weight above resonance
    let (mut a, mut b) = (1.1e6, 1.4e6);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |nu: f64| quadrature_amplitude(nu, 0.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let zero = 0.5 * (a + b);
    let detuning = zero - 1e6;
    assert!((detuning / 250e3 - 1.0).abs() <= 0.05, "first zero at {detuning} Hz");
    assert!(filter_weight(zero, &xy8()).unwrap() < 1e-3);
}

#[test]
fn photon_mean_at_half_population() {
    let params = SensorParams::default();
    let mut rng = stream_rng(31, stream::PHOTONS);
    let n = 1_000_000;
    let total: u64 = (0..n).map(|_| sample_photons(0.5, &params, &mut rng) as u64).sum();
    let mean = total as f64 / n as f64;
    let expected = 0.0255;
    assert!((params.mean_photons(0.5) - expected).abs() < 1e-15);
    let sigma = (expected / n as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * sigma, "{mean}");
}

#[test]
fn poisson_index_of_dispersion() {
    let mut rng = stream_rng(32, stream::PHOTONS);
    for mean in [0.03, 1.0, 7.5] {
        let n = 10_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let k = poisson_draw(mean, &mut rng) as f64;
            s += k;
            s2 += k * k;
        }
        let m = s / n as f64;
        let var = s2 / n as f64 - m * m;
        assert!((var / m - 1.0).abs() < 0.01, "mean {mean}: dispersion {}", var / m);
    }
}

#[test]
fn small_phase_is_linear_regime() {
    let phi = 0.01;
    let p = bright_probability(phi, ReadoutAxis::PHASE, 1.0);
    assert!((p - (0.5 + phi / 2.0)).abs() < phi.powi(3));
}

proptest! {
    #[test]
    fn bright_probability_is_a_probability(phi in -50.0f64..50.0, axis in 0.0f64..(2.0 * PI), coherence in 0.0f64..=1.0) {
        let p = bright_probability(phi, ReadoutAxis { final_pulse_phase: axis }, coherence);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn shifting_signal_phase_by_pi_negates_sensor_phase(nu in 0.2e6f64..3e6, phase in 0.0f64..6.0, t0 in 0.0f64..1e-3) {
        let a = accumulated_phase(&FieldSource::Tone(Tone::new(800.0, nu, phase).unwrap()), &xy8(), t0).unwrap();
        let b = accumulated_phase(&FieldSource::Tone(Tone::new(800.0, nu, phase + PI).unwrap()), &xy8(), t0).unwrap();
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1e-9));
    }
}
