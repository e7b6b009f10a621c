use optomech::pipeline::{
    calibrate_shot_noise, clean_spectrum, estimate_psd, flag_disagreement, CalibrationWarning,
    MeasuredSpectrum, TimeSeriesRecord, Units, Window,
};
use optomech::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FS: f64 = 2.0e6;

fn white(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn volts(freq_hz: Vec<f64>, psd: Vec<f64>) -> MeasuredSpectrum {
    MeasuredSpectrum {
        freq_hz,
        psd,
        units: Units::Volts,
        n_averages: 100,
    }
}

/// Flat ASD `level` on 20000 bins from 300 kHz with every `spike_every`-th bin raised ×10.
fn flat_with_spikes(level: f64, spike_every: usize) -> MeasuredSpectrum {
    let freq: Vec<f64> = (0..20000).map(|i| 3.0e5 + 35.0 * i as f64).collect();
    let psd = (0..freq.len())
        .map(|i| {
            if i % spike_every == 0 {
                100.0 * level * level
            } else {
                level * level
            }
        })
        .collect();
    volts(freq, psd)
}

#[test]
fn white_noise_level() {
    let rec = TimeSeriesRecord::new(white(1, 1 << 20), FS).unwrap();
    let psd = estimate_psd(&rec, 4096, Window::Hann, 0.5).unwrap();
    let inner = &psd.psd[1..psd.psd.len() - 1];
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    assert!((mean / 1e-6 - 1.0).abs() < 0.01, "{mean:e}");
    assert_eq!(psd.units, Units::Volts);
    assert_eq!(psd.freq_hz.len(), 2049);
    assert!((psd.freq_hz[1] - FS / 4096.0).abs() < 1e-9);
}

#[test]
fn tone_power_is_half_the_squared_amplitude() {
    let (a, f0) = (0.3, 113.7e3);
    let x: Vec<f64> = (0..1 << 18)
        .map(|i| a * (std::f64::consts::TAU * f0 * i as f64 / FS).sin())
        .collect();
    let psd = estimate_psd(
        &TimeSeriesRecord::new(x, FS).unwrap(),
        4096,
        Window::Hann,
        0.5,
    )
    .unwrap();
    let df = psd.freq_hz[1];
    let peak = (0..psd.psd.len())
        .max_by(|&i, &j| psd.psd[i].total_cmp(&psd.psd[j]))
        .unwrap();
    let power: f64 = psd.psd[peak - 4..=peak + 4].iter().sum::<f64>() * df;
    assert!((power / (0.5 * a * a) - 1.0).abs() < 0.01, "{power}");
}

#[test]
fn averaging_shrinks_the_scatter() {
    let rel_var = |segments: usize| {
        let n = 1024;
        let rec = TimeSeriesRecord::new(white(segments as u64, n * segments), FS).unwrap();
        let psd = estimate_psd(&rec, n, Window::Hann, 0.0).unwrap();
        assert_eq!(psd.n_averages, segments);
        let inner = &psd.psd[1..n / 2];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        inner.iter().map(|p| (p / mean - 1.0).powi(2)).sum::<f64>() / inner.len() as f64
    };
    let (v16, v256) = (rel_var(16), rel_var(256));
    let ratio = v16 / v256;
    assert!((ratio / 16.0 - 1.0).abs() < 0.25, "{ratio}");
}

#[test]
fn ensemble_mean_is_unbiased_for_coloured_noise() {
    let (n, seg) = (1 << 17, 1024);
    let mut acc = vec![0.0; seg / 2 + 1];
    let seeds = 100;
    for seed in 0..seeds {
        let w = white(1000 + seed, n + 1);
        let x: Vec<f64> = (0..n).map(|i| w[i + 1] + 0.5 * w[i]).collect();
        let psd = estimate_psd(
            &TimeSeriesRecord::new(x, FS).unwrap(),
            seg,
            Window::Hann,
            0.5,
        )
        .unwrap();
        for (a, p) in acc.iter_mut().zip(&psd.psd) {
            *a += p / seeds as f64;
        }
    }
    // |1 + 0.5e^{−iωΔt}|² = 1.25 + cos ωΔt.
    let analytic =
        |k: usize| 2.0 / FS * (1.25 + (std::f64::consts::TAU * k as f64 / seg as f64).cos());
    for chunk in (1..seg / 2 - 16).step_by(16) {
        let m: f64 = (chunk..chunk + 16).map(|k| acc[k]).sum::<f64>();
        let a: f64 = (chunk..chunk + 16).map(analytic).sum::<f64>();
        assert!((m / a - 1.0).abs() < 0.01, "bins {chunk}..: {}", m / a);
    }
}

#[test]
fn psd_argument_checks() {
    let rec = TimeSeriesRecord::new(white(2, 100), FS).unwrap();
    assert!(matches!(
        estimate_psd(&rec, 200, Window::Hann, 0.5),
        Err(Error::TooShort(_))
    ));
    assert!(matches!(
        estimate_psd(&rec, 50, Window::Hann, 1.0),
        Err(Error::Domain(_))
    ));
    assert!(TimeSeriesRecord::new(vec![0.0, f64::NAN], FS).is_err());
    assert!(TimeSeriesRecord::new(vec![0.0], 0.0).is_err());
}

#[test]
fn flat_floor_with_spikes_is_found_exactly() {
    let level = 2.1951e-6;
    let cal =
        calibrate_shot_noise(&flat_with_spikes(level, 25), 1.7341e-18, (3e5, 1e6), 200).unwrap();
    assert_eq!(cal.mode_asd, level);
    assert_eq!(cal.factor, 1.7341e-18 / level);
    assert!(cal.warnings.is_empty());
}

#[test]
fn factor_is_inverse_to_electronic_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let freq: Vec<f64> = (0..5000).map(|i| 3.0e5 + 100.0 * i as f64).collect();
    let psd: Vec<f64> = freq
        .iter()
        .map(|_| 1e-12 * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
        .collect();
    let amplified: Vec<f64> = psd.iter().map(|p| 4.0 * p).collect();
    let a = calibrate_shot_noise(&volts(freq.clone(), psd), 1e-18, (3e5, 1e6), 64).unwrap();
    let b = calibrate_shot_noise(&volts(freq, amplified), 1e-18, (3e5, 1e6), 64).unwrap();
    assert!((a.factor / b.factor - 2.0).abs() < 1e-12);
}

#[test]
fn calibrating_twice_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let freq: Vec<f64> = (0..5000).map(|i| 3.0e5 + 100.0 * i as f64).collect();
    let psd: Vec<f64> = freq
        .iter()
        .map(|_| 1e-12 * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
        .collect();
    let meas = volts(freq, psd);
    let first = calibrate_shot_noise(&meas, 1.7341e-18, (3e5, 1e6), 200).unwrap();
    let meters = meas.calibrated(first.factor);
    assert_eq!(meters.units, Units::Meters);
    let again = calibrate_shot_noise(&meters, 1.7341e-18, (3e5, 1e6), 200).unwrap();
    assert!((again.factor - 1.0).abs() < 1e-6, "{}", again.factor);
}

#[test]
fn two_floors_raise_a_warning() {
    let freq: Vec<f64> = (0..4000).map(|i| 3.0e5 + 100.0 * i as f64).collect();
    let psd = (0..freq.len())
        .map(|i| if i % 2 == 0 { 1e-12 } else { 2.5e-12 })
        .collect();
    let cal = calibrate_shot_noise(&volts(freq, psd), 1e-18, (3e5, 1e6), 64).unwrap();
    assert!(matches!(
        cal.warnings.as_slice(),
        [CalibrationWarning::Multimodal { .. }]
    ));
}

#[test]
fn empty_band_is_an_error() {
    let meas = flat_with_spikes(1e-6, 25);
    assert!(matches!(
        calibrate_shot_noise(&meas, 1e-18, (1e3, 2e3), 64),
        Err(Error::EmptyBand { .. })
    ));
}

#[test]
fn clean_inputs_are_a_fixed_point() {
    let target: Vec<f64> = (1..200).map(|i| 1.0 / i as f64).collect();
    let aux: Vec<f64> = (1..200).map(|i| 2.0 + (i as f64).sin()).collect();
    let out = clean_spectrum(&target, &aux, &aux, 0.05).unwrap();
    assert_eq!(out.values, target);
    assert!(out.flags.iter().all(|f| !f));
}

#[test]
fn cleaning_is_scale_consistent() {
    let target: Vec<f64> = (1..200).map(|i| 1.0 / i as f64).collect();
    let aux: Vec<f64> = (1..200).map(|i| 2.0 + (i as f64).sin()).collect();
    let model: Vec<f64> = (1..200).map(|i| 2.0 + 0.9 * (i as f64).sin()).collect();
    let scale: Vec<f64> = (1..200).map(|i| 1.0 + 0.01 * i as f64).collect();
    let st: Vec<f64> = target.iter().zip(&scale).map(|(a, s)| a * s).collect();
    let sa: Vec<f64> = aux.iter().zip(&scale).map(|(a, s)| a * s).collect();
    let a = clean_spectrum(&target, &aux, &model, 0.05).unwrap();
    let b = clean_spectrum(&st, &sa, &model, 0.05).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x / y - 1.0).abs() < 1e-12);
    }
}

#[test]
fn excess_noise_is_flagged() {
    let model = vec![1.0; 10];
    let mut aux = model.clone();
    aux[3] = 1.5;
    let out = clean_spectrum(&[1.0; 10], &aux, &model, 0.1).unwrap();
    assert_eq!(out.flags.iter().filter(|f| **f).count(), 1);
    assert!(out.flags[3]);
}

#[test]
fn cleaning_argument_checks() {
    assert!(matches!(
        clean_spectrum(&[1.0; 3], &[1.0; 4], &[1.0; 4], 0.1),
        Err(Error::GridMismatch)
    ));
    assert!(matches!(
        clean_spectrum(&[1.0; 3], &[1.0, 0.0, 1.0], &[1.0; 3], 0.1),
        Err(Error::DivideByZero { index: 1 })
    ));
}

#[test]
fn independent_aux_ratios_flag_only_outliers() {
    let n_avg = 200;
    let sigma = (2.0 / n_avg as f64).sqrt();
    let a = vec![1.0; 5];
    let b = vec![1.0, 1.0 + sigma, 1.0 + 5.0 * sigma, 1.0, 1.0 - 5.0 * sigma];
    assert_eq!(
        flag_disagreement(&a, &b, n_avg).unwrap(),
        vec![false, false, true, false, true]
    );
}
