mod common;

use common::{coarse_grid, shipped, TAU};
use optomech::factorization::{causal_project_ring, doubling_change};
use optomech::grid::Transform;
use optomech::{
    causal_factor, causal_project, model_spectrum_set, verify_causality, CausalFilter, Complex64,
    Error, FrequencyGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn lorentz_grid() -> FrequencyGrid {
    FrequencyGrid::new(1.0, 1.0e5, 1 << 16).unwrap()
}

/// Ring of `dt·FFT(h)` for a time series laid out on the ring.
fn spectrum_of(grid: &FrequencyGrid, h: &[f64]) -> Vec<Complex64> {
    let mut r: Vec<Complex64> = h.iter().map(|&v| c(v * grid.dt())).collect();
    Transform::new(r.len()).forward(&mut r);
    r
}

/// Random sequence supported on `t ≥ 0` (`causal`) or `t < 0`, decaying away from zero lag.
fn random_sequence(rng: &mut ChaCha8Rng, n: usize, causal: bool) -> Vec<f64> {
    let mut h = vec![0.0; n];
    for k in 0..200 {
        let v = rng.random_range(-1.0..1.0) * (-(k as f64) / 40.0).exp();
        if causal {
            h[k] = v;
        } else {
            h[n - 1 - k] = v;
        }
    }
    h
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[test]
fn white_spectrum_has_constant_factor() {
    let grid = coarse_grid();
    let sigma2 = 3.7;
    let m = causal_factor(&grid, &vec![sigma2; grid.len()]).unwrap();
    for v in m.response() {
        assert!((v - c(sigma2.sqrt())).norm() < 1e-12);
    }
    assert!(verify_causality(&m).anticausal_energy_fraction < 1e-20);
}

#[test]
fn lorentzian_factor_is_the_first_order_low_pass() {
    let grid = lorentz_grid();
    let gamma = TAU * 1.0e3;
    let s: Vec<f64> = grid
        .omegas()
        .iter()
        .map(|w| 2.0 * gamma / (gamma * gamma + w * w))
        .collect();
    let m = causal_factor(&grid, &s).unwrap();
    let d = verify_causality(&m);
    assert!(d.residual.unwrap() < 1e-6);
    assert!(d.anticausal_energy_fraction < 1e-8);
    // Agreement up to a phase that grows linearly with frequency, bounded by
    // one sample of delay.
    for (w, mv) in grid
        .omegas()
        .iter()
        .zip(m.response())
        .filter(|(w, _)| **w < 0.1 * TAU * grid.f_max())
    {
        let expected = (2.0 * gamma).sqrt() / Complex64::new(gamma, *w);
        let ratio = mv / expected;
        assert!((ratio.norm() - 1.0).abs() < 1e-6);
        assert!(ratio.arg().abs() <= w * grid.dt(), "{} Hz", w / TAU);
    }
}

#[test]
fn shipped_model_factor_is_exact_and_minimum_phase() {
    let (cfg, ctrl) = shipped();
    let grid = FrequencyGrid::new(10.0, 1.0e6, 1 << 20).unwrap();
    let s = model_spectrum_set(&cfg, &ctrl, &grid).unwrap();
    let m = causal_factor(&s.grid, &s.s_yy).unwrap();
    let d = verify_causality(&m);
    assert!(d.residual.unwrap() < 1e-6);
    assert!(d.anticausal_energy_fraction <= 1e-8);
    assert!(verify_causality(&m.inverse()).anticausal_energy_fraction <= 1e-6);
}

#[test]
fn factor_rejects_non_positive_input() {
    let grid = coarse_grid();
    let mut s = vec![1.0; grid.len()];
    s[17] = 0.0;
    assert!(matches!(
        causal_factor(&grid, &s),
        Err(Error::NonPositiveSpectrum { index: 17 })
    ));
    assert!(matches!(
        causal_factor(&grid, &s[1..]),
        Err(Error::GridMismatch)
    ));
}

/// Sampled first-order responses on every ring frequency: `e^{−γt}` for
/// `t ≥ 0` when `causal`, otherwise `e^{γt}` for `t < 0`.
fn first_order_ring(grid: &FrequencyGrid, gamma: f64, causal: bool) -> Vec<Complex64> {
    let (n, dt) = (grid.ring_len(), grid.dt());
    let a = (-gamma * dt).exp();
    (0..n)
        .map(|k| {
            let w = TAU * k as f64 / (n as f64 * dt);
            if causal {
                c(dt) / (1.0 - a * Complex64::from_polar(1.0, -w * dt))
            } else {
                let z = Complex64::from_polar(1.0, w * dt);
                dt * a * z / (1.0 - a * z)
            }
        })
        .collect()
}

#[test]
fn projection_keeps_a_causal_low_pass() {
    let grid = lorentz_grid();
    let gamma = TAU * 1.0e3;
    let f = first_order_ring(&grid, gamma, true);
    let mut projected = f.clone();
    causal_project_ring(&mut projected);
    assert!(diff(&projected, &f) <= 1e-8 * norm(&f));

    // The continuous response, known only on the one-sided grid, is kept up
    // to the truncation of its slowly decaying tail.
    let continuous: Vec<Complex64> = grid
        .omegas()
        .iter()
        .map(|w| 1.0 / Complex64::new(gamma, *w))
        .collect();
    let projected = causal_project(&grid, &continuous).unwrap();
    let worst = grid
        .freqs()
        .iter()
        .zip(projected.iter().zip(&continuous))
        .filter(|(f, _)| **f < 0.01 * grid.f_max())
        .map(|(_, (p, c))| (p - c).norm() / c.norm())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-2, "{worst}");
}

#[test]
fn projection_annihilates_anticausal_input() {
    let grid = lorentz_grid();
    let f = first_order_ring(&grid, TAU * 1.0e3, false);
    let mut projected = f.clone();
    causal_project_ring(&mut projected);
    assert!(norm(&projected) <= 1e-8 * norm(&f));
}

#[test]
fn projection_separates_causal_and_anticausal_parts() {
    let grid = coarse_grid();
    let n = grid.ring_len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let fc = spectrum_of(&grid, &random_sequence(&mut rng, n, true));
        let fa = spectrum_of(&grid, &random_sequence(&mut rng, n, false));
        let mut sum: Vec<Complex64> = fc.iter().zip(&fa).map(|(x, y)| x + y).collect();
        causal_project_ring(&mut sum);
        assert!(diff(&sum, &fc) <= 1e-10 * norm(&fc));
    }
}

#[test]
fn projection_is_linear_and_idempotent() {
    let grid = coarse_grid();
    let n = grid.ring_len();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = spectrum_of(
        &grid,
        &(0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    );
    let g = spectrum_of(
        &grid,
        &(0..n)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    );
    let (alpha, beta) = (0.7, -2.3);
    let project = |v: &[Complex64]| {
        let mut r = v.to_vec();
        causal_project_ring(&mut r);
        r
    };
    let combo: Vec<Complex64> = f
        .iter()
        .zip(&g)
        .map(|(x, y)| alpha * x + beta * y)
        .collect();
    let (pf, pg, pc) = (project(&f), project(&g), project(&combo));
    let expected: Vec<Complex64> = pf
        .iter()
        .zip(&pg)
        .map(|(x, y)| alpha * x + beta * y)
        .collect();
    assert!(diff(&pc, &expected) <= 1e-10 * norm(&expected));
    assert!(diff(&project(&pf), &pf) <= 1e-10 * norm(&pf));
}

#[test]
fn transform_pair_satisfies_parseval() {
    let grid = coarse_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = random_sequence(&mut rng, grid.ring_len(), true);
    let filter = CausalFilter::from_ring(grid, spectrum_of(&grid, &h), None);
    let freq: f64 = filter.ring.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.df();
    let time: f64 = filter.impulse.iter().map(|v| v * v).sum::<f64>() * grid.dt();
    assert!(((freq - time) / time).abs() < 1e-8);
    for (a, b) in filter.impulse.iter().zip(&h) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn causality_diagnostic_detects_both_extremes() {
    let grid = coarse_grid();
    let n = grid.ring_len();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let causal = CausalFilter::from_ring(
        grid,
        spectrum_of(&grid, &random_sequence(&mut rng, n, true)),
        None,
    );
    let anti = CausalFilter::from_ring(
        grid,
        spectrum_of(&grid, &random_sequence(&mut rng, n, false)),
        None,
    );
    assert!(verify_causality(&causal).anticausal_energy_fraction < 1e-20);
    assert!(verify_causality(&anti).anticausal_energy_fraction > 1.0 - 1e-12);
    assert!(verify_causality(&causal).residual.is_none());
}

#[test]
fn factor_is_stable_under_grid_doubling() {
    let (cfg, ctrl) = shipped();
    let grid = FrequencyGrid::new(10.0, 1.0e6, 1 << 14).unwrap();
    let band = (1.0e4, 1.0e6);
    let change = |n: usize| {
        let grid = FrequencyGrid::new(10.0, 1.0e6, n).unwrap();
        doubling_change(
            &grid,
            band,
            |g| Ok(model_spectrum_set(&cfg, &ctrl, g)?.s_yy),
        )
        .unwrap()
    };
    let (c12, c14) = (change(1 << 12), change(1 << 14));
    assert!(c14 < 2e-3 && c14 < 0.5 * c12, "{c12} {c14}");
    let white = doubling_change(&grid, band, |g| Ok(vec![2.0; g.len()])).unwrap();
    assert!(white < 1e-12);
}
