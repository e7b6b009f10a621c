mod common;

use common::{shipped_config, TAU};
use optomech::factorization::causal_project_ring;
use optomech::physics::{bare_susceptibility, cavity_susceptibility, closed_loop_noise_responses};
use optomech::pipeline::clean_spectrum;
use optomech::spectra::{detected_psd, ALL_INPUTS};
use optomech::{Complex64, ConditionalState, ControllerResponse, Error, OptomechConfig};
use proptest::prelude::*;

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b)),
        len,
    )
}

fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    let scale = b.iter().map(|v| v.norm()).fold(1e-300, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efficiencies_outside_the_unit_interval_are_named(field in 0usize..4, v in prop_oneof![-5.0..-1e-6f64, 1.000001..5.0f64]) {
        let mut cfg = shipped_config();
        let name = ["eta1", "eta2", "eta_total", "mode_match"][field];
        *[&mut cfg.eta1, &mut cfg.eta2, &mut cfg.eta_total, &mut cfg.mode_match][field] = v;
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => prop_assert_eq!(field, name),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn config_survives_a_toml_round_trip(kappa_scale in 0.1..10.0f64, delta in -0.9..0.9f64, t in 0.01..400.0f64) {
        let mut cfg = shipped_config().with_kappa(kappa_scale * shipped_config().kappa);
        cfg.delta_frac = delta;
        cfg.temperature = t;
        let back = OptomechConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn eigen_figures_are_consistent(a in 0.01..100.0f64, b in 0.01..100.0f64, r in -0.999..0.999f64) {
        let c = r * (a * b).sqrt();
        let s = ConditionalState::from_tilde(a, b, c);
        let tol = 1e-10 * (a + b);
        prop_assert!(s.eig_min <= a.min(b) + tol && s.eig_max >= a.max(b) - tol);
        prop_assert!((s.eig_min + s.eig_max - (a + b)).abs() <= tol);
        prop_assert!((s.eig_min * s.eig_max - s.det).abs() <= 1e-9 * (a * b));
        prop_assert!(s.eig_min > 0.0);
    }

    #[test]
    fn causal_projection_is_linear_and_idempotent(
        f in complex_vec(64),
        g in complex_vec(64),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let project = |v: &[Complex64]| {
            let mut r = v.to_vec();
            causal_project_ring(&mut r);
            r
        };
        let combo: Vec<Complex64> = f.iter().zip(&g).map(|(x, y)| alpha * x + beta * y).collect();
        let (pf, pg) = (project(&f), project(&g));
        let expected: Vec<Complex64> = pf.iter().zip(&pg).map(|(x, y)| alpha * x + beta * y).collect();
        prop_assert!(close(&project(&combo), &expected, 1e-12));
        prop_assert!(close(&project(&pf), &pf, 1e-12));
    }

    #[test]
    fn cleaning_commutes_with_common_scaling(
        values in prop::collection::vec((0.1..10.0f64, 0.1..10.0f64, 0.1..10.0f64, 0.1..10.0f64), 1..50),
    ) {
        let target: Vec<f64> = values.iter().map(|v| v.0).collect();
        let aux: Vec<f64> = values.iter().map(|v| v.1).collect();
        let model: Vec<f64> = values.iter().map(|v| v.2).collect();
        let st: Vec<f64> = values.iter().map(|v| v.0 * v.3).collect();
        let sa: Vec<f64> = values.iter().map(|v| v.1 * v.3).collect();
        let sm: Vec<f64> = values.iter().map(|v| v.2 * v.3).collect();
        let a = clean_spectrum(&target, &aux, &model, 0.1).unwrap();
        let b = clean_spectrum(&st, &sa, &sm, 0.1).unwrap();
        for ((x, y), v) in a.values.iter().zip(&b.values).zip(&values) {
            prop_assert!((v.3 * x / y - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(a.flags, b.flags);
    }

    #[test]
    fn susceptibilities_are_hermitian(f in 1.0..1e8f64, kappa_scale in 0.1..10.0f64, delta in -2.0..2.0f64) {
        let mut cfg = shipped_config().with_kappa(kappa_scale * shipped_config().kappa);
        cfg.delta_frac = delta;
        let w = TAU * f;
        let ((u, v), (um, vm)) = (cavity_susceptibility(&cfg, w), cavity_susceptibility(&cfg, -w));
        prop_assert!((um - u.conj()).norm() <= 1e-12 * u.norm());
        prop_assert!((vm - v.conj()).norm() <= 1e-12 * u.norm());
        let chi = bare_susceptibility(&cfg, w);
        prop_assert!((bare_susceptibility(&cfg, -w) - chi.conj()).norm() <= 1e-12 * chi.norm());
    }

    #[test]
    fn closed_loop_responses_are_hermitian(f in 10.0..1e7f64) {
        let cfg = shipped_config();
        let ctrl = common::shipped().1;
        let w = TAU * f;
        let (plus, minus) = (
            closed_loop_noise_responses(&cfg, &ctrl, w).unwrap(),
            closed_loop_noise_responses(&cfg, &ctrl, -w).unwrap(),
        );
        for (a, b) in plus.readout().iter().zip(minus.readout()) {
            prop_assert!((b - a.conj()).norm() <= 1e-9 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn detected_psd_is_positive(f in 1.0..1e8f64, delta in -0.5..0.5f64) {
        let mut cfg = shipped_config();
        cfg.delta_frac = delta;
        let s = detected_psd(&cfg, &ControllerResponse::zero(), TAU * f, &ALL_INPUTS, &|_| 0.0).unwrap();
        prop_assert!(s > 0.0 && s.is_finite());
    }
}
