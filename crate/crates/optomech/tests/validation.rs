mod common;

use common::{rel, shipped, shipped_band, shipped_config, TAU};
use nalgebra::{DMatrix, DVector};
use optomech::conditioning::conditional_spectra_from_responses;
use optomech::constants::K_B;
use optomech::validation::{
    build_state_space, care_residual, empirical_conditional_variance, kalman_steady_state,
    lyapunov, monte_carlo_covariance, simulate, solve_care, Initial, LinearStateSpace,
    ParamDistribution, Scheme, SimOptions,
};
use optomech::{
    condition, integrate_covariance, model_spectrum_set, CausalFilter, Complex64,
    ControllerResponse, DampingModel, Error, FrequencyGrid, OptomechConfig,
};

/// Slow, heavily damped oscillator in a broad resonant cavity, cheap to simulate.
fn bench_config(n_cav: f64) -> OptomechConfig {
    let mut cfg = shipped_config().with_kappa(TAU * 2.0e3);
    cfg.damping = DampingModel::Viscous;
    cfg.delta_frac = 0.0;
    cfg.omega_m = TAU * 1.0e3;
    cfg.omega_eff = cfg.omega_m;
    cfg.q_factor = 5.0;
    cfg.loss_angle = 0.2;
    cfg.temperature = 1.0;
    cfg.mass = 1.0e-9;
    cfg.n_cav = n_cav;
    cfg.p_cav = None;
    cfg
}

/// `dx = −γx dt + dW₁`, `y = x + noise`, with one-sided PSDs `2q`, `2r`,
/// alongside an unobserved copy of `x` driven by its own noise.
fn scalar_filter_problem(gamma: f64, q: f64, r: f64) -> LinearStateSpace {
    LinearStateSpace {
        state_names: vec!["x".into(), "hidden".into()],
        noise_names: vec!["process".into(), "hidden".into(), "measurement".into()],
        a: DMatrix::from_diagonal_element(2, 2, -gamma),
        b: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        c: DVector::from_vec(vec![1.0, 0.0]),
        d: DVector::from_vec(vec![0.0, 0.0, 1.0]),
        noise_psd: vec![2.0 * q, 2.0 * q, 2.0 * r],
        state_scale: vec![1.0, 1.0],
    }
}

#[test]
fn uncoupled_oscillator_obeys_equipartition() {
    let cfg = bench_config(0.0);
    let ss = build_state_space(&cfg, &ControllerResponse::zero()).unwrap();
    let k = kalman_steady_state(&ss).unwrap();
    let classical = K_B * cfg.temperature / (cfg.mass * cfg.omega_m * cfg.omega_m);
    assert!(
        rel(k.prior[(0, 0)], classical) < 0.01,
        "{:e} vs {classical:e}",
        k.prior[(0, 0)]
    );
}

#[test]
fn blue_detuning_without_feedback_is_unstable() {
    let cfg = shipped_config();
    assert!(matches!(
        build_state_space(&cfg, &ControllerResponse::zero()),
        Err(Error::UnstableLoop { .. })
    ));
}

#[test]
fn state_space_spectra_match_the_frequency_model() {
    let (mut cfg, ctrl) = shipped();
    cfg.damping = DampingModel::Viscous;
    let ss = build_state_space(&cfg, &ctrl).unwrap();
    let grid = FrequencyGrid::new(10.0, 1.0e6, 1 << 12).unwrap();
    let model = model_spectrum_set(&cfg, &ctrl, &grid).unwrap();
    let (i0, i1) = grid.band_indices(1.0e4, 1.0e6).unwrap();
    let omegas = grid.omegas();
    for i in i0..=i1 {
        let (syy, sqq, sqy) = ss.spectra_at(omegas[i], 0);
        assert!(rel(sqq, model.s_qq[i]) < 0.02, "{} Hz", grid.freq(i));
        // Coherent part of q in y does not depend on how y is normalized.
        let coherent = sqy.norm_sqr() / syy;
        let expected = model.s_qy[i].norm_sqr() / model.s_yy[i];
        assert!(rel(coherent, expected) < 0.02, "{} Hz", grid.freq(i));
    }
}

#[test]
fn noiseless_trajectory_follows_the_matrix_exponential() {
    let cfg = bench_config(1.0e6);
    let mut ss = build_state_space(&cfg, &ControllerResponse::zero()).unwrap();
    ss.noise_psd.iter_mut().for_each(|s| *s = 0.0);
    let n = ss.n_states();
    let mut x0 = vec![0.0; n];
    x0[0] = 1e-12;
    x0[1] = -3e-17;
    let dt = 1.0e-6;
    let opts = SimOptions {
        duration: 2.0e-3,
        dt,
        seed: 1,
        scheme: Scheme::Exact,
        initial: Initial::Given(x0.clone()),
    };
    let sim = simulate(&ss, &opts).unwrap();
    let x0 = DVector::from_vec(x0);
    for k in [0, 1, 10, 500, 1999] {
        let x = (&ss.a * (k as f64 * dt)).exp() * &x0;
        assert!(
            (sim.q[k] - x[0]).abs() <= 1e-6 * x0[0].abs(),
            "step {k}: {:e} vs {:e}",
            sim.q[k],
            x[0]
        );
        assert!(
            (sim.p[k] - x[1]).abs() <= 1e-6 * x0[1].abs().max(cfg.mass * cfg.omega_m * x0[0].abs())
        );
    }
}

#[test]
fn simulated_variance_matches_lyapunov_and_unfiltered_error() {
    let cfg = bench_config(1.0e6);
    let ss = build_state_space(&cfg, &ControllerResponse::zero()).unwrap();
    let prior = kalman_steady_state(&ss).unwrap().prior;
    let dt = 1.0e-5;
    let opts = SimOptions {
        duration: 20.0,
        dt,
        seed: 5,
        scheme: Scheme::Exact,
        initial: Initial::Stationary,
    };
    let sim = simulate(&ss, &opts).unwrap();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!(
        rel(var(&sim.q), prior[(0, 0)]) < 0.02,
        "{:e} vs {:e}",
        var(&sim.q),
        prior[(0, 0)]
    );
    assert!(rel(var(&sim.p), prior[(1, 1)]) < 0.02);

    let grid = FrequencyGrid::new(1.0, 0.5 / dt, 1 << 10).unwrap();
    let zero = CausalFilter::from_ring(grid, vec![Complex64::new(0.0, 0.0); grid.ring_len()], None);
    let emp = empirical_conditional_variance(&sim, &zero, &zero, 3).unwrap();
    assert!(rel(emp.v_qq, prior[(0, 0)]) < 0.02);
    assert!(emp.se_qq > 0.0 && emp.se_qq < 0.05 * emp.v_qq);
}

#[test]
fn simulation_is_reproducible_from_its_seed() {
    let cfg = bench_config(1.0e6);
    let ss = build_state_space(&cfg, &ControllerResponse::zero()).unwrap();
    let opts = |seed| SimOptions {
        duration: 1.0e-2,
        dt: 1.0e-5,
        seed,
        scheme: Scheme::Exact,
        initial: Initial::Stationary,
    };
    let (a, b, c) = (
        simulate(&ss, &opts(9)).unwrap(),
        simulate(&ss, &opts(9)).unwrap(),
        simulate(&ss, &opts(10)).unwrap(),
    );
    assert_eq!(a.q, b.q);
    assert_eq!(a.y, b.y);
    assert_ne!(a.q, c.q);
}

#[test]
fn oversized_step_is_rejected() {
    let cfg = bench_config(1.0e6);
    let ss = build_state_space(&cfg, &ControllerResponse::zero()).unwrap();
    let opts = SimOptions {
        duration: 1.0,
        dt: 1.0e-3,
        seed: 0,
        scheme: Scheme::EulerMaruyama,
        initial: Initial::Zero,
    };
    assert!(matches!(
        simulate(&ss, &opts),
        Err(Error::StepTooLarge { .. })
    ));
}

#[test]
fn scalar_riccati_matches_the_closed_form() {
    let (gamma, q, r) = (2.0, 3.0, 0.5);
    let k = kalman_steady_state(&scalar_filter_problem(gamma, q, r)).unwrap();
    let p = r * (-gamma + (gamma * gamma + q / r).sqrt());
    assert!(rel(k.covariance[(0, 0)], p) < 1e-10);
    assert!(rel(k.prior[(0, 0)], q / (2.0 * gamma)) < 1e-12);
    assert!(rel(k.gain[0], p / r) < 1e-10);
    assert!(rel(k.covariance[(1, 1)], k.prior[(1, 1)]) < 1e-10);
}

#[test]
fn useless_measurement_leaves_the_prior() {
    let k = kalman_steady_state(&scalar_filter_problem(2.0, 3.0, 1e12)).unwrap();
    assert!(rel(k.covariance[(0, 0)], k.prior[(0, 0)]) < 1e-5);
}

#[test]
fn covariance_scales_with_both_noises() {
    let one = kalman_steady_state(&scalar_filter_problem(2.0, 3.0, 0.5)).unwrap();
    let two = kalman_steady_state(&scalar_filter_problem(2.0, 6.0, 1.0)).unwrap();
    assert!(rel(two.covariance[(0, 0)], 2.0 * one.covariance[(0, 0)]) < 1e-10);

    let (cfg, ctrl) = shipped();
    let mut ss = build_state_space(&cfg, &ctrl).unwrap();
    let base = kalman_steady_state(&ss).unwrap();
    ss.noise_psd.iter_mut().for_each(|s| *s *= 2.0);
    let doubled = kalman_steady_state(&ss).unwrap();
    for (i, j) in [(0, 0), (1, 1), (0, 1)] {
        assert!(rel(doubled.qp[i][j], 2.0 * base.qp[i][j]) < 1e-6);
    }
}

#[test]
fn riccati_and_lyapunov_residuals_are_small() {
    let (cfg, ctrl) = shipped();
    let ss = build_state_space(&cfg, &ctrl).unwrap();
    let a = ss.scaled_drift();
    let sc = DMatrix::from_diagonal(&DVector::from_vec(
        ss.state_scale.iter().map(|s| 1.0 / s).collect(),
    ));
    let (q, r, _) = ss.noise_covariances();
    let q = &sc * q * &sc;
    let prior = lyapunov(&a, &q).unwrap();
    let res = &a * &prior + &prior * a.transpose() + &q;
    assert!(res.norm() <= 1e-8 * (q.norm() + (&a * &prior).norm()));

    let c = DMatrix::from_diagonal(&DVector::from_vec(ss.state_scale.clone())) * &ss.c;
    let g = &c * c.transpose() / r;
    let x = solve_care(&a.transpose(), &g, &q).unwrap();
    assert!(care_residual(&a.transpose(), &g, &q, &x) < 1e-10);
}

#[test]
fn mismatched_filter_does_worse() {
    let (cfg, ctrl) = shipped();
    let grid = FrequencyGrid::new(10.0, 1.0e6, 1 << 14).unwrap();
    let band = shipped_band();
    let run = condition(&cfg, &ctrl, &grid, band).unwrap();
    let wrong = condition(&cfg.with_kappa(2.0 * cfg.kappa), &ctrl, &grid, band).unwrap();
    let cond = conditional_spectra_from_responses(
        &run.spectra,
        &wrong.h_q.response(),
        &wrong.h_p.response(),
    )
    .unwrap();
    let state = integrate_covariance(&cond, &cfg, band).unwrap();
    assert!(state.v_qq > run.state.v_qq);
}

fn mc_setup() -> (OptomechConfig, ControllerResponse, FrequencyGrid) {
    let (cfg, ctrl) = shipped();
    (cfg, ctrl, FrequencyGrid::new(10.0, 1.0e6, 1 << 12).unwrap())
}

#[test]
fn monte_carlo_without_spread_returns_the_nominal_state() {
    let (cfg, ctrl, grid) = mc_setup();
    let r = monte_carlo_covariance(
        &cfg,
        &ParamDistribution::default_list(0.0),
        &ctrl,
        &grid,
        shipped_band(),
        100,
        1,
    )
    .unwrap();
    assert_eq!(r.n_accepted, 100);
    // Identical samples, up to the rounding of the running mean.
    assert!(r.v_qq.std <= 1e-12 * r.nominal.v_qq);
    assert!(rel(r.v_qq.mean, r.nominal.v_qq) < 1e-12);
    assert!(rel(r.squeeze_db.mean, r.nominal.squeeze_db) < 1e-12);
}

#[test]
fn monte_carlo_is_seeded_and_spreads_with_sigma() {
    let (cfg, ctrl, grid) = mc_setup();
    let dist = ParamDistribution::default_list(0.01);
    let run = |d: &ParamDistribution, seed| {
        monte_carlo_covariance(&cfg, d, &ctrl, &grid, shipped_band(), 100, seed).unwrap()
    };
    let (a, b) = (run(&dist, 7), run(&dist, 7));
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let wide = run(&dist.scaled(2.0), 7);
    assert!(wide.v_qq.std > a.v_qq.std);
    assert!(wide.squeeze_db.std > a.squeeze_db.std);
    assert!(matches!(
        monte_carlo_covariance(&cfg, &dist, &ctrl, &grid, shipped_band(), 10, 7),
        Err(Error::InvalidConfig { .. })
    ));
}
