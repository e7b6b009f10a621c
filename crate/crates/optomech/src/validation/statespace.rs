use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{thermal_occupation, OptomechConfig};
use crate::constants::HBAR;
use crate::controller::ControllerResponse;
use crate::error::{Error, Result};
use crate::physics::{NoiseInput, N_INPUTS};

/// Itô-form linear system `dx = A x dt + B dW`, observation `y = C x + D ξ`,
/// driven by independent white noises with one-sided PSDs `noise_psd`
/// (so `E[dW dWᵀ] = diag(noise_psd)/2·dt`).
#[derive(Debug, Clone, Serialize)]
pub struct LinearStateSpace {
    pub state_names: Vec<String>,
    pub noise_names: Vec<String>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub noise_psd: Vec<f64>,
    /// Typical magnitude of each state, used to condition numerical work.
    pub state_scale: Vec<f64>,
}

impl LinearStateSpace {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_noises(&self) -> usize {
        self.b.ncols()
    }

    /// Drift matrix in the coordinates `x/state_scale`.
    pub fn scaled_drift(&self) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, n, |i, j| {
            self.a[(i, j)] * self.state_scale[j] / self.state_scale[i]
        })
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.scaled_drift()
            .complex_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    /// Largest real part among the drift eigenvalues.
    pub fn max_real_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_stable(&self) -> Result<()> {
        let max_real = self.max_real_eigenvalue();
        if !(max_real < 0.0) {
            return Err(Error::UnstableLoop { max_real });
        }
        Ok(())
    }

    /// Two-sided noise intensity matrix `N = diag(S)/2`.
    pub fn intensity(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.n_noises(),
            self.noise_psd.iter().map(|s| 0.5 * s),
        ))
    }

    /// `(Q, R, S)` = `(B N Bᵀ, D N Dᵀ, B N Dᵀ)`.
    pub fn noise_covariances(&self) -> (DMatrix<f64>, f64, DVector<f64>) {
        let n = self.intensity();
        let q = &self.b * &n * self.b.transpose();
        let r = (self.d.transpose() * &n * &self.d)[(0, 0)];
        let s = &self.b * &n * &self.d;
        (q, r, s)
    }

    /// Transfer vector `(iΩ − A)⁻¹ v`.
    pub fn resolvent(&self, omega: f64, v: &DVector<f64>) -> DVector<Complex64> {
        let n = self.n_states();
        let mut m = self.a.map(|x| Complex64::new(-x, 0.0));
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.0, omega);
        }
        let rhs = v.map(|x| Complex64::new(x, 0.0));
        m.lu()
            .solve(&rhs)
            .expect("iΩ − A is invertible for a stable system")
    }

    /// One-sided spectra `(S_yy, S_qq, S_qy)` of the observation and of state
    /// `q_index` at angular frequency `omega`.
    pub fn spectra_at(&self, omega: f64, q_index: usize) -> (f64, f64, Complex64) {
        let n = self.n_states();
        let mut m = self.a.map(|x| Complex64::new(-x, 0.0));
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.0, omega);
        }
        let lu = m.lu();
        let (mut syy, mut sqq, mut sqy) = (0.0, 0.0, Complex64::new(0.0, 0.0));
        for j in 0..self.n_noises() {
            let s = self.noise_psd[j];
            if s == 0.0 {
                continue;
            }
            let col = self.b.column(j).map(|x| Complex64::new(x, 0.0));
            let x = lu.solve(&col).expect("stable system");
            let cy: Complex64 = (0..n).map(|i| x[i] * self.c[i]).sum::<Complex64>() + self.d[j];
            let cq = x[q_index];
            syy += cy.norm_sqr() * s;
            sqq += cq.norm_sqr() * s;
            sqy += cq * cy.conj() * s;
        }
        (syy, sqq, sqy)
    }
}

/// Time-domain model of the closed loop.
///
/// States are `[q, p, X, Y, controller…]` and noises follow
/// [`NoiseInput::ALL`]. Mechanical loss uses the viscous substitute
/// `Γ_v = Ω_m²φ/Ω_eff` with a white thermal force matched at `Ω_eff`,
/// whatever `cfg.damping` says. The observation is the detected homodyne
/// quadrature. A Gouy phase other than zero is only representable when the
/// amplitude quadrature is not detected.
pub fn build_state_space(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
) -> Result<LinearStateSpace> {
    use NoiseInput::*;
    let real = ctrl.realization()?;
    let (ct, st) = (cfg.homodyne_angle.cos(), cfg.homodyne_angle.sin());
    if cfg.gouy_phase.sin().abs() > 1e-12 && ct.abs() > 1e-12 {
        return Err(Error::Controller(
            "a non-zero Gouy phase on the detected amplitude quadrature has no real time-domain form".into(),
        ));
    }
    let gouy = cfg.gouy_phase.cos().signum();
    let nc = real.a.nrows();
    let n = 4 + nc;
    let m = N_INPUTS;
    let (iq, ip, ix, iy) = (0, 1, 2, 3);
    let (s1, s2, sl) = (cfg.kappa1.sqrt(), cfg.kappa2.sqrt(), cfg.kappa_l.sqrt());
    let (e1, e2, eps) = (cfg.eta1, cfg.eta2, cfg.mode_match);
    let delta = cfg.detuning();
    let galpha = 2f64.sqrt() * cfg.g_om * cfg.alpha();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);

    a[(iq, ip)] = 1.0 / cfg.mass;
    a[(ip, iq)] = -cfg.mass * cfg.omega_m * cfg.omega_m;
    a[(ip, ip)] = -cfg.gamma_viscous();
    a[(ip, ix)] = HBAR * galpha;
    b[(ip, ThermalForce.index())] = 1.0;

    a[(ix, ix)] = -cfg.kappa / 2.0;
    a[(ix, iy)] = -delta;
    b[(ix, Xin1.index())] = s1;
    b[(ix, Xin2.index())] = s2;
    b[(ix, XinL.index())] = sl;

    a[(iy, iy)] = -cfg.kappa / 2.0;
    a[(iy, ix)] = delta;
    a[(iy, iq)] = galpha;
    b[(iy, Yin1.index())] = s1;
    b[(iy, Yin2.index())] = s2;
    b[(iy, YinL.index())] = sl;

    // Detector signal det = det_x·X + det_n·w, controller output
    // c = Cc·xc + Dc·det.
    let det_x = (e2 * cfg.kappa2).sqrt();
    let mut det_n = DVector::zeros(m);
    det_n[Xin2.index()] = -e2.sqrt();
    det_n[XinEta2.index()] = (1.0 - e2).sqrt();
    let mut c_row = DVector::zeros(n);
    let mut c_noise = &det_n * real.d;
    c_row[ix] = real.d * det_x;
    for j in 0..nc {
        c_row[4 + j] = real.c[j];
        a[(4 + j, ix)] = real.b[j] * det_x;
        for k in 0..nc {
            a[(4 + j, 4 + k)] = real.a[(j, k)];
        }
        for k in 0..m {
            b[(4 + j, k)] = real.b[j] * det_n[k];
        }
    }
    // Feedback subtracts √κ₁·c from the amplitude drive.
    for j in 0..n {
        a[(ix, j)] -= s1 * c_row[j];
    }
    for k in 0..m {
        b[(ix, k)] -= s1 * c_noise[k];
    }

    // Detected quadrature.
    let mut c_obs = DVector::zeros(n);
    let mut d_obs = DVector::zeros(m);
    let (r1, rm) = (e1.sqrt(), (1.0 - eps).sqrt());
    // Amplitude port: √η₁(−e^{iφ}√(1−ε)(c + X_ε) + √ε(−X_in1 + √κ₁X)) + √(1−η₁)X_η1
    for j in 0..n {
        c_obs[j] += ct * r1 * (-gouy * rm * c_row[j]);
    }
    c_obs[ix] += ct * r1 * eps.sqrt() * s1;
    c_noise.iter_mut().for_each(|v| *v *= -gouy * rm * r1 * ct);
    d_obs += &c_noise;
    d_obs[XinEps.index()] += -ct * r1 * gouy * rm;
    d_obs[Xin1.index()] += -ct * r1 * eps.sqrt();
    d_obs[XinEta1.index()] += ct * (1.0 - e1).sqrt();
    // Phase port: √η₁(−e^{iφ}√(1−ε)Y_ε + √ε(−Y_in1 + √κ₁Y)) + √(1−η₁)Y_η1
    c_obs[iy] += st * r1 * eps.sqrt() * s1;
    d_obs[YinEps.index()] += -st * r1 * gouy * rm;
    d_obs[Yin1.index()] += -st * r1 * eps.sqrt();
    d_obs[YinEta1.index()] += st * (1.0 - e1).sqrt();

    let w = cfg.omega_eff;
    let s_force = 4.0
        * HBAR
        * (thermal_occupation(w, cfg.temperature) + 0.5)
        * cfg.mass
        * cfg.gamma_viscous()
        * w;
    let mut noise_psd = vec![1.0; m];
    noise_psd[ThermalForce.index()] = s_force;

    let q_zpf = (HBAR / (2.0 * cfg.mass * cfg.omega_eff)).sqrt();
    let p_zpf = (HBAR * cfg.mass * cfg.omega_eff / 2.0).sqrt();
    let mut state_names: Vec<String> = ["q", "p", "X", "Y"].iter().map(|s| s.to_string()).collect();
    let mut state_scale = vec![q_zpf, p_zpf, 1.0, 1.0];
    let ctrl_scale = 1.0 / real.a.norm().max(1.0);
    for j in 0..nc {
        state_names.push(format!("controller{j}"));
        state_scale.push(ctrl_scale);
    }
    let ss = LinearStateSpace {
        state_names,
        noise_names: NoiseInput::ALL
            .iter()
            .map(|i| i.name().to_string())
            .collect(),
        a,
        b,
        c: c_obs,
        d: d_obs,
        noise_psd,
        state_scale,
    };
    ss.check_stable()?;
    Ok(ss)
}
