//! Closed-loop linear response of the detuned, feedback-stabilized cavity.
//!
//! The intracavity quadratures obey
//! `Ẋ = −κ/2·X − Δ·Y + x_drive` and `Ẏ = −κ/2·Y + Δ·X + √2·G·α·q + y_drive`,
//! the mirror obeys `q = χ_m·(√2·ħ·G·α·X + ξ)`, and the feedback controller
//! subtracts `√κ₁·K·det` from the amplitude drive, where `det` is the
//! curved-mirror detector signal.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{DampingModel, OptomechConfig};
use crate::constants::{HBAR, TAU};
use crate::controller::ControllerResponse;
use crate::error::{Error, Result};

/// Independent noise inputs of the model. Vacuum inputs are unit-PSD white
/// quadrature noises; `ThermalForce` has the PSD of
/// [`crate::spectra::thermal_force_psd`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseInput {
    Xin1,
    Yin1,
    Xin2,
    Yin2,
    XinL,
    YinL,
    XinEta2,
    XinEta1,
    YinEta1,
    XinEps,
    YinEps,
    ThermalForce,
}

pub const N_INPUTS: usize = 12;
const Q: usize = N_INPUTS;

impl NoiseInput {
    pub const ALL: [NoiseInput; N_INPUTS] = [
        NoiseInput::Xin1,
        NoiseInput::Yin1,
        NoiseInput::Xin2,
        NoiseInput::Yin2,
        NoiseInput::XinL,
        NoiseInput::YinL,
        NoiseInput::XinEta2,
        NoiseInput::XinEta1,
        NoiseInput::YinEta1,
        NoiseInput::XinEps,
        NoiseInput::YinEps,
        NoiseInput::ThermalForce,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_vacuum(self) -> bool {
        self != NoiseInput::ThermalForce
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseInput::Xin1 => "Xin1",
            NoiseInput::Yin1 => "Yin1",
            NoiseInput::Xin2 => "Xin2",
            NoiseInput::Yin2 => "Yin2",
            NoiseInput::XinL => "XinL",
            NoiseInput::YinL => "YinL",
            NoiseInput::XinEta2 => "XinEta2",
            NoiseInput::XinEta1 => "XinEta1",
            NoiseInput::YinEta1 => "YinEta1",
            NoiseInput::XinEps => "XinEps",
            NoiseInput::YinEps => "YinEps",
            NoiseInput::ThermalForce => "ThermalForce",
        }
    }
}

/// Linear combination of the noise inputs plus the displacement `q`.
#[derive(Debug, Clone, Copy)]
struct Lin([Complex64; N_INPUTS + 1]);

impl Lin {
    fn zero() -> Self {
        Lin([Complex64::new(0.0, 0.0); N_INPUTS + 1])
    }
    fn unit(i: usize, c: f64) -> Self {
        let mut l = Self::zero();
        l.0[i] = Complex64::new(c, 0.0);
        l
    }
    fn add(mut self, o: &Lin) -> Self {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a += b;
        }
        self
    }
    fn scale(mut self, s: Complex64) -> Self {
        for a in self.0.iter_mut() {
            *a *= s;
        }
        self
    }
    fn set(mut self, i: NoiseInput, c: f64) -> Self {
        self.0[i.index()] += c;
        self
    }
}

/// Cavity susceptibility components `(u, v)` at angular frequency `omega`.
pub fn cavity_susceptibility(cfg: &OptomechConfig, omega: f64) -> (Complex64, Complex64) {
    let d = cfg.detuning();
    let a = Complex64::new(cfg.kappa / 2.0, omega);
    let den = a * a + d * d;
    (a / den, Complex64::new(-d, 0.0) / den)
}

/// Bare mechanical susceptibility (Hermitian in `omega`).
pub fn bare_susceptibility(cfg: &OptomechConfig, omega: f64) -> Complex64 {
    let wm2 = cfg.omega_m * cfg.omega_m;
    let damping = match cfg.damping {
        DampingModel::Structural => wm2 * cfg.loss_angle * omega.signum(),
        DampingModel::Viscous => cfg.gamma_viscous() * omega,
    };
    1.0 / (cfg.mass * Complex64::new(wm2 - omega * omega, damping))
}

/// Feedback loop gain `√(η₂κ₁κ₂)·K·u`.
pub fn loop_gain(cfg: &OptomechConfig, ctrl: &ControllerResponse, omega: f64) -> Result<Complex64> {
    let (u, _) = cavity_susceptibility(cfg, omega);
    Ok((cfg.eta2 * cfg.kappa1 * cfg.kappa2).sqrt() * ctrl.eval(omega)? * u)
}

fn check_pole(cfg: &OptomechConfig, inv: Complex64, omega: f64) -> Result<()> {
    let scale = cfg.mass * omega.abs().max(cfg.omega_m).powi(2);
    if !(inv.norm() > 1e-13 * scale) || !inv.re.is_finite() || !inv.im.is_finite() {
        return Err(Error::PoleOnGrid {
            freq_hz: omega / TAU,
        });
    }
    Ok(())
}

/// Closed-loop effective mechanical susceptibility.
pub fn effective_susceptibility(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<Complex64> {
    let (_, v) = cavity_susceptibility(cfg, omega);
    let l = loop_gain(cfg, ctrl, omega)?;
    let chi_m = bare_susceptibility(cfg, omega);
    let spring = 2.0 * HBAR * cfg.g_om * cfg.g_om * cfg.n_cav * v / (1.0 + l);
    if spring == Complex64::new(0.0, 0.0) {
        return Ok(chi_m);
    }
    let inv = 1.0 / chi_m - spring;
    check_pole(cfg, inv, omega)?;
    Ok(1.0 / inv)
}

/// Open-loop (K = 0) transfer function from an amplitude modulation of the
/// cantilever-side input to the curved-mirror detector, including the optical
/// spring; flat factors of the modulator and detector are omitted.
pub fn open_loop_cavity_tf(cfg: &OptomechConfig, omega: f64) -> Result<Complex64> {
    let (u, v) = cavity_susceptibility(cfg, omega);
    let chi_m = bare_susceptibility(cfg, omega);
    let inv = 1.0 / chi_m - 2.0 * HBAR * cfg.g_om * cfg.g_om * cfg.n_cav * v;
    check_pole(cfg, inv, omega)?;
    Ok((cfg.eta2 * cfg.kappa1 * cfg.kappa2).sqrt() * u / (chi_m * inv))
}

/// Per-input transfer coefficients at one frequency.
#[derive(Debug, Clone, Copy)]
pub struct NoiseResponses {
    /// Coefficient of each input in the detected homodyne quadrature, including
    /// the path through the mirror motion.
    pub detected: [Complex64; N_INPUTS],
    /// Coefficient of each input in the mirror displacement `q`.
    pub displacement: [Complex64; N_INPUTS],
    /// Coefficient of `q` in the detected quadrature.
    pub mu: Complex64,
    pub chi_eff: Complex64,
}

impl NoiseResponses {
    /// Coefficients of the displacement-normalized readout `y = detected/μ`.
    pub fn readout(&self) -> [Complex64; N_INPUTS] {
        let mut y = self.detected;
        for c in y.iter_mut() {
            *c /= self.mu;
        }
        y
    }
}

fn solve(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<(NoiseResponses, Complex64, Complex64)> {
    use NoiseInput::*;
    let (u, v) = cavity_susceptibility(cfg, omega);
    let k = ctrl.eval(omega)?;
    let (s1, s2, sl) = (cfg.kappa1.sqrt(), cfg.kappa2.sqrt(), cfg.kappa_l.sqrt());
    let (e1, e2, eps) = (cfg.eta1, cfg.eta2, cfg.mode_match);
    let one = Complex64::new(1.0, 0.0);
    let l = (e2 * cfg.kappa1 * cfg.kappa2).sqrt() * k * u;

    let yin = Lin::unit(Q, 2f64.sqrt() * cfg.g_om * cfg.alpha())
        .set(Yin1, s1)
        .set(Yin2, s2)
        .set(YinL, sl);
    let xin = Lin::zero().set(Xin1, s1).set(Xin2, s2).set(XinL, sl);
    let fb_noise = Lin::zero()
        .set(Xin2, e2.sqrt())
        .set(XinEta2, -(1.0 - e2).sqrt());
    let x = yin
        .scale(v)
        .add(&xin.scale(u))
        .add(&fb_noise.scale(u * s1 * k))
        .scale(one / (1.0 + l));
    let det = Lin::zero()
        .set(Xin2, -e2.sqrt())
        .set(XinEta2, (1.0 - e2).sqrt())
        .add(&x.scale(Complex64::new((e2 * cfg.kappa2).sqrt(), 0.0)));
    let y = yin.scale(u).add(&xin.scale(-v)).add(&det.scale(v * s1 * k));

    let gouy = Complex64::from_polar(1.0, cfg.gouy_phase * omega.signum());
    let fb_eps = det.scale(k).set(XinEps, 1.0);
    let xm = Lin::zero()
        .set(Xin1, -1.0)
        .add(&x.scale(Complex64::new(s1, 0.0)));
    let ym = Lin::zero()
        .set(Yin1, -1.0)
        .add(&y.scale(Complex64::new(s1, 0.0)));
    let x_out = fb_eps
        .scale(-gouy * (1.0 - eps).sqrt())
        .add(&xm.scale(Complex64::new(eps.sqrt(), 0.0)))
        .scale(Complex64::new(e1.sqrt(), 0.0))
        .set(XinEta1, (1.0 - e1).sqrt());
    let y_eps = Lin::zero().set(YinEps, 1.0);
    let y_out = y_eps
        .scale(-gouy * (1.0 - eps).sqrt())
        .add(&ym.scale(Complex64::new(eps.sqrt(), 0.0)))
        .scale(Complex64::new(e1.sqrt(), 0.0))
        .set(YinEta1, (1.0 - e1).sqrt());
    let (c, s) = (cfg.homodyne_angle.cos(), cfg.homodyne_angle.sin());
    let d = x_out
        .scale(Complex64::new(c, 0.0))
        .add(&y_out.scale(Complex64::new(s, 0.0)));

    let force = x
        .scale(Complex64::new(
            2f64.sqrt() * HBAR * cfg.g_om * cfg.alpha(),
            0.0,
        ))
        .set(ThermalForce, 1.0);
    let inv = 1.0 / bare_susceptibility(cfg, omega) - force.0[Q];
    check_pole(cfg, inv, omega)?;
    let chi_eff = 1.0 / inv;

    let mu = d.0[Q];
    let mut displacement = [Complex64::new(0.0, 0.0); N_INPUTS];
    let mut detected = [Complex64::new(0.0, 0.0); N_INPUTS];
    for i in 0..N_INPUTS {
        displacement[i] = chi_eff * force.0[i];
        detected[i] = d.0[i] + mu * displacement[i];
    }
    let mu_x = x_out.0[Q] * c;
    let mu_y = y_out.0[Q] * s;
    Ok((
        NoiseResponses {
            detected,
            displacement,
            mu,
            chi_eff,
        },
        mu_x,
        mu_y,
    ))
}

/// Transfer coefficients from every noise input to the detected quadrature
/// and to the displacement.
pub fn closed_loop_noise_responses(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<NoiseResponses> {
    solve(cfg, ctrl, omega).map(|r| r.0)
}

/// Responses with the readout gain checked to be usable for normalization.
pub fn normalized_responses(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<NoiseResponses> {
    let (r, mu_x, mu_y) = solve(cfg, ctrl, omega)?;
    let scale = mu_x.norm() + mu_y.norm();
    if !(scale > 0.0) || !(r.mu.norm() > 1e-10 * scale) {
        return Err(Error::ZeroGain {
            freq_hz: omega / TAU,
        });
    }
    Ok(r)
}

/// Coefficient `μ(Ω)` of the displacement in the detected quadrature.
pub fn displacement_readout_gain(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<Complex64> {
    normalized_responses(cfg, ctrl, omega).map(|r| r.mu)
}
