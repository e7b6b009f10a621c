//! Thermal force noise and the model (cross-)spectral densities.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{thermal_occupation, DampingModel, OptomechConfig};
use crate::constants::{HBAR, TAU};
use crate::controller::ControllerResponse;
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::physics::{self, NoiseInput, N_INPUTS};

/// One-sided thermal force PSD `S_ξξ(Ω)` [N²/Hz] for `omega > 0`.
///
/// For structural damping it is obtained from `S_qq = −4ħ(n_th + ½)·Im χ_m`
/// divided by `|χ_m|²`. The viscous substitute uses the white level of the
/// structural model evaluated at `Ω_eff`.
pub fn thermal_force_psd(cfg: &OptomechConfig, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!(
            "thermal PSD needs Ω > 0, got {omega}"
        )));
    }
    match cfg.damping {
        DampingModel::Structural => {
            let chi = physics::bare_susceptibility(cfg, omega);
            let s_qq = -4.0 * HBAR * (thermal_occupation(omega, cfg.temperature) + 0.5) * chi.im;
            Ok(s_qq / chi.norm_sqr())
        }
        DampingModel::Viscous => {
            let w = cfg.omega_eff;
            Ok(4.0
                * HBAR
                * (thermal_occupation(w, cfg.temperature) + 0.5)
                * cfg.mass
                * cfg.gamma_viscous()
                * w)
        }
    }
}

/// Thermal displacement PSD of the bare oscillator, `|χ_m|²·S_ξξ`.
pub fn thermal_displacement_psd(cfg: &OptomechConfig, omega: f64) -> Result<f64> {
    Ok(physics::bare_susceptibility(cfg, omega).norm_sqr() * thermal_force_psd(cfg, omega)?)
}

/// PSD of one noise input at `omega > 0`.
pub fn input_psd(cfg: &OptomechConfig, input: NoiseInput, omega: f64) -> Result<f64> {
    if input.is_vacuum() {
        Ok(1.0)
    } else {
        thermal_force_psd(cfg, omega)
    }
}

/// Which noise inputs contribute.
pub type InputMask = [bool; N_INPUTS];
pub const ALL_INPUTS: InputMask = [true; N_INPUTS];

/// One-sided model spectra on a shared grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSet {
    pub grid: FrequencyGrid,
    pub s_yy: Vec<f64>,
    pub s_qq: Vec<f64>,
    pub s_pp: Vec<f64>,
    pub s_qy: Vec<Complex64>,
    pub s_py: Vec<Complex64>,
    pub s_qp: Vec<Complex64>,
}

impl SpectrumSet {
    /// Assembles a set from `s_yy`, `s_qq`, `s_qy`; momentum spectra follow from
    /// `p = iΩm·q`.
    pub fn from_displacement(
        grid: FrequencyGrid,
        mass: f64,
        s_yy: Vec<f64>,
        s_qq: Vec<f64>,
        s_qy: Vec<Complex64>,
    ) -> Self {
        let omegas = grid.omegas();
        let s_pp = s_qq
            .iter()
            .zip(&omegas)
            .map(|(s, w)| mass * mass * w * w * s)
            .collect();
        let s_py = s_qy
            .iter()
            .zip(&omegas)
            .map(|(s, w)| Complex64::new(0.0, w * mass) * s)
            .collect();
        let s_qp = s_qq
            .iter()
            .zip(&omegas)
            .map(|(s, w)| Complex64::new(0.0, -w * mass) * s)
            .collect();
        SpectrumSet {
            grid,
            s_yy,
            s_qq,
            s_pp,
            s_qy,
            s_py,
            s_qp,
        }
    }
}

struct Point {
    yy: f64,
    qq: f64,
    qy: Complex64,
    py: Complex64,
}

fn point(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
    mask: &InputMask,
) -> Result<Point> {
    let r = physics::normalized_responses(cfg, ctrl, omega)?;
    let y = r.readout();
    let mut p = Point {
        yy: 0.0,
        qq: 0.0,
        qy: Complex64::new(0.0, 0.0),
        py: Complex64::new(0.0, 0.0),
    };
    let pm = Complex64::new(0.0, omega * cfg.mass);
    for input in NoiseInput::ALL {
        if !mask[input.index()] {
            continue;
        }
        let s = input_psd(cfg, input, omega)?;
        let (q, yi) = (r.displacement[input.index()], y[input.index()]);
        p.yy += yi.norm_sqr() * s;
        p.qq += q.norm_sqr() * s;
        p.qy += q * yi.conj() * s;
        p.py += pm * q * yi.conj() * s;
    }
    if !(p.yy > 0.0) {
        return Err(Error::NonPositivePsd {
            freq_hz: omega / TAU,
        });
    }
    Ok(p)
}

/// Model spectra of the displacement-normalized readout `y = q + z`, the
/// displacement and the momentum.
pub fn model_spectrum_set(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    grid: &FrequencyGrid,
) -> Result<SpectrumSet> {
    model_spectrum_set_masked(cfg, ctrl, grid, &ALL_INPUTS)
}

/// As [`model_spectrum_set`], keeping only the inputs enabled in `mask`.
pub fn model_spectrum_set_masked(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    grid: &FrequencyGrid,
    mask: &InputMask,
) -> Result<SpectrumSet> {
    let omegas = grid.omegas();
    let pts: Vec<Point> = omegas
        .par_iter()
        .map(|&w| point(cfg, ctrl, w, mask))
        .collect::<Result<_>>()?;
    let s_qq: Vec<f64> = pts.iter().map(|p| p.qq).collect();
    let s_pp = s_qq
        .iter()
        .zip(&omegas)
        .map(|(s, w)| cfg.mass * cfg.mass * w * w * s)
        .collect();
    let s_qp = s_qq
        .iter()
        .zip(&omegas)
        .map(|(s, w)| Complex64::new(0.0, -w * cfg.mass) * s)
        .collect();
    Ok(SpectrumSet {
        grid: *grid,
        s_yy: pts.iter().map(|p| p.yy).collect(),
        s_qq,
        s_pp,
        s_qy: pts.iter().map(|p| p.qy).collect(),
        s_py: pts.iter().map(|p| p.py).collect(),
        s_qp,
    })
}

/// PSD of the detected quadrature itself (not normalized to displacement),
/// with each input weighted by `extra(input)` on top of its model PSD.
pub fn detected_psd(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
    mask: &InputMask,
    extra: &dyn Fn(NoiseInput) -> f64,
) -> Result<f64> {
    let r = physics::closed_loop_noise_responses(cfg, ctrl, omega)?;
    let mut total = 0.0;
    for input in NoiseInput::ALL {
        let s = if mask[input.index()] {
            input_psd(cfg, input, omega)?
        } else {
            0.0
        } + extra(input);
        total += r.detected[input.index()].norm_sqr() * s;
    }
    Ok(total)
}

/// Displacement-equivalent shot-noise floor `√S_yy` [m/√Hz] from the vacuum
/// inputs alone at `omega`.
pub fn shot_noise_floor(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    omega: f64,
) -> Result<f64> {
    let r = physics::normalized_responses(cfg, ctrl, omega)?;
    let total: f64 = NoiseInput::ALL
        .iter()
        .filter(|i| i.is_vacuum())
        .map(|i| r.detected[i.index()].norm_sqr())
        .sum();
    Ok((total / r.mu.norm_sqr()).sqrt())
}

/// Thermal variances of a reference oscillator at `Ω_eff` with the constant
/// loss angle, `χ = 1/(m(Ω_eff² − Ω² + iΩ_eff²φ))`, integrated over
/// `[omega_l, omega_h]` and normalized to `2V_zpf` at `Ω_eff`.
///
/// Returns `(V_qq, V_pp)`. The integral is taken in `ln Ω` with a dense
/// uniform patch across the resonance.
pub fn truncated_thermal_variances(
    cfg: &OptomechConfig,
    omega_l: f64,
    omega_h: f64,
) -> Result<(f64, f64)> {
    if !(omega_l > 0.0 && omega_h > omega_l) {
        return Err(Error::Domain("need 0 < omega_l < omega_h".into()));
    }
    let (m, w0, phi) = (cfg.mass, cfg.omega_eff, cfg.loss_angle);
    let s_qq = |w: f64| {
        let chi = 1.0 / Complex64::new(m * (w0 * w0 - w * w), m * w0 * w0 * phi);
        -4.0 * HBAR * (thermal_occupation(w, cfg.temperature) + 0.5) * chi.im
    };
    // Breakpoints: the resonance patch, clipped to the range.
    let half = 400.0 * phi * w0;
    let (r0, r1) = (
        (w0 - half).clamp(omega_l, omega_h),
        (w0 + half).clamp(omega_l, omega_h),
    );
    let mut segments: Vec<(f64, f64, bool)> = Vec::new();
    if r0 > omega_l {
        segments.push((omega_l, r0, true));
    }
    if r1 > r0 {
        segments.push((r0, r1, false));
    }
    if omega_h > r1 {
        segments.push((r1, omega_h, true));
    }
    let (mut vq, mut vp) = (0.0, 0.0);
    for (a, b, log) in segments {
        let n = 200_000usize;
        let x = |i: usize| {
            let t = i as f64 / n as f64;
            if log {
                a * (b / a).powf(t)
            } else {
                a + (b - a) * t
            }
        };
        for i in 0..=n {
            let w = x(i);
            let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
            // dΩ = Ω·d(ln Ω) on the logarithmic pieces.
            let jac = if log {
                w * (b / a).ln() / n as f64
            } else {
                (b - a) / n as f64
            };
            let s = s_qq(w) * weight * jac;
            vq += s;
            vp += m * m * w * w * s;
        }
    }
    let (q2, p2) = (HBAR / (m * w0), HBAR * m * w0);
    Ok((vq / TAU / q2, vp / TAU / p2))
}
