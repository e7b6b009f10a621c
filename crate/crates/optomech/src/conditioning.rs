//! Causal Wiener filters, conditional spectra and the quanta-normalized
//! conditional covariance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{thermal_occupation, OptomechConfig};
use crate::constants::HBAR;
use crate::controller::ControllerResponse;
use crate::error::{Error, Result};
use crate::factorization::{causal_factor, causal_project_ring, CausalFilter};
use crate::grid::FrequencyGrid;
use crate::spectra::{model_spectrum_set, SpectrumSet};

/// Integration band in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Self {
        Band { lo_hz, hi_hz }
    }
}

/// `H = [S_oy / M*]₊ / M`.
pub fn wiener_filter(s_oy: &[Complex64], m_y: &CausalFilter) -> Result<CausalFilter> {
    let grid = m_y.grid;
    if s_oy.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let mut ring = grid.ring_complex(s_oy);
    for (r, m) in ring.iter_mut().zip(&m_y.ring) {
        *r /= m.conj();
    }
    causal_project_ring(&mut ring);
    for (r, m) in ring.iter_mut().zip(&m_y.ring) {
        *r /= m;
    }
    Ok(CausalFilter::from_ring(grid, ring, None))
}

/// Spectra of the estimation errors `δq = q − H_q*y` and `δp = p − H_p*y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalSpectra {
    pub grid: FrequencyGrid,
    pub s_dqdq: Vec<f64>,
    pub s_dpdp: Vec<f64>,
    pub s_dqdp: Vec<Complex64>,
}

/// Conditional spectra for filter responses given on the grid points.
pub fn conditional_spectra_from_responses(
    spectra: &SpectrumSet,
    h_q: &[Complex64],
    h_p: &[Complex64],
) -> Result<ConditionalSpectra> {
    let n = spectra.grid.len();
    if h_q.len() != n || h_p.len() != n {
        return Err(Error::GridMismatch);
    }
    let mut s_dqdq = Vec::with_capacity(n);
    let mut s_dpdp = Vec::with_capacity(n);
    let mut s_dqdp = Vec::with_capacity(n);
    for i in 0..n {
        let (hq, hp, syy) = (h_q[i], h_p[i], spectra.s_yy[i]);
        let (sqy, spy) = (spectra.s_qy[i], spectra.s_py[i]);
        s_dqdq.push(spectra.s_qq[i] + hq.norm_sqr() * syy - 2.0 * (hq * sqy.conj()).re);
        s_dpdp.push(spectra.s_pp[i] + hp.norm_sqr() * syy - 2.0 * (hp * spy.conj()).re);
        s_dqdp.push(spectra.s_qp[i] + hq * hp.conj() * syy - hp.conj() * sqy - hq * spy.conj());
    }
    Ok(ConditionalSpectra {
        grid: spectra.grid,
        s_dqdq,
        s_dpdp,
        s_dqdp,
    })
}

pub fn conditional_spectra(
    spectra: &SpectrumSet,
    h_q: &CausalFilter,
    h_p: &CausalFilter,
) -> Result<ConditionalSpectra> {
    if !spectra.grid.same_as(&h_q.grid) || !spectra.grid.same_as(&h_p.grid) {
        return Err(Error::GridMismatch);
    }
    conditional_spectra_from_responses(spectra, &h_q.response(), &h_p.response())
}

/// Trapezoidal `∫ S df` over the grid points inside `band`.
pub fn integrate_band(grid: &FrequencyGrid, values: &[f64], band: Band) -> Result<f64> {
    let (i0, i1) = grid.band_indices(band.lo_hz, band.hi_hz)?;
    if i1 == i0 {
        return Ok(0.0);
    }
    let inner: f64 = values[i0 + 1..i1].iter().sum();
    Ok(grid.df() * (inner + 0.5 * (values[i0] + values[i1])))
}

/// Quanta-normalized 2×2 conditional covariance and derived figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalState {
    pub v_qq: f64,
    pub v_pp: f64,
    pub c_qp: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub squeeze_db: f64,
    pub antisqueeze_db: f64,
    pub det: f64,
    pub physical: bool,
}

/// Variance of the ground state in the adopted normalization.
pub const ZPF_VARIANCE: f64 = 0.5;

impl ConditionalState {
    pub fn from_tilde(v_qq: f64, v_pp: f64, c_qp: f64) -> Self {
        let mean = 0.5 * (v_qq + v_pp);
        let r = (0.25 * (v_qq - v_pp).powi(2) + c_qp * c_qp).sqrt();
        let (eig_min, eig_max) = (mean - r, mean + r);
        let det = v_qq * v_pp - c_qp * c_qp;
        ConditionalState {
            v_qq,
            v_pp,
            c_qp,
            eig_min,
            eig_max,
            squeeze_db: 10.0 * (eig_min / ZPF_VARIANCE).log10(),
            antisqueeze_db: 10.0 * (eig_max / ZPF_VARIANCE).log10(),
            det,
            physical: det >= ZPF_VARIANCE * ZPF_VARIANCE,
        }
    }

    /// Unit eigenvectors belonging to `eig_min` and `eig_max`.
    pub fn eigenvectors(&self) -> ([f64; 2], [f64; 2]) {
        let theta = 0.5 * (2.0 * self.c_qp).atan2(self.v_qq - self.v_pp);
        let (c, s) = (theta.cos(), theta.sin());
        ([-s, c], [c, s])
    }
}

/// `2q_zpf² = ħ/(mΩ_eff)` and `2p_zpf² = ħmΩ_eff`.
pub fn zpf_scales(cfg: &OptomechConfig) -> (f64, f64) {
    (
        HBAR / (cfg.mass * cfg.omega_eff),
        HBAR * cfg.mass * cfg.omega_eff,
    )
}

pub fn integrate_covariance(
    cond: &ConditionalSpectra,
    cfg: &OptomechConfig,
    band: Band,
) -> Result<ConditionalState> {
    let g = &cond.grid;
    let vq = integrate_band(g, &cond.s_dqdq, band)?;
    let vp = integrate_band(g, &cond.s_dpdp, band)?;
    let cross: Vec<f64> = cond.s_dqdp.iter().map(|c| c.re).collect();
    let c = integrate_band(g, &cross, band)?;
    let (q2, p2) = zpf_scales(cfg);
    Ok(ConditionalState::from_tilde(
        vq / q2,
        vp / p2,
        c / (q2 * p2).sqrt(),
    ))
}

/// Prior (unconditional) band-limited covariance of the same spectra.
pub fn prior_covariance(
    spectra: &SpectrumSet,
    cfg: &OptomechConfig,
    band: Band,
) -> Result<ConditionalState> {
    let g = &spectra.grid;
    let (q2, p2) = zpf_scales(cfg);
    let cross: Vec<f64> = spectra.s_qp.iter().map(|c| c.re).collect();
    Ok(ConditionalState::from_tilde(
        integrate_band(g, &spectra.s_qq, band)? / q2,
        integrate_band(g, &spectra.s_pp, band)? / p2,
        integrate_band(g, &cross, band)? / (q2 * p2).sqrt(),
    ))
}

/// Characteristic rates [s⁻¹].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub gamma_meas: f64,
    pub gamma_th: f64,
    pub gamma_ba: f64,
    pub ratio_meas_to_omega: f64,
}

/// Measurement, thermal decoherence and back-action rates.
///
/// `Γ_meas = 4·η·(κ₁/κ)·g²/κ` with `g² = G²·n_cav·ħ/(2mΩ_eff)`: the rate
/// `4g²/κ` reduced by the detection efficiency and by the share of the
/// intracavity signal that leaves through the readout port.
/// `Γ_th = Γ_m·n_th(Ω_eff)` with the damping rate taken at `Ω_eff`, and
/// `Γ_ba = Γ_meas/η`.
pub fn rate_diagnostics(cfg: &OptomechConfig) -> RateDiagnostics {
    let g2 = cfg.g0_eff().powi(2) * cfg.n_cav;
    let gamma_meas = 4.0 * cfg.eta_total * (cfg.kappa1 / cfg.kappa) * g2 / cfg.kappa;
    let gamma_th = cfg.gamma_viscous() * thermal_occupation(cfg.omega_eff, cfg.temperature);
    let gamma_ba = if cfg.eta_total > 0.0 {
        gamma_meas / cfg.eta_total
    } else {
        f64::INFINITY
    };
    RateDiagnostics {
        gamma_meas,
        gamma_th,
        gamma_ba,
        ratio_meas_to_omega: gamma_meas / cfg.omega_eff,
    }
}

/// Quality figures of one conditioning run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PipelineDiagnostics {
    pub factor_residual: f64,
    pub anticausal_m_y: f64,
    pub anticausal_m_y_inverse: f64,
    pub anticausal_h_q: f64,
    pub anticausal_h_p: f64,
}

/// Everything produced by [`condition`].
#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub spectra: SpectrumSet,
    pub m_y: CausalFilter,
    pub h_q: CausalFilter,
    pub h_p: CausalFilter,
    pub conditional: ConditionalSpectra,
    pub state: ConditionalState,
    pub prior: ConditionalState,
    pub diagnostics: PipelineDiagnostics,
}

/// Serializable summary of a conditioning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub state: ConditionalState,
    pub prior: ConditionalState,
    pub band: Band,
    pub grid: GridSummary,
    pub rates: RateDiagnostics,
    pub diagnostics: PipelineDiagnostics,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSummary {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
}

impl ConditionRun {
    pub fn report(&self, cfg: &OptomechConfig, band: Band) -> ConditionReport {
        let g = self.spectra.grid;
        ConditionReport {
            state: self.state,
            prior: self.prior,
            band,
            grid: GridSummary {
                f_min: g.f_min(),
                f_max: g.f_max(),
                n_points: g.len(),
            },
            rates: rate_diagnostics(cfg),
            diagnostics: self.diagnostics,
        }
    }
}

/// Wiener conditioning of a given spectrum set.
pub fn condition_spectra(
    spectra: SpectrumSet,
    cfg: &OptomechConfig,
    band: Band,
) -> Result<ConditionRun> {
    spectra.grid.band_indices(band.lo_hz, band.hi_hz)?;
    let m_y = causal_factor(&spectra.grid, &spectra.s_yy)?;
    let h_q = wiener_filter(&spectra.s_qy, &m_y)?;
    let h_p = wiener_filter(&spectra.s_py, &m_y)?;
    let conditional = conditional_spectra(&spectra, &h_q, &h_p)?;
    let state = integrate_covariance(&conditional, cfg, band)?;
    let prior = prior_covariance(&spectra, cfg, band)?;
    let diagnostics = PipelineDiagnostics {
        factor_residual: m_y.residual().unwrap_or(0.0),
        anticausal_m_y: m_y.anticausal_energy_fraction,
        anticausal_m_y_inverse: m_y.inverse().anticausal_energy_fraction,
        anticausal_h_q: h_q.anticausal_energy_fraction,
        anticausal_h_p: h_p.anticausal_energy_fraction,
    };
    Ok(ConditionRun {
        spectra,
        m_y,
        h_q,
        h_p,
        conditional,
        state,
        prior,
        diagnostics,
    })
}

/// Full model-based conditioning: spectra, factorization, filters, covariance.
pub fn condition(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    grid: &FrequencyGrid,
    band: Band,
) -> Result<ConditionRun> {
    let spectra = model_spectrum_set(cfg, ctrl, grid)?;
    condition_spectra(spectra, cfg, band)
}
