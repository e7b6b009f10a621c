//! Physical, optical and detection parameters of the experiment.
//!
//! All quantities are SI; rates and frequencies prefixed `omega`/`kappa` are
//! angular (rad/s). The TOML representation uses exactly the field names of
//! [`OptomechConfig`] (with `kappaL` for the internal loss rate). Tables named
//! in [`RUN_TABLES`] carry run settings for front ends and are skipped here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B, SPEED_OF_LIGHT, TAU};
use crate::error::{Error, Result};

/// Mechanical loss model used for the bare susceptibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DampingModel {
    /// Constant loss angle: `χ_m⁻¹ = m(Ω_m² − Ω² + iΩ_m²φ·sgn Ω)`.
    #[default]
    Structural,
    /// Velocity damping `Γ_v = Ω_m²φ/Ω_eff`, matched to the structural model at
    /// `Ω_eff`, with a white thermal force. This is the Markovian substitute
    /// used by the time-domain tools.
    Viscous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptomechConfig {
    pub kappa: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    #[serde(rename = "kappaL")]
    pub kappa_l: f64,
    pub delta_frac: f64,
    pub g_om: f64,
    pub n_cav: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cav: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    pub mass: f64,
    pub omega_m: f64,
    pub q_factor: f64,
    pub loss_angle: f64,
    pub omega_eff: f64,
    pub temperature: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta_total: f64,
    pub mode_match: f64,
    pub gouy_phase: f64,
    pub homodyne_angle: f64,
    #[serde(default)]
    pub damping: DampingModel,
}

/// On-disk form: `n_cav` may be replaced by `p_cav` + `wavelength`, and only one
/// of `q_factor`/`loss_angle` is required.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kappa: Option<f64>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    #[serde(rename = "kappaL")]
    kappa_l: Option<f64>,
    delta_frac: Option<f64>,
    g_om: Option<f64>,
    n_cav: Option<f64>,
    p_cav: Option<f64>,
    wavelength: Option<f64>,
    mass: Option<f64>,
    omega_m: Option<f64>,
    q_factor: Option<f64>,
    loss_angle: Option<f64>,
    omega_eff: Option<f64>,
    temperature: Option<f64>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    eta_total: Option<f64>,
    mode_match: Option<f64>,
    gouy_phase: Option<f64>,
    homodyne_angle: Option<f64>,
    damping: Option<DampingModel>,
}

/// Top-level tables ignored by [`OptomechConfig::from_toml_str`].
pub const RUN_TABLES: [&str; 4] = ["controller", "grid", "band", "run"];

fn required(v: Option<f64>, field: &str) -> Result<f64> {
    v.ok_or_else(|| Error::config(field, "missing"))
}

/// Intracavity photon number for a circulating power `p_cav` at `wavelength`:
/// the photon flux `P/(ħω_L)` times the round-trip time `2L/c`, with the cavity
/// length recovered from the frequency pull `G = ω_L/L`.
pub fn photon_number(p_cav: f64, wavelength: f64, g_om: f64) -> f64 {
    let omega_l = TAU * SPEED_OF_LIGHT / wavelength;
    let length = omega_l / g_om;
    p_cav * 2.0 * length / (SPEED_OF_LIGHT * HBAR * omega_l)
}

/// Mean thermal occupation `1/(exp(ħ|Ω|/k_B T) − 1)`.
pub fn thermal_occupation(omega: f64, temperature: f64) -> f64 {
    1.0 / (HBAR * omega.abs() / (K_B * temperature)).exp_m1()
}

impl OptomechConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for key in RUN_TABLES {
            table.remove(key);
        }
        let raw: RawConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let kappa = required(raw.kappa, "kappa")?;
        let (q_factor, loss_angle) = match (raw.q_factor, raw.loss_angle) {
            (Some(q), Some(phi)) => (q, phi),
            (Some(q), None) => (q, 1.0 / q),
            (None, Some(phi)) => (1.0 / phi, phi),
            (None, None) => return Err(Error::config("q_factor", "missing (or give loss_angle)")),
        };
        let n_cav = match (raw.n_cav, raw.p_cav, raw.wavelength) {
            (Some(n), _, _) => n,
            (None, Some(p), Some(l)) => {
                if !(l > 0.0) {
                    return Err(Error::config("wavelength", "must be positive"));
                }
                let g = required(raw.g_om, "g_om")?;
                photon_number(p, l, g)
            }
            (None, Some(_), None) => {
                return Err(Error::config("wavelength", "required with p_cav"))
            }
            (None, None, _) => {
                return Err(Error::config(
                    "n_cav",
                    "missing (or give p_cav and wavelength)",
                ))
            }
        };
        let cfg = OptomechConfig {
            kappa,
            kappa1: required(raw.kappa1, "kappa1")?,
            kappa2: required(raw.kappa2, "kappa2")?,
            kappa_l: required(raw.kappa_l, "kappaL")?,
            delta_frac: required(raw.delta_frac, "delta_frac")?,
            g_om: required(raw.g_om, "g_om")?,
            n_cav,
            p_cav: raw.p_cav,
            wavelength: raw.wavelength,
            mass: required(raw.mass, "mass")?,
            omega_m: required(raw.omega_m, "omega_m")?,
            q_factor,
            loss_angle,
            omega_eff: required(raw.omega_eff, "omega_eff")?,
            temperature: required(raw.temperature, "temperature")?,
            eta1: required(raw.eta1, "eta1")?,
            eta2: required(raw.eta2, "eta2")?,
            eta_total: required(raw.eta_total, "eta_total")?,
            mode_match: required(raw.mode_match, "mode_match")?,
            gouy_phase: raw.gouy_phase.unwrap_or(0.0),
            homodyne_angle: raw.homodyne_angle.unwrap_or(std::f64::consts::FRAC_PI_2),
            damping: raw.damping.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant and names the first violated field.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("kappa", self.kappa),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappaL", self.kappa_l),
            ("delta_frac", self.delta_frac),
            ("g_om", self.g_om),
            ("n_cav", self.n_cav),
            ("mass", self.mass),
            ("omega_m", self.omega_m),
            ("q_factor", self.q_factor),
            ("loss_angle", self.loss_angle),
            ("omega_eff", self.omega_eff),
            ("temperature", self.temperature),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta_total", self.eta_total),
            ("mode_match", self.mode_match),
            ("gouy_phase", self.gouy_phase),
            ("homodyne_angle", self.homodyne_angle),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("mass", self.mass),
            ("omega_m", self.omega_m),
            ("omega_eff", self.omega_eff),
            ("temperature", self.temperature),
            ("q_factor", self.q_factor),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappaL", self.kappa_l),
            ("n_cav", self.n_cav),
        ] {
            if v < 0.0 {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        let sum = self.kappa1 + self.kappa2 + self.kappa_l;
        if (sum - self.kappa).abs() > 1e-9 * self.kappa {
            return Err(Error::config(
                "kappa",
                format!("must equal kappa1 + kappa2 + kappaL = {sum:e}"),
            ));
        }
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta_total", self.eta_total),
            ("mode_match", self.mode_match),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if (self.loss_angle * self.q_factor - 1.0).abs() > 1e-12 {
            return Err(Error::config("loss_angle", "must equal 1/q_factor"));
        }
        Ok(())
    }

    /// Detuning `Δ = δ·κ/2` (positive on the blue side).
    pub fn detuning(&self) -> f64 {
        self.delta_frac * self.kappa / 2.0
    }

    /// Classical intracavity amplitude `α = √n_cav`.
    pub fn alpha(&self) -> f64 {
        self.n_cav.sqrt()
    }

    /// Viscous damping rate that reproduces the structural thermal force at `Ω_eff`.
    pub fn gamma_viscous(&self) -> f64 {
        self.omega_m * self.omega_m * self.loss_angle / self.omega_eff
    }

    /// Single-photon coupling rate at the sprung frequency, `g₀ = G·√(ħ/(2mΩ_eff))`.
    pub fn g0_eff(&self) -> f64 {
        self.g_om * (HBAR / (2.0 * self.mass * self.omega_eff)).sqrt()
    }

    /// Rescales the total linewidth keeping the coupling-rate fractions fixed.
    /// The circulating power, and so the photon number, is unchanged.
    pub fn with_kappa(&self, kappa: f64) -> Self {
        let s = kappa / self.kappa;
        let mut c = self.clone();
        c.kappa = kappa;
        c.kappa1 *= s;
        c.kappa2 *= s;
        c.kappa_l = kappa - c.kappa1 - c.kappa2;
        c
    }

    /// Sets the stored power, rescaling the photon number accordingly.
    pub fn with_p_cav(&self, p_cav: f64) -> Self {
        let mut c = self.clone();
        match (c.p_cav, c.wavelength) {
            (Some(_), Some(l)) => c.n_cav = photon_number(p_cav, l, c.g_om),
            (Some(p0), None) => c.n_cav *= p_cav / p0,
            _ => {}
        }
        c.p_cav = Some(p_cav);
        c
    }
}
