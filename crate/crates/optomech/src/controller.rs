//! Feedback controller `K(Ω)` acting from the curved-mirror detector onto the
//! input amplitude.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::OptomechConfig;
use crate::constants::TAU;
use crate::error::{Error, Result};
use crate::physics;

/// Controller frequency response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControllerResponse {
    /// `K(s) = gain·Π(s − zᵢ)/Π(s − pⱼ)` with `s = iΩ`; roots in rad/s given as
    /// `[re, im]` pairs.
    Rational {
        gain: f64,
        #[serde(default)]
        zeros: Vec<[f64; 2]>,
        #[serde(default)]
        poles: Vec<[f64; 2]>,
    },
    /// Tabulated response on positive frequencies, linearly interpolated in
    /// real and imaginary parts and extended to negative frequencies by
    /// Hermitian symmetry.
    Table {
        freq_hz: Vec<f64>,
        re: Vec<f64>,
        im: Vec<f64>,
    },
}

/// Real state-space realization `ẋ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone)]
pub struct ControllerRealization {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

fn roots(list: &[[f64; 2]]) -> Vec<Complex64> {
    list.iter().map(|r| Complex64::new(r[0], r[1])).collect()
}

fn conjugate_closed(rs: &[Complex64]) -> bool {
    let mut used = vec![false; rs.len()];
    for i in 0..rs.len() {
        if used[i] {
            continue;
        }
        let scale = rs[i].norm().max(1.0);
        if rs[i].im.abs() <= 1e-12 * scale {
            used[i] = true;
            continue;
        }
        let partner = (0..rs.len())
            .find(|&j| j != i && !used[j] && (rs[j] - rs[i].conj()).norm() <= 1e-9 * scale);
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return false,
        }
    }
    true
}

/// Real polynomial coefficients (highest power first) of `Π(s − rᵢ)`.
fn poly_from_roots(rs: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in rs {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k] += ck;
            next[k + 1] -= ck * r;
        }
        c = next;
    }
    c.iter().map(|z| z.re).collect()
}

impl ControllerResponse {
    pub fn zero() -> Self {
        ControllerResponse::Rational {
            gain: 0.0,
            zeros: vec![],
            poles: vec![],
        }
    }

    /// `K(Ω) = dc_gain/(1 + iΩ/ω_p)` with `ω_p = 2π·pole_hz`.
    pub fn single_pole(dc_gain: f64, pole_hz: f64) -> Self {
        let wp = TAU * pole_hz;
        ControllerResponse::Rational {
            gain: dc_gain * wp,
            zeros: vec![],
            poles: vec![[-wp, 0.0]],
        }
    }

    /// `K(Ω) = dc_gain/(1 + iΩ/ω_p)^order`, a real `order`-fold pole at `pole_hz`.
    pub fn low_pass(dc_gain: f64, pole_hz: f64, order: usize) -> Self {
        let wp = TAU * pole_hz;
        ControllerResponse::Rational {
            gain: dc_gain * wp.powi(order as i32),
            zeros: vec![],
            poles: vec![[-wp, 0.0]; order],
        }
    }

    pub fn is_rational(&self) -> bool {
        matches!(self, ControllerResponse::Rational { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControllerResponse::Rational { gain, zeros, poles } => {
                if !gain.is_finite() {
                    return Err(Error::Controller("gain must be finite".into()));
                }
                let (z, p) = (roots(zeros), roots(poles));
                if z.iter()
                    .chain(p.iter())
                    .any(|r| !r.re.is_finite() || !r.im.is_finite())
                {
                    return Err(Error::Controller("roots must be finite".into()));
                }
                if !conjugate_closed(&z) || !conjugate_closed(&p) {
                    return Err(Error::Controller(
                        "complex zeros and poles must come in conjugate pairs".into(),
                    ));
                }
                if z.len() > p.len() {
                    return Err(Error::Controller("improper rational function".into()));
                }
                Ok(())
            }
            ControllerResponse::Table { freq_hz, re, im } => {
                if freq_hz.len() < 2 || freq_hz.len() != re.len() || re.len() != im.len() {
                    return Err(Error::Controller(
                        "table columns must have equal length ≥ 2".into(),
                    ));
                }
                if freq_hz[0] <= 0.0 || freq_hz.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Controller(
                        "table frequencies must be positive and increasing".into(),
                    ));
                }
                if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Controller("table response must be finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Response at angular frequency `omega` (any sign).
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        match self {
            ControllerResponse::Rational { gain, zeros, poles } => {
                let s = Complex64::new(0.0, omega);
                let mut k = Complex64::new(*gain, 0.0);
                for z in zeros {
                    k *= s - Complex64::new(z[0], z[1]);
                }
                for p in poles {
                    k /= s - Complex64::new(p[0], p[1]);
                }
                Ok(k)
            }
            ControllerResponse::Table { freq_hz, re, im } => {
                let f = omega.abs() / TAU;
                let n = freq_hz.len();
                if f < freq_hz[0] * (1.0 - 1e-12) || f > freq_hz[n - 1] * (1.0 + 1e-12) {
                    return Err(Error::Controller(format!(
                        "frequency {f} Hz outside tabulated range [{}, {}] Hz",
                        freq_hz[0],
                        freq_hz[n - 1]
                    )));
                }
                let j = freq_hz.partition_point(|&x| x <= f).clamp(1, n - 1);
                let t = ((f - freq_hz[j - 1]) / (freq_hz[j] - freq_hz[j - 1])).clamp(0.0, 1.0);
                let k = Complex64::new(
                    re[j - 1] + t * (re[j] - re[j - 1]),
                    im[j - 1] + t * (im[j] - im[j - 1]),
                );
                Ok(if omega < 0.0 { k.conj() } else { k })
            }
        }
    }

    /// Controllable-canonical realization of a rational controller.
    pub fn realization(&self) -> Result<ControllerRealization> {
        self.validate()?;
        let ControllerResponse::Rational { gain, zeros, poles } = self else {
            return Err(Error::Controller(
                "time-domain use requires a rational controller".into(),
            ));
        };
        let den = poly_from_roots(&roots(poles));
        let mut num: Vec<f64> = poly_from_roots(&roots(zeros))
            .iter()
            .map(|c| c * gain)
            .collect();
        let n = den.len() - 1;
        let mut padded = vec![0.0; n + 1 - num.len()];
        padded.append(&mut num);
        let d = padded[0];
        let rem: Vec<f64> = (0..=n).map(|k| padded[k] - d * den[k]).collect();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        if n > 0 {
            for i in 0..n - 1 {
                a[(i, i + 1)] = 1.0;
            }
            for j in 0..n {
                a[(n - 1, j)] = -den[n - j];
                c[j] = rem[n - j];
            }
            b[n - 1] = 1.0;
        }
        Ok(ControllerRealization { a, b, c, d })
    }
}

/// Outcome of [`fit_controller`].
#[derive(Debug, Clone, Serialize)]
pub struct ControllerFit {
    pub controller: ControllerResponse,
    pub dc_gain: f64,
    /// DC gain of the feedback loop, `dc_gain·√(η₂κ₁κ₂)·2/κ`.
    pub loop_gain: f64,
    pub pole_hz: f64,
    pub order: usize,
    pub peak_hz: f64,
    pub gamma_eff: f64,
}

/// Frequency of the maximum of `|χ_eff|` searched on `[lo, hi]` (rad/s), on a
/// logarithmic grid refined by golden-section search.
pub fn susceptibility_peak(
    cfg: &OptomechConfig,
    ctrl: &ControllerResponse,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let n = 2001;
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    let mut best = (lo, 0.0);
    for i in 0..n {
        let w = lo * ratio.powi(i as i32);
        let a = physics::effective_susceptibility(cfg, ctrl, w)?.norm();
        if a > best.1 {
            best = (w, a);
        }
    }
    let (mut a, mut b) = ((best.0 / ratio).max(lo), (best.0 * ratio).min(hi));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let f = |w: f64| physics::effective_susceptibility(cfg, ctrl, w).map(|c| -c.norm());
    for _ in 0..60 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if f(c)? < f(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}

/// Chooses the DC gain of an `order`-pole low-pass controller at `pole_hz` so
/// that the closed-loop `|χ_eff|` peaks at `cfg.omega_eff` with a stable loop.
///
/// Loop gains from −10³ to 10³ are scanned on a logarithmic grid. Only stable
/// gains whose peak lies within a factor 1.5 of the target take part, so jumps
/// of the peak between separate maxima are never mistaken for a crossing.
/// Among the remaining intervals that bracket the target, the one with the
/// smallest gain is refined by bisection.
pub fn fit_controller(cfg: &OptomechConfig, pole_hz: f64, order: usize) -> Result<ControllerFit> {
    if order == 0 || !(pole_hz > 0.0) {
        return Err(Error::Controller(
            "need order ≥ 1 and a positive pole frequency".into(),
        ));
    }
    let target = cfg.omega_eff;
    let (lo, hi) = (target / 20.0, 5.0 * target);
    let scale = (cfg.eta2 * cfg.kappa1 * cfg.kappa2).sqrt() * 2.0 / cfg.kappa;
    if !(scale > 0.0) {
        return Err(Error::Controller(
            "feedback path has zero gain (eta2·kappa1·kappa2 = 0)".into(),
        ));
    }
    let mut probe = cfg.clone();
    probe.damping = crate::config::DampingModel::Viscous;
    let make = |g: f64| ControllerResponse::low_pass(g / scale, pole_hz, order);
    // Peak offset from the target, or None if the loop is unstable or the
    // peak sits far from the target.
    let eval = |g: f64| -> Result<Option<f64>> {
        let k = make(g);
        match crate::validation::build_state_space(&probe, &k) {
            Ok(_) => {}
            Err(Error::UnstableLoop { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
        let peak = susceptibility_peak(cfg, &k, lo, hi)?;
        Ok((peak / target - 1.0)
            .abs()
            .lt(&0.5)
            .then_some(peak - target))
    };
    let per_side = 241;
    let mags: Vec<f64> = (0..per_side)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (per_side - 1) as f64))
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for sign in [1.0, -1.0] {
        let vals: Vec<Option<f64>> = mags
            .iter()
            .map(|&m| eval(sign * m))
            .collect::<Result<_>>()?;
        for i in 0..per_side - 1 {
            if let (Some(a), Some(b)) = (vals[i], vals[i + 1]) {
                if a.signum() != b.signum() {
                    if best.is_none_or(|(x, _)| mags[i] < x.abs()) {
                        best = Some((sign * mags[i], sign * mags[i + 1]));
                    }
                    break;
                }
            }
        }
    }
    let (mut a, mut b) = best.ok_or_else(|| {
        Error::Controller(format!(
            "no stable {order}-pole loop at {pole_hz:e} Hz places the peak at {:.6e} Hz",
            target / TAU
        ))
    })?;
    let fa = eval(a)?.unwrap_or(0.0);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        match eval(m)? {
            Some(v) if v.signum() == fa.signum() => a = m,
            Some(_) => b = m,
            None => break,
        }
    }
    let loop_gain = 0.5 * (a + b);
    let controller = make(loop_gain);
    crate::validation::build_state_space(&probe, &controller)?;
    let peak = susceptibility_peak(cfg, &controller, lo, hi)?;
    if (peak / target - 1.0).abs() > 0.01 {
        return Err(Error::Controller(format!(
            "{order}-pole loop at {pole_hz:e} Hz only reaches a peak at {:.6e} Hz",
            peak / TAU
        )));
    }
    let inv = 1.0 / physics::effective_susceptibility(cfg, &controller, peak)?;
    let gamma_eff = inv.im / (cfg.mass * peak);
    Ok(ControllerFit {
        controller,
        dc_gain: loop_gain / scale,
        loop_gain,
        pole_hz,
        order,
        peak_hz: peak / TAU,
        gamma_eff,
    })
}
