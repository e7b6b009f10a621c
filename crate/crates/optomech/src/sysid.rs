//! Open-loop cavity transfer function from in-loop measurements and
//! least-squares fitting of the optical parameters.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{photon_number, OptomechConfig};
use crate::constants::TAU;
use crate::error::{Error, Result};
use crate::physics;

/// Two lock-in channels recorded right after (`a`) and right before (`b`) the
/// servo, on a common frequency list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMeasurement {
    pub freq_hz: Vec<f64>,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

/// `C = A/B`; bins with `B = 0` are masked as `None`.
pub fn open_loop_tf(meas: &TransferMeasurement) -> Result<Vec<Option<Complex64>>> {
    if meas.a.len() != meas.b.len() || meas.a.len() != meas.freq_hz.len() {
        return Err(Error::GridMismatch);
    }
    Ok(meas
        .a
        .iter()
        .zip(&meas.b)
        .map(|(a, b)| if b.norm() > 0.0 { Some(a / b) } else { None })
        .collect())
}

/// Loop signals `A = CK/(1+CK)·d` and `B = K/(1+CK)·d` for a drive `d`
/// injected at the servo sum point.
pub fn synthesize_loop(
    c: &[Complex64],
    k: &[Complex64],
    d: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if c.len() != k.len() || k.len() != d.len() {
        return Err(Error::GridMismatch);
    }
    let mut a = Vec::with_capacity(c.len());
    let mut b = Vec::with_capacity(c.len());
    for i in 0..c.len() {
        let den = 1.0 + c[i] * k[i];
        a.push(c[i] * k[i] / den * d[i]);
        b.push(k[i] / den * d[i]);
    }
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParam {
    Kappa,
    DeltaFrac,
    NCav,
    PCav,
    KappaL,
}

impl FitParam {
    pub fn name(self) -> &'static str {
        match self {
            FitParam::Kappa => "kappa",
            FitParam::DeltaFrac => "delta_frac",
            FitParam::NCav => "n_cav",
            FitParam::PCav => "p_cav",
            FitParam::KappaL => "kappaL",
        }
    }

    fn positive(self) -> bool {
        !matches!(self, FitParam::DeltaFrac)
    }

    pub fn get(self, cfg: &OptomechConfig) -> Result<f64> {
        Ok(match self {
            FitParam::Kappa => cfg.kappa,
            FitParam::DeltaFrac => cfg.delta_frac,
            FitParam::NCav => cfg.n_cav,
            FitParam::PCav => cfg
                .p_cav
                .ok_or_else(|| Error::config("p_cav", "required to fit p_cav"))?,
            FitParam::KappaL => cfg.kappa_l,
        })
    }
}

/// Writes fitted values into a copy of `base`. Coupling rates `kappa1`,
/// `kappa2` stay fixed and `kappa` and `kappaL` move together.
pub fn apply_params(base: &OptomechConfig, values: &[(FitParam, f64)]) -> OptomechConfig {
    let mut c = base.clone();
    for &(p, v) in values {
        match p {
            FitParam::Kappa => {
                c.kappa = v;
                c.kappa_l = v - c.kappa1 - c.kappa2;
            }
            FitParam::KappaL => {
                c.kappa_l = v;
                c.kappa = c.kappa1 + c.kappa2 + v;
            }
            _ => {}
        }
    }
    for &(p, v) in values {
        match p {
            FitParam::DeltaFrac => c.delta_frac = v,
            FitParam::NCav => c.n_cav = v,
            FitParam::PCav => {
                c.p_cav = Some(v);
                if let Some(l) = c.wavelength {
                    c.n_cav = photon_number(v, l, c.g_om);
                }
            }
            _ => {}
        }
    }
    c
}

/// Model open-loop response `gain·C(Ω)` on `freq_hz`.
pub fn model_tf(cfg: &OptomechConfig, gain: f64, freq_hz: &[f64]) -> Result<Vec<Complex64>> {
    freq_hz
        .iter()
        .map(|f| physics::open_loop_cavity_tf(cfg, TAU * f).map(|c| c * gain))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Equal weight per unit of `ln f`.
    #[default]
    LogUniform,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub weighting: Weighting,
    /// Condition number of `JᵀJ` above which the fit is flagged.
    pub condition_threshold: f64,
    /// Optional `(lo, hi)` bounds per parameter, enforced by a logistic map.
    pub bounds: Vec<(FitParam, f64, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            weighting: Weighting::LogUniform,
            condition_threshold: 1e12,
            bounds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Vec<(FitParam, f64)>,
    /// Fitted flat loop factor.
    pub gain: f64,
    /// Covariance of `params` (natural units), row-major.
    pub covariance: Vec<Vec<f64>>,
    pub relative_uncertainties: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

#[derive(Clone, Copy)]
enum Transform {
    Identity,
    Log,
    Logistic(f64, f64),
}

impl Transform {
    fn to_natural(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logistic(lo, hi) => lo + (hi - lo) / (1.0 + (-z).exp()),
        }
    }
    fn from_natural(self, x: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Log if x > 0.0 => Ok(x.ln()),
            Transform::Log => Err(Error::Domain(format!("initial value {x} must be positive"))),
            Transform::Logistic(lo, hi) if x > lo && x < hi => {
                let s = (x - lo) / (hi - lo);
                Ok((s / (1.0 - s)).ln())
            }
            Transform::Logistic(lo, hi) => Err(Error::Domain(format!(
                "initial value {x} outside bounds ({lo}, {hi})"
            ))),
        }
    }
    fn derivative(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => z.exp(),
            Transform::Logistic(lo, hi) => {
                let s = 1.0 / (1.0 + (-z).exp());
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

fn weights(freq_hz: &[f64], weighting: Weighting) -> Vec<f64> {
    let n = freq_hz.len();
    let w2: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; n],
        Weighting::LogUniform => {
            let l: Vec<f64> = freq_hz.iter().map(|f| f.ln()).collect();
            (0..n)
                .map(|i| {
                    let lo = if i == 0 {
                        l[0]
                    } else {
                        0.5 * (l[i - 1] + l[i])
                    };
                    let hi = if i + 1 == n {
                        l[n - 1]
                    } else {
                        0.5 * (l[i] + l[i + 1])
                    };
                    (hi - lo).max(0.0)
                })
                .collect()
        }
    };
    let mean = w2.iter().sum::<f64>() / n as f64;
    w2.iter()
        .map(|w| if mean > 0.0 { (w / mean).sqrt() } else { 1.0 })
        .collect()
}

struct Problem<'a> {
    base: &'a OptomechConfig,
    free: &'a [FitParam],
    transforms: Vec<Transform>,
    freq_hz: &'a [f64],
    data: &'a [Complex64],
    w: Vec<f64>,
}

impl Problem<'_> {
    fn natural(&self, z: &DVector<f64>) -> (Vec<(FitParam, f64)>, f64) {
        let p = self.free.len();
        let vals = (0..p)
            .map(|i| (self.free[i], self.transforms[i].to_natural(z[i])))
            .collect();
        (vals, z[p])
    }

    fn residuals(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (vals, gain) = self.natural(z);
        let cfg = apply_params(self.base, &vals);
        let model = model_tf(&cfg, gain, self.freq_hz)?;
        let n = self.data.len();
        let mut r = DVector::zeros(2 * n);
        for i in 0..n {
            let d = (model[i] - self.data[i]) / self.data[i].norm() * self.w[i];
            r[2 * i] = d.re;
            r[2 * i + 1] = d.im;
        }
        Ok(r)
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = 2 * self.data.len();
        let mut j = DMatrix::zeros(m, z.len());
        for k in 0..z.len() {
            let h = 1e-6 * z[k].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let col = (self.residuals(&zp)? - self.residuals(&zm)?) / (2.0 * h);
            j.set_column(k, &col);
        }
        Ok(j)
    }
}

/// Weighted complex least-squares fit of `gain·C(Ω; params)` to `c_meas`.
///
/// The residual of each bin is `w·(model − data)/|data|`, stacked as real and
/// imaginary parts. A flat real loop factor is always fitted alongside the
/// `free` parameters; parameters not listed keep their values from `base`,
/// and `init` overrides starting values.
pub fn fit_cavity_params(
    freq_hz: &[f64],
    c_meas: &[Complex64],
    base: &OptomechConfig,
    free: &[FitParam],
    init: &[(FitParam, f64)],
    opts: &FitOptions,
) -> Result<FitReport> {
    if freq_hz.len() != c_meas.len() {
        return Err(Error::GridMismatch);
    }
    if c_meas.len() <= free.len() + 1 {
        return Err(Error::TooShort("fewer data points than parameters".into()));
    }
    if free.contains(&FitParam::Kappa) && free.contains(&FitParam::KappaL) {
        return Err(Error::Domain(
            "kappa and kappaL cannot both be free with kappa1, kappa2 fixed".into(),
        ));
    }
    if free.contains(&FitParam::NCav) && free.contains(&FitParam::PCav) {
        return Err(Error::Domain(
            "n_cav and p_cav describe the same quantity".into(),
        ));
    }
    if let Some(index) = c_meas.iter().position(|c| !(c.norm() > 0.0)) {
        return Err(Error::DivideByZero { index });
    }
    let start_cfg = apply_params(base, init);
    let transforms: Vec<Transform> = free
        .iter()
        .map(|p| {
            if let Some(&(_, lo, hi)) = opts.bounds.iter().find(|b| b.0 == *p) {
                Transform::Logistic(lo, hi)
            } else if p.positive() {
                Transform::Log
            } else {
                Transform::Identity
            }
        })
        .collect();
    let np = free.len();
    let mut z = DVector::zeros(np + 1);
    for (i, p) in free.iter().enumerate() {
        z[i] = transforms[i].from_natural(p.get(&start_cfg)?)?;
    }
    // Start the flat factor at its linear least-squares value.
    let m0 = model_tf(&start_cfg, 1.0, freq_hz)?;
    let w = weights(freq_hz, opts.weighting);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..c_meas.len() {
        let s = w[i] * w[i] / c_meas[i].norm_sqr();
        num += (m0[i].conj() * c_meas[i]).re * s;
        den += m0[i].norm_sqr() * s;
    }
    z[np] = if den > 0.0 { num / den } else { 1.0 };

    let prob = Problem {
        base,
        free,
        transforms: transforms.clone(),
        freq_hz,
        data: c_meas,
        w,
    };
    let mut r = prob.residuals(&z)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = prob.jacobian(&z)?;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let zn = &z + &step;
            let Ok(rn) = prob.residuals(&zn) else {
                lambda *= 10.0;
                continue;
            };
            let cn = rn.norm_squared();
            if cn.is_finite() && cn <= cost {
                let small_step = step.norm() <= 1e-12 * (z.norm() + 1e-12);
                let small_gain = cost - cn <= 1e-14 * cost.max(1e-300);
                z = zn;
                r = rn;
                cost = cn;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations });
    }

    let j = prob.jacobian(&z)?;
    let jtj = j.transpose() * &j;
    let sv = jtj.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let condition_number = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let dof = (r.len() as f64 - z.len() as f64).max(1.0);
    let s2 = cost / dof;
    let cov_z = jtj
        .clone()
        .pseudo_inverse(1e-300)
        .map_err(|e| Error::Domain(e.to_string()))?
        * s2;
    let (vals, gain) = prob.natural(&z);
    let d: Vec<f64> = (0..np).map(|i| transforms[i].derivative(z[i])).collect();
    let covariance: Vec<Vec<f64>> = (0..np)
        .map(|a| (0..np).map(|b| d[a] * d[b] * cov_z[(a, b)]).collect())
        .collect();
    let relative_uncertainties = (0..np)
        .map(|i| covariance[i][i].max(0.0).sqrt() / vals[i].1.abs())
        .collect();
    Ok(FitReport {
        params: vals,
        gain,
        covariance,
        relative_uncertainties,
        cost,
        iterations,
        condition_number,
        ill_conditioned: condition_number > opts.condition_threshold,
    })
}

/// Cost `Σ|r|²` of the fit objective at given parameter values.
pub fn fit_cost(
    freq_hz: &[f64],
    c_meas: &[Complex64],
    base: &OptomechConfig,
    values: &[(FitParam, f64)],
    gain: f64,
    weighting: Weighting,
) -> Result<f64> {
    let cfg = apply_params(base, values);
    let model = model_tf(&cfg, gain, freq_hz)?;
    let w = weights(freq_hz, weighting);
    Ok((0..c_meas.len())
        .map(|i| ((model[i] - c_meas[i]) / c_meas[i].norm() * w[i]).norm_sqr())
        .sum())
}
