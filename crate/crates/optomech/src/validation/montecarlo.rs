use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::statespace::build_state_space;
use crate::conditioning::{condition, Band, ConditionalState};
use crate::config::OptomechConfig;
use crate::controller::ControllerResponse;
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;

/// Parameters that can be perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McParam {
    /// Total linewidth; coupling fractions are kept and `n_cav` re-derived.
    Kappa,
    DeltaFrac,
    PCav,
    NCav,
    /// Detection efficiency; sets both `eta1` and `eta_total`.
    Eta,
    ModeMatch,
}

impl McParam {
    pub fn name(self) -> &'static str {
        match self {
            McParam::Kappa => "kappa",
            McParam::DeltaFrac => "delta_frac",
            McParam::PCav => "p_cav",
            McParam::NCav => "n_cav",
            McParam::Eta => "eta",
            McParam::ModeMatch => "mode_match",
        }
    }

    pub fn nominal(self, cfg: &OptomechConfig) -> Option<f64> {
        Some(match self {
            McParam::Kappa => cfg.kappa,
            McParam::DeltaFrac => cfg.delta_frac,
            McParam::PCav => cfg.p_cav?,
            McParam::NCav => cfg.n_cav,
            McParam::Eta => cfg.eta1,
            McParam::ModeMatch => cfg.mode_match,
        })
    }

    fn apply(self, cfg: &OptomechConfig, value: f64) -> OptomechConfig {
        let mut c = cfg.clone();
        match self {
            McParam::Kappa => return cfg.with_kappa(value),
            McParam::DeltaFrac => c.delta_frac = value,
            McParam::PCav => return cfg.with_p_cav(value),
            McParam::NCav => c.n_cav = value,
            McParam::Eta => {
                c.eta1 = value;
                c.eta_total = value;
            }
            McParam::ModeMatch => c.mode_match = value,
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spread {
    #[default]
    Normal,
    /// Log-normal with median at the nominal value and `σ` as the relative
    /// spread of the underlying normal.
    LogNormal,
}

/// One perturbed parameter. `rel_sigma` is the 1σ spread relative to the
/// nominal value taken from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpread {
    pub param: McParam,
    pub rel_sigma: f64,
    #[serde(default)]
    pub spread: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamDistribution {
    pub params: Vec<ParamSpread>,
}

impl ParamDistribution {
    /// Linewidth, detuning, power, efficiency and mode matching, each at the
    /// same relative 1σ.
    pub fn default_list(rel_sigma: f64) -> Self {
        let params = [
            McParam::Kappa,
            McParam::DeltaFrac,
            McParam::PCav,
            McParam::Eta,
            McParam::ModeMatch,
        ]
        .into_iter()
        .map(|param| ParamSpread {
            param,
            rel_sigma,
            spread: Spread::Normal,
        })
        .collect();
        ParamDistribution { params }
    }

    /// Same list with every σ multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut d = self.clone();
        for p in &mut d.params {
            p.rel_sigma *= factor;
        }
        d
    }

    pub fn validate(&self, cfg: &OptomechConfig) -> Result<()> {
        for p in &self.params {
            if !(p.rel_sigma >= 0.0) || !p.rel_sigma.is_finite() {
                return Err(Error::config(
                    p.param.name(),
                    "sigma must be finite and non-negative",
                ));
            }
            if p.param.nominal(cfg).is_none() {
                return Err(Error::config(
                    p.param.name(),
                    "no nominal value in configuration",
                ));
            }
        }
        Ok(())
    }
}

/// Mean and standard deviation of one output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McStat {
    pub mean: f64,
    pub std: f64,
}

impl McStat {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McStat {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Linear sensitivity of the squeezing figures to one parameter, from a
/// least-squares fit against the sampled relative deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sensitivity {
    pub param: String,
    /// dB per unit relative change.
    pub d_squeeze_db: f64,
    pub d_antisqueeze_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub n_requested: usize,
    pub n_accepted: usize,
    pub n_rejected_unstable: usize,
    pub seed: u64,
    pub nominal: ConditionalState,
    pub v_qq: McStat,
    pub v_pp: McStat,
    pub c_qp: McStat,
    pub eig_min: McStat,
    pub eig_max: McStat,
    pub squeeze_db: McStat,
    pub antisqueeze_db: McStat,
    pub det: McStat,
    pub sensitivities: Vec<Sensitivity>,
}

/// Decorrelates the sample index from the master seed (SplitMix64 finalizer).
fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Outcome {
    Ok(ConditionalState, Vec<f64>),
    Unstable,
}

fn run_sample(
    cfg: &OptomechConfig,
    dist: &ParamDistribution,
    ctrl: &ControllerResponse,
    grid: &FrequencyGrid,
    band: Band,
    seed: u64,
) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = cfg.clone();
    let mut devs = Vec::with_capacity(dist.params.len());
    for p in &dist.params {
        let z: f64 = StandardNormal.sample(&mut rng);
        let nominal = p.param.nominal(cfg).unwrap_or(0.0);
        let factor = match p.spread {
            Spread::Normal => 1.0 + p.rel_sigma * z,
            Spread::LogNormal => (p.rel_sigma * z).exp(),
        };
        devs.push(factor - 1.0);
        c = p.param.apply(&c, nominal * factor);
    }
    for v in [&mut c.eta1, &mut c.eta_total, &mut c.mode_match] {
        *v = v.clamp(0.0, 1.0);
    }
    let stable = if ctrl.is_rational() && c.gouy_phase.sin() == 0.0 {
        build_state_space(&c, ctrl).map(|_| ())
    } else {
        Ok(())
    };
    match stable.and_then(|_| condition(&c, ctrl, grid, band)) {
        Ok(run) => Ok(Outcome::Ok(run.state, devs)),
        Err(Error::UnstableLoop { .. }) => Ok(Outcome::Unstable),
        Err(e) => Err(e),
    }
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / sxx
}

/// Propagates parameter uncertainty into the conditional covariance.
///
/// Samples run in parallel; each draws from its own generator seeded from
/// `(seed, index)`, so the report depends only on the inputs.
pub fn monte_carlo_covariance(
    cfg: &OptomechConfig,
    dist: &ParamDistribution,
    ctrl: &ControllerResponse,
    grid: &FrequencyGrid,
    band: Band,
    n_samples: usize,
    seed: u64,
) -> Result<McReport> {
    if n_samples < 100 {
        return Err(Error::config("n_samples", "at least 100 samples required"));
    }
    dist.validate(cfg)?;
    let nominal = condition(cfg, ctrl, grid, band)?.state;
    let outcomes: Vec<Outcome> = (0..n_samples)
        .into_par_iter()
        .map(|i| run_sample(cfg, dist, ctrl, grid, band, sample_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut states = Vec::new();
    let mut devs = Vec::new();
    let mut rejected = 0;
    for o in outcomes {
        match o {
            Outcome::Ok(s, d) => {
                states.push(s);
                devs.push(d);
            }
            Outcome::Unstable => rejected += 1,
        }
    }
    if states.is_empty() {
        return Err(Error::Domain(
            "every Monte Carlo sample was rejected as unstable".into(),
        ));
    }
    let col = |f: fn(&ConditionalState) -> f64| -> Vec<f64> { states.iter().map(f).collect() };
    let sq = col(|s| s.squeeze_db);
    let asq = col(|s| s.antisqueeze_db);
    let sensitivities = dist
        .params
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let x: Vec<f64> = devs.iter().map(|d| d[j]).collect();
            Sensitivity {
                param: p.param.name().to_string(),
                d_squeeze_db: slope(&x, &sq),
                d_antisqueeze_db: slope(&x, &asq),
            }
        })
        .collect();
    Ok(McReport {
        n_requested: n_samples,
        n_accepted: states.len(),
        n_rejected_unstable: rejected,
        seed,
        nominal,
        v_qq: McStat::of(&col(|s| s.v_qq)),
        v_pp: McStat::of(&col(|s| s.v_pp)),
        c_qp: McStat::of(&col(|s| s.c_qp)),
        eig_min: McStat::of(&col(|s| s.eig_min)),
        eig_max: McStat::of(&col(|s| s.eig_max)),
        squeeze_db: McStat::of(&sq),
        antisqueeze_db: McStat::of(&asq),
        det: McStat::of(&col(|s| s.det)),
        sensitivities,
    })
}
