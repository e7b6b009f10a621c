//! Run configuration: the model parameters plus optional `[controller]`,
//! `[grid]`, `[band]` and `[run]` tables in the same TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use optomech::conditioning::Band;
use optomech::controller::fit_controller;
use optomech::{ControllerResponse, FrequencyGrid, OptomechConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            f_min: 10.0,
            f_max: 1.0e6,
            n_points: 1 << 20,
        }
    }
}

impl GridSpec {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            bail!("--grid expects f_min,f_max,n_points");
        }
        Ok(GridSpec {
            f_min: parts[0].parse().context("grid f_min")?,
            f_max: parts[1].parse().context("grid f_max")?,
            n_points: parts[2].parse().context("grid n_points")?,
        })
    }

    pub fn build(&self) -> optomech::Result<FrequencyGrid> {
        if !self.n_points.is_power_of_two() {
            return Err(optomech::Error::InvalidConfig {
                field: "grid.n_points".into(),
                reason: "must be a power of two".into(),
            });
        }
        FrequencyGrid::new(self.f_min, self.f_max, self.n_points)
    }
}

pub fn parse_band(s: &str) -> anyhow::Result<Band> {
    let (lo, hi) = s.split_once(',').context("--band expects lo_hz,hi_hz")?;
    Ok(Band::new(
        lo.trim().parse().context("band lo")?,
        hi.trim().parse().context("band hi")?,
    ))
}

/// How the controller is obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControllerSpec {
    /// Solve the gain of a low-pass controller for the configured `Ω_eff`.
    Fit {
        pole_hz: f64,
        #[serde(default = "default_order")]
        order: usize,
    },
    Rational {
        gain: f64,
        #[serde(default)]
        zeros: Vec<[f64; 2]>,
        #[serde(default)]
        poles: Vec<[f64; 2]>,
    },
    /// Tabulated response read from a `freq_hz,re,im` CSV.
    Table {
        path: PathBuf,
    },
    None,
}

fn default_order() -> usize {
    2
}

impl ControllerSpec {
    pub fn resolve(
        &self,
        cfg: &OptomechConfig,
        base_dir: &Path,
    ) -> optomech::Result<ControllerResponse> {
        let c = match self {
            ControllerSpec::Fit { pole_hz, order } => {
                fit_controller(cfg, *pole_hz, *order)?.controller
            }
            ControllerSpec::Rational { gain, zeros, poles } => ControllerResponse::Rational {
                gain: *gain,
                zeros: zeros.clone(),
                poles: poles.clone(),
            },
            ControllerSpec::Table { path } => {
                optomech::io::read_controller_table(&base_dir.join(path))?
            }
            ControllerSpec::None => ControllerResponse::zero(),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunTable {
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandTable {
    lo_hz: f64,
    hi_hz: f64,
}

/// Everything a subcommand needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: OptomechConfig,
    pub controller: ControllerSpec,
    pub grid: GridSpec,
    pub band: Band,
    pub seed: u64,
    pub out: PathBuf,
    pub base_dir: PathBuf,
}

pub const DEFAULT_BAND: (f64, f64) = (1.0e4, 1.0e6);

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| optomech::Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| optomech::Error::Parse(e.to_string()))?;
        let controller = match table.remove("controller") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| {
                optomech::Error::config("controller", &e.to_string())
            })?,
            None => ControllerSpec::None,
        };
        let grid = match table.remove("grid") {
            Some(v) => v
                .try_into()
                .map_err(|e: toml::de::Error| optomech::Error::config("grid", &e.to_string()))?,
            None => GridSpec::default(),
        };
        let band = match table.remove("band") {
            Some(v) => {
                let b: BandTable = v.try_into().map_err(|e: toml::de::Error| {
                    optomech::Error::config("band", &e.to_string())
                })?;
                Band::new(b.lo_hz, b.hi_hz)
            }
            None => Band::new(DEFAULT_BAND.0, DEFAULT_BAND.1),
        };
        let run: RunTable = match table.remove("run") {
            Some(v) => v
                .try_into()
                .map_err(|e: toml::de::Error| optomech::Error::config("run", &e.to_string()))?,
            None => RunTable::default(),
        };
        let model = OptomechConfig::from_toml_str(&text)?;
        Ok(RunConfig {
            model,
            controller,
            grid,
            band,
            seed: run.seed.unwrap_or(0),
            out: run.out.unwrap_or_else(|| PathBuf::from("out")),
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn controller(&self) -> optomech::Result<ControllerResponse> {
        self.controller.resolve(&self.model, &self.base_dir)
    }
}
