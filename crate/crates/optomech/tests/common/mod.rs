#![allow(dead_code)]

use std::path::PathBuf;

use optomech::{fit_controller, Band, ControllerResponse, FrequencyGrid, OptomechConfig};

pub const TAU: f64 = std::f64::consts::TAU;

pub fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/cantilever.toml")
}

pub fn shipped_config() -> OptomechConfig {
    OptomechConfig::from_file(config_path()).expect("shipped config")
}

/// Shipped configuration with its fitted controller.
pub fn shipped() -> (OptomechConfig, ControllerResponse) {
    let cfg = shipped_config();
    let ctrl = fit_controller(&cfg, 93e3, 2)
        .expect("controller fit")
        .controller;
    (cfg, ctrl)
}

/// Coarser version of the shipped grid, fine enough to resolve the sprung linewidth.
pub fn coarse_grid() -> FrequencyGrid {
    FrequencyGrid::new(10.0, 1.0e6, 1 << 16).unwrap()
}

pub fn shipped_band() -> Band {
    Band::new(1.0e4, 1.0e6)
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}
