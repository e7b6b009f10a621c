//! Modeling, causal Wiener filtering and conditional-state estimation for a
//! feedback-stabilized, detuned optomechanical cavity.
//!
//! Conventions used throughout the crate:
//!
//! * Fourier analysis uses `x(t) = ∫ X(Ω) e^{+iΩt} dΩ/2π`, so `d/dt → iΩ` and a
//!   causal first-order response reads `1/(γ + iΩ)`.
//! * Quadrature operators are normalized so that a vacuum input has a one-sided
//!   power spectral density of 1.
//! * Exported spectra are one-sided. Cross spectra are `S_ab = ⟨a b*⟩`.
//! * On the discrete transform ring, sample `n` belongs to time `n·dt` for
//!   `n < N/2` and to `(n − N)·dt` otherwise. The zero-lag sample is causal.

pub mod conditioning;
pub mod config;
pub mod constants;
pub mod controller;
pub mod error;
pub mod factorization;
pub mod grid;
pub mod io;
pub mod physics;
pub mod pipeline;
pub mod spectra;
pub mod sysid;
pub mod validation;

pub use conditioning::{
    condition, conditional_spectra, integrate_covariance, rate_diagnostics, wiener_filter, Band,
    ConditionReport, ConditionalSpectra, ConditionalState, RateDiagnostics,
};
pub use config::{DampingModel, OptomechConfig};
pub use controller::{fit_controller, ControllerResponse};
pub use error::{Error, Result};
pub use factorization::{causal_factor, causal_project, verify_causality, CausalFilter};
pub use grid::FrequencyGrid;
pub use physics::NoiseInput;
pub use spectra::{model_spectrum_set, SpectrumSet};

pub use num_complex::Complex64;
