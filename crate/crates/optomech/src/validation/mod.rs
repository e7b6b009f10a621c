//! Independent oracles for the frequency-domain pipeline: a linear state-space
//! model of the closed loop, a steady-state Riccati/Kalman solver, a
//! stochastic simulator with causal filtering, and Monte Carlo propagation of
//! parameter uncertainty.

mod montecarlo;
mod riccati;
mod simulate;
mod statespace;

pub use montecarlo::{
    monte_carlo_covariance, McParam, McReport, McStat, ParamDistribution, ParamSpread, Sensitivity,
    Spread,
};
pub use riccati::{
    care_residual, kalman_gain, kalman_steady_state, lyapunov, solve_care, KalmanSolution,
};
pub use simulate::{
    causal_convolve, empirical_conditional_variance, simulate, EmpiricalCovariance, Initial,
    Scheme, SimOptions, SimOutput,
};
pub use statespace::{build_state_space, LinearStateSpace};
