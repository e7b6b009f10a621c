//! Minimum-phase spectral factorization and causal projection on the
//! transform ring of a [`FrequencyGrid`].

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{is_negative_time, FrequencyGrid, Transform};

/// Relative tolerance on `||M|² − S|/S` accepted by [`causal_factor`].
pub const FACTOR_TOLERANCE: f64 = 1e-6;

/// A filter's two-sided frequency response with its impulse response.
#[derive(Debug, Clone)]
pub struct CausalFilter {
    pub grid: FrequencyGrid,
    /// Response on the full transform ring (standard FFT ordering).
    pub ring: Vec<Complex64>,
    /// Impulse response samples `h(n·dt)` in ring ordering.
    pub impulse: Vec<f64>,
    pub anticausal_energy_fraction: f64,
    /// Spectrum this filter factors, when it is a spectral factor.
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CausalityDiagnostics {
    pub residual: Option<f64>,
    pub anticausal_energy_fraction: f64,
}

fn impulse_of(grid: &FrequencyGrid, ring: &[Complex64]) -> Vec<f64> {
    let mut t = ring.to_vec();
    Transform::new(t.len()).inverse(&mut t);
    let s = 1.0 / grid.dt();
    t.iter().map(|v| v.re * s).collect()
}

/// `Σ_{t<0} h² / Σ h²` over the ring.
pub fn anticausal_fraction(impulse: &[f64]) -> f64 {
    let n = impulse.len();
    let (mut neg, mut tot) = (0.0, 0.0);
    for (i, h) in impulse.iter().enumerate() {
        let e = h * h;
        tot += e;
        if is_negative_time(i, n) {
            neg += e;
        }
    }
    if tot > 0.0 {
        neg / tot
    } else {
        0.0
    }
}

impl CausalFilter {
    pub fn from_ring(grid: FrequencyGrid, ring: Vec<Complex64>, target: Option<Vec<f64>>) -> Self {
        let impulse = impulse_of(&grid, &ring);
        let anticausal_energy_fraction = anticausal_fraction(&impulse);
        CausalFilter {
            grid,
            ring,
            impulse,
            anticausal_energy_fraction,
            target,
        }
    }

    /// Response on the one-sided grid points.
    pub fn response(&self) -> Vec<Complex64> {
        self.grid.from_ring(&self.ring)
    }

    /// The filter `1/H`.
    pub fn inverse(&self) -> CausalFilter {
        let ring = self.ring.iter().map(|v| 1.0 / v).collect();
        CausalFilter::from_ring(self.grid, ring, None)
    }

    /// Largest `||H|² − S|/S` over the grid, for spectral factors.
    pub fn residual(&self) -> Option<f64> {
        self.target.as_ref().map(|s| {
            self.response()
                .iter()
                .zip(s)
                .map(|(m, s)| ((m.norm_sqr() - s) / s).abs())
                .fold(0.0, f64::max)
        })
    }

    /// Causal impulse-response taps `h(n·dt)` for `n ≥ 0`.
    pub fn causal_taps(&self) -> &[f64] {
        &self.impulse[..self.impulse.len() / 2]
    }
}

/// Causal, causally invertible factor `M` with `|M|² = s_yy`, by the cepstral
/// method: `c = IFFT(½·log S)`, negative quefrencies folded onto positive ones,
/// `M = exp(FFT(c_folded))`.
pub fn causal_factor(grid: &FrequencyGrid, s_yy: &[f64]) -> Result<CausalFilter> {
    if s_yy.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    if let Some(index) = s_yy.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::NonPositiveSpectrum { index });
    }
    let ring = grid.ring_real(s_yy);
    let n = ring.len();
    let tr = Transform::new(n);
    let mut c: Vec<Complex64> = ring
        .iter()
        .map(|s| Complex64::new(0.5 * s.ln(), 0.0))
        .collect();
    tr.inverse(&mut c);
    let half = n / 2;
    for (i, v) in c.iter_mut().enumerate() {
        let re = v.re;
        *v = Complex64::new(
            match i {
                0 => re,
                i if i < half => 2.0 * re,
                i if i == half => re,
                _ => 0.0,
            },
            0.0,
        );
    }
    tr.forward(&mut c);
    let m: Vec<Complex64> = c.iter().map(|v| v.exp()).collect();
    let filter = CausalFilter::from_ring(*grid, m, Some(s_yy.to_vec()));
    let residual = filter.residual().unwrap_or(0.0);
    if !(residual <= FACTOR_TOLERANCE) {
        return Err(Error::FactorizationDiverged { residual });
    }
    Ok(filter)
}

/// Largest relative change `|M₂ − M|/|M|` of the spectral factor on the
/// shared frequencies in `[lo_hz, hi_hz]` when `spectrum` is re-tabulated with
/// twice the bins over the same range. Cepstral aliasing shows up as a change
/// that does not shrink with further doubling. The lowest bins also move with
/// the constant continuation towards DC, hence the band.
pub fn doubling_change(
    grid: &FrequencyGrid,
    (lo_hz, hi_hz): (f64, f64),
    spectrum: impl Fn(&FrequencyGrid) -> Result<Vec<f64>>,
) -> Result<f64> {
    let fine = FrequencyGrid::new(grid.f_min(), grid.f_max(), 2 * grid.n_bins())?;
    let coarse = causal_factor(grid, &spectrum(grid)?)?.response();
    let dense = causal_factor(&fine, &spectrum(&fine)?)?.response();
    let (i0, i1) = grid.band_indices(lo_hz, hi_hz)?;
    let mut worst = 0.0f64;
    for (i, m) in coarse.iter().enumerate().take(i1 + 1).skip(i0) {
        let k = 2 * (grid.first_bin() + i);
        if k < fine.first_bin() {
            continue;
        }
        let Some(m2) = dense.get(k - fine.first_bin()) else {
            break;
        };
        worst = worst.max((m2 - m).norm() / m.norm());
    }
    Ok(worst)
}

/// In-place causal projection of a ring: strictly negative times are zeroed,
/// the zero-lag sample is kept.
pub fn causal_project_ring(ring: &mut [Complex64]) {
    let n = ring.len();
    let tr = Transform::new(n);
    tr.inverse(ring);
    for (i, v) in ring.iter_mut().enumerate() {
        if is_negative_time(i, n) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    tr.forward(ring);
}

/// Causal part `[f]₊` of a Hermitian spectrum given on the grid.
pub fn causal_project(grid: &FrequencyGrid, f: &[Complex64]) -> Result<Vec<Complex64>> {
    if f.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let mut ring = grid.ring_complex(f);
    causal_project_ring(&mut ring);
    Ok(grid.from_ring(&ring))
}

/// Recomputes the factorization residual and anticausal energy fraction.
pub fn verify_causality(filter: &CausalFilter) -> CausalityDiagnostics {
    CausalityDiagnostics {
        residual: filter.residual(),
        anticausal_energy_fraction: anticausal_fraction(&impulse_of(&filter.grid, &filter.ring)),
    }
}
