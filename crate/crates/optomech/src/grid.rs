//! Uniform frequency grids aligned with a discrete transform ring.
//!
//! A grid with `n_bins` bins of width `df = f_max/n_bins` lives on a ring of
//! `N = 2·n_bins` samples with time step `dt = 1/(N·df)`. The one-sided grid
//! keeps bins `first_bin..=n_bins`; bin `n_bins` is the Nyquist bin. Values
//! below `f_min` are filled by constant continuation and negative frequencies
//! by Hermitian mirroring.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    df: f64,
    first_bin: usize,
    n_bins: usize,
}

impl FrequencyGrid {
    /// Grid reaching exactly `f_max` with `n_bins` bins; `f_min` is snapped to
    /// the nearest bin (at least bin 1).
    pub fn new(f_min: f64, f_max: f64, n_bins: usize) -> Result<Self> {
        if !(f_max > 0.0) || !f_max.is_finite() {
            return Err(Error::Domain("f_max must be positive".into()));
        }
        if !(f_min > 0.0) || f_min >= f_max {
            return Err(Error::Domain("need 0 < f_min < f_max".into()));
        }
        if n_bins < 2 {
            return Err(Error::Domain("need at least two bins".into()));
        }
        let df = f_max / n_bins as f64;
        let first_bin = ((f_min / df).round() as usize).clamp(1, n_bins - 1);
        Ok(FrequencyGrid {
            df,
            first_bin,
            n_bins,
        })
    }

    pub fn df(&self) -> f64 {
        self.df
    }
    pub fn first_bin(&self) -> usize {
        self.first_bin
    }
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn f_min(&self) -> f64 {
        self.first_bin as f64 * self.df
    }
    pub fn f_max(&self) -> f64 {
        self.n_bins as f64 * self.df
    }
    /// Number of one-sided grid points.
    pub fn len(&self) -> usize {
        self.n_bins - self.first_bin + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn freq(&self, i: usize) -> f64 {
        (self.first_bin + i) as f64 * self.df
    }
    pub fn freqs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.freq(i)).collect()
    }
    pub fn omegas(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| crate::constants::TAU * self.freq(i))
            .collect()
    }
    pub fn ring_len(&self) -> usize {
        2 * self.n_bins
    }
    pub fn dt(&self) -> f64 {
        1.0 / (self.ring_len() as f64 * self.df)
    }

    /// Indices `[i0, i1]` of grid points inside `[lo_hz, hi_hz]`.
    pub fn band_indices(&self, lo_hz: f64, hi_hz: f64) -> Result<(usize, usize)> {
        let tol = 1e-9 * self.f_max();
        if !(lo_hz > 0.0)
            || lo_hz > hi_hz
            || lo_hz < self.f_min() - tol
            || hi_hz > self.f_max() + tol
        {
            return Err(Error::BandOutOfGrid {
                lo_hz,
                hi_hz,
                f_min: self.f_min(),
                f_max: self.f_max(),
            });
        }
        let i0 =
            ((lo_hz - tol) / self.df).ceil().max(self.first_bin as f64) as usize - self.first_bin;
        let i1 = (((hi_hz + tol) / self.df).floor() as usize).min(self.n_bins) - self.first_bin;
        if i1 < i0 {
            return Err(Error::EmptyBand { lo_hz, hi_hz });
        }
        Ok((i0, i1))
    }

    /// Two-sided ring of a real even spectrum given on the grid.
    pub fn ring_real(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.len());
        let n = self.ring_len();
        let mut ring = vec![0.0; n];
        for k in 0..=self.n_bins {
            let v = if k < self.first_bin {
                values[0]
            } else {
                values[k - self.first_bin]
            };
            ring[k] = v;
            if k > 0 && k < self.n_bins {
                ring[n - k] = v;
            }
        }
        ring
    }

    /// Two-sided Hermitian ring of a complex spectrum given on the grid. The
    /// zero-frequency and Nyquist bins keep only their real parts.
    pub fn ring_complex(&self, values: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len());
        let n = self.ring_len();
        let mut ring = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..=self.n_bins {
            let v = if k < self.first_bin {
                values[0]
            } else {
                values[k - self.first_bin]
            };
            if k == 0 || k == self.n_bins {
                ring[k] = Complex64::new(v.re, 0.0);
            } else {
                ring[k] = v;
                ring[n - k] = v.conj();
            }
        }
        ring
    }

    /// Grid values of a ring.
    pub fn from_ring(&self, ring: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(ring.len(), self.ring_len());
        ring[self.first_bin..=self.n_bins].to_vec()
    }

    pub fn same_as(&self, other: &FrequencyGrid) -> bool {
        self.first_bin == other.first_bin
            && self.n_bins == other.n_bins
            && (self.df - other.df).abs() <= 1e-12 * self.df
    }
}

/// Forward (`e^{−2πikn/N}`) and normalized inverse transforms of one size.
pub struct Transform {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Transform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Transform {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.fwd.process(data);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.inv.process(data);
        let s = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Whether ring index `n` of a length-`len` ring is a strictly negative time.
pub fn is_negative_time(n: usize, len: usize) -> bool {
    n >= len / 2
}
