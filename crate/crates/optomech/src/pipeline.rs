//! From homodyne time series to calibrated, cleaned spectra: Welch PSD
//! estimation, shot-noise histogram calibration and auxiliary-spectrum noise
//! cancellation.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Transform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeriesRecord {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        let rec = TimeSeriesRecord {
            samples,
            sample_rate,
            metadata: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Domain("sample_rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Volts,
    Meters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpectrum {
    pub freq_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub units: Units,
    pub n_averages: usize,
}

impl MeasuredSpectrum {
    pub fn asd(&self) -> Vec<f64> {
        self.psd.iter().map(|p| p.sqrt()).collect()
    }

    /// Converts a voltage spectrum to displacement with `psd_m = factor²·psd_V`.
    pub fn calibrated(&self, factor: f64) -> MeasuredSpectrum {
        MeasuredSpectrum {
            freq_hz: self.freq_hz.clone(),
            psd: self.psd.iter().map(|p| factor * factor * p).collect(),
            units: Units::Meters,
            n_averages: self.n_averages,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // Periodic Hann, the usual choice for spectral averaging.
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Welch-averaged one-sided PSD. White noise of variance σ² gives `2σ²/f_s`
/// and a sinusoid of amplitude `A` integrates to `A²/2`.
pub fn estimate_psd(
    rec: &TimeSeriesRecord,
    segment_length: usize,
    window: Window,
    overlap: f64,
) -> Result<MeasuredSpectrum> {
    rec.validate()?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Domain("overlap must lie in [0, 1)".into()));
    }
    if segment_length < 2 || segment_length > rec.samples.len() {
        return Err(Error::TooShort(format!(
            "record of {} samples cannot hold a segment of {segment_length}",
            rec.samples.len()
        )));
    }
    let n = segment_length;
    let step = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n_seg = (rec.samples.len() - n) / step + 1;
    let w = window.coefficients(n);
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let tr = Transform::new(n);
    let per_segment: Vec<Vec<f64>> = (0..n_seg)
        .into_par_iter()
        .map(|s| {
            let mut buf: Vec<Complex64> = rec.samples[s * step..s * step + n]
                .iter()
                .zip(&w)
                .map(|(x, wi)| Complex64::new(x * wi, 0.0))
                .collect();
            tr.forward(&mut buf);
            buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    let mut acc = vec![0.0; n / 2 + 1];
    for seg in &per_segment {
        for (a, v) in acc.iter_mut().zip(seg) {
            *a += v;
        }
    }
    let norm = 1.0 / (rec.sample_rate * w2 * n_seg as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) {
                1.0
            } else {
                2.0
            };
            one_sided * a * norm
        })
        .collect();
    let freq_hz = (0..=n / 2)
        .map(|k| k as f64 * rec.sample_rate / n as f64)
        .collect();
    Ok(MeasuredSpectrum {
        freq_hz,
        psd,
        units: Units::Volts,
        n_averages: n_seg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationWarning {
    /// A second histogram peak within 3 dB of the main one.
    Multimodal {
        primary_asd: f64,
        secondary_asd: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Displacement per volt [m/V].
    pub factor: f64,
    /// Most frequent measured ASD in the band [V/√Hz].
    pub mode_asd: f64,
    pub warnings: Vec<CalibrationWarning>,
}

/// Calibration factor `model_floor/mode_asd` from the mode of an ASD histogram
/// with `n_bins` logarithmic bins over `[0.5, 2]×` the band median.
///
/// The mode is the median of the ASD values falling in the most populated bin.
pub fn calibrate_shot_noise(
    meas: &MeasuredSpectrum,
    model_floor: f64,
    band: (f64, f64),
    n_bins: usize,
) -> Result<Calibration> {
    let (lo_hz, hi_hz) = band;
    let mut asd: Vec<f64> = meas
        .freq_hz
        .iter()
        .zip(&meas.psd)
        .filter(|(f, _)| **f >= lo_hz && **f <= hi_hz)
        .map(|(_, p)| p.sqrt())
        .filter(|a| *a > 0.0)
        .collect();
    if asd.is_empty() || n_bins == 0 {
        return Err(Error::EmptyBand { lo_hz, hi_hz });
    }
    asd.sort_by(f64::total_cmp);
    let median = median_sorted(&asd);
    let (lmin, lmax) = ((0.5 * median).ln(), (2.0 * median).ln());
    let width = (lmax - lmin) / n_bins as f64;
    let bin_of = |a: f64| -> Option<usize> {
        let x = (a.ln() - lmin) / width;
        if x < 0.0 || x > n_bins as f64 {
            None
        } else {
            Some((x as usize).min(n_bins - 1))
        }
    };
    let mut counts = vec![0usize; n_bins];
    for &a in &asd {
        if let Some(b) = bin_of(a) {
            counts[b] += 1;
        }
    }
    let peak = (0..n_bins)
        .max_by_key(|&b| (counts[b], std::cmp::Reverse(b)))
        .unwrap_or(0);
    let in_peak: Vec<f64> = asd
        .iter()
        .copied()
        .filter(|&a| bin_of(a) == Some(peak))
        .collect();
    let mode_asd = median_sorted(&in_peak);
    let center = |b: usize| (lmin + (b as f64 + 0.5) * width).exp();
    let mut warnings = Vec::new();
    let mut second: Option<usize> = None;
    for b in 0..n_bins {
        let left = if b == 0 { 0 } else { counts[b - 1] };
        let right = if b + 1 == n_bins { 0 } else { counts[b + 1] };
        let is_local_max = counts[b] > 0 && counts[b] >= left && counts[b] > right;
        if is_local_max && b.abs_diff(peak) > 1 && second.is_none_or(|s| counts[b] > counts[s]) {
            second = Some(b);
        }
    }
    if let Some(s) = second {
        if 2 * counts[s] >= counts[peak] {
            warnings.push(CalibrationWarning::Multimodal {
                primary_asd: mode_asd,
                secondary_asd: center(s),
            });
        }
    }
    Ok(Calibration {
        factor: model_floor / mode_asd,
        mode_asd,
        warnings,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanedSpectrum {
    pub values: Vec<f64>,
    /// Bins where the measured auxiliary spectrum departs from its model by
    /// more than the threshold.
    pub flags: Vec<bool>,
}

/// `S_clean = S_mod,aux · S_meas,target / S_meas,aux`, flagging bins with
/// `|S_meas,aux/S_mod,aux − 1| > threshold`.
pub fn clean_spectrum(
    target_meas: &[f64],
    aux_meas: &[f64],
    aux_mod: &[f64],
    threshold: f64,
) -> Result<CleanedSpectrum> {
    if target_meas.len() != aux_meas.len() || aux_meas.len() != aux_mod.len() {
        return Err(Error::GridMismatch);
    }
    if let Some(index) = aux_meas.iter().position(|&a| a == 0.0) {
        return Err(Error::DivideByZero { index });
    }
    let values = (0..target_meas.len())
        .map(|i| aux_mod[i] / aux_meas[i] * target_meas[i])
        .collect();
    let flags = aux_meas
        .iter()
        .zip(aux_mod)
        .map(|(m, s)| (m / s - 1.0).abs() > threshold)
        .collect();
    Ok(CleanedSpectrum { values, flags })
}

/// Flags bins where two spectra cleaned with independent auxiliary
/// measurements disagree by more than 3σ, with `σ = √(2/n_averages)` the
/// relative spread of a ratio of two independent Welch estimates.
pub fn flag_disagreement(a: &[f64], b: &[f64], n_averages: usize) -> Result<Vec<bool>> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    let sigma = (2.0 / n_averages.max(1) as f64).sqrt();
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| !((x / y).ln().abs() <= 3.0 * sigma))
        .collect())
}
