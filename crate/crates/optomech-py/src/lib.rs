//! Python bindings. Structured results are returned as plain dicts and lists.

use optomech::conditioning::ConditionalState;
use optomech::pipeline::{self, MeasuredSpectrum, Units};
use optomech::validation::{self, Initial, ParamDistribution, Scheme, SimOptions};
use optomech::{Band, ControllerResponse, FrequencyGrid, OptomechConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(optomech_py, OptomechError, PyException);

fn err(e: optomech::Error) -> PyErr {
    OptomechError::new_err(format!("{}: {}", e.kind(), e))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| OptomechError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn grid(f_min: f64, f_max: f64, n_points: usize) -> PyResult<FrequencyGrid> {
    FrequencyGrid::new(f_min, f_max, n_points).map_err(err)
}

/// Model parameters, loaded from TOML.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: OptomechConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: OptomechConfig::from_file(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: OptomechConfig::from_toml_str(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    /// Returns a copy with one field replaced; the result is validated.
    fn with_value(&self, field: &str, value: f64) -> PyResult<Self> {
        let mut v =
            serde_json::to_value(&self.inner).map_err(|e| OptomechError::new_err(e.to_string()))?;
        match v.get_mut(field) {
            Some(slot) => *slot = serde_json::json!(value),
            None => return Err(OptomechError::new_err(format!("unknown field `{field}`"))),
        }
        let inner: OptomechConfig =
            serde_json::from_value(v).map_err(|e| OptomechError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn omega_eff(&self) -> f64 {
        self.inner.omega_eff
    }

    #[getter]
    fn n_cav(&self) -> f64 {
        self.inner.n_cav
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(kappa={:e}, delta_frac={}, n_cav={:e}, omega_eff={:e})",
            self.inner.kappa, self.inner.delta_frac, self.inner.n_cav, self.inner.omega_eff
        )
    }
}

/// Feedback controller `K[Ω]`.
#[pyclass(name = "Controller", from_py_object)]
#[derive(Clone)]
struct PyController {
    inner: ControllerResponse,
}

#[pymethods]
impl PyController {
    /// `gain·Π(iΩ − z)/Π(iΩ − p)` with zeros and poles in rad/s given as (re, im) pairs.
    #[staticmethod]
    #[pyo3(signature = (gain, zeros=vec![], poles=vec![]))]
    fn rational(gain: f64, zeros: Vec<(f64, f64)>, poles: Vec<(f64, f64)>) -> PyResult<Self> {
        let c = |v: Vec<(f64, f64)>| v.into_iter().map(|(re, im)| [re, im]).collect();
        let inner = ControllerResponse::Rational {
            gain,
            zeros: c(zeros),
            poles: c(poles),
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn low_pass(dc_gain: f64, pole_hz: f64, order: usize) -> Self {
        Self {
            inner: ControllerResponse::low_pass(dc_gain, pole_hz, order),
        }
    }

    #[staticmethod]
    fn zero() -> Self {
        Self {
            inner: ControllerResponse::zero(),
        }
    }

    /// Fits the gain of a low-pass controller so that `|χ_eff|` peaks at `Ω_eff`.
    /// Returns the controller and a dict describing the fit.
    #[staticmethod]
    #[pyo3(signature = (config, pole_hz, order=2))]
    fn fit<'py>(
        py: Python<'py>,
        config: &PyConfig,
        pole_hz: f64,
        order: usize,
    ) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let fit = optomech::fit_controller(&config.inner, pole_hz, order).map_err(err)?;
        let info = serde_json::json!({
            "dc_gain": fit.dc_gain,
            "loop_gain": fit.loop_gain,
            "pole_hz": fit.pole_hz,
            "order": fit.order,
            "peak_hz": fit.peak_hz,
            "gamma_eff": fit.gamma_eff,
        });
        Ok((
            Self {
                inner: fit.controller,
            },
            to_py(py, &info)?,
        ))
    }

    /// Complex response at angular frequency `omega`.
    fn __call__(&self, omega: f64) -> PyResult<(f64, f64)> {
        let k = self.inner.eval(omega).map_err(err)?;
        Ok((k.re, k.im))
    }
}

/// Model spectra on a grid: dict of column lists keyed like the CSV export.
#[pyfunction]
#[pyo3(signature = (config, controller, f_min=10.0, f_max=1.0e6, n_points=1 << 16))]
fn model_spectra<'py>(
    py: Python<'py>,
    config: &PyConfig,
    controller: &PyController,
    f_min: f64,
    f_max: f64,
    n_points: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid(f_min, f_max, n_points)?;
    let s = optomech::model_spectrum_set(&config.inner, &controller.inner, &g).map_err(err)?;
    let re = |v: &[optomech::Complex64]| v.iter().map(|c| c.re).collect::<Vec<_>>();
    let im = |v: &[optomech::Complex64]| v.iter().map(|c| c.im).collect::<Vec<_>>();
    let out = serde_json::json!({
        "freq_hz": g.freqs(),
        "s_yy": s.s_yy,
        "s_qq": s.s_qq,
        "s_pp": s.s_pp,
        "re_s_qy": re(&s.s_qy),
        "im_s_qy": im(&s.s_qy),
        "re_s_py": re(&s.s_py),
        "im_s_py": im(&s.s_py),
        "re_s_qp": re(&s.s_qp),
        "im_s_qp": im(&s.s_qp),
    });
    to_py(py, &out)
}

/// Full conditioning run; returns the report dict (state, rates, diagnostics).
#[pyfunction]
#[pyo3(signature = (config, controller, f_min=10.0, f_max=1.0e6, n_points=1 << 20, band=(1.0e4, 1.0e6)))]
fn condition<'py>(
    py: Python<'py>,
    config: &PyConfig,
    controller: &PyController,
    f_min: f64,
    f_max: f64,
    n_points: usize,
    band: (f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid(f_min, f_max, n_points)?;
    let band = Band::new(band.0, band.1);
    let run = py
        .detach(|| optomech::condition(&config.inner, &controller.inner, &g, band))
        .map_err(err)?;
    to_py(py, &run.report(&config.inner, band))
}

/// Eigen-metrics of a covariance given in quanta.
#[pyfunction]
fn eigen_metrics<'py>(
    py: Python<'py>,
    v_qq: f64,
    v_pp: f64,
    c_qp: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ConditionalState::from_tilde(v_qq, v_pp, c_qp))
}

#[pyfunction]
fn rate_diagnostics<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &optomech::rate_diagnostics(&config.inner))
}

/// Welch PSD of a uniformly sampled record.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, segment_length=4096, overlap=0.5))]
fn estimate_psd<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    sample_rate: f64,
    segment_length: usize,
    overlap: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let rec = pipeline::TimeSeriesRecord::new(samples, sample_rate).map_err(err)?;
    let psd = pipeline::estimate_psd(&rec, segment_length, pipeline::Window::Hann, overlap)
        .map_err(err)?;
    to_py(py, &psd)
}

/// Displacement calibration of a voltage PSD against a shot-noise floor in m/√Hz.
#[pyfunction]
#[pyo3(signature = (freq_hz, psd, n_averages, model_floor, band, n_bins=64))]
fn calibrate<'py>(
    py: Python<'py>,
    freq_hz: Vec<f64>,
    psd: Vec<f64>,
    n_averages: usize,
    model_floor: f64,
    band: (f64, f64),
    n_bins: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let meas = MeasuredSpectrum {
        freq_hz,
        psd,
        n_averages,
        units: Units::Volts,
    };
    to_py(
        py,
        &pipeline::calibrate_shot_noise(&meas, model_floor, band, n_bins).map_err(err)?,
    )
}

/// Exact-discretization simulation of the closed loop; returns q, p, y lists.
#[pyfunction]
#[pyo3(signature = (config, controller, duration, dt, seed=0))]
fn simulate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    controller: &PyController,
    duration: f64,
    dt: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let ss = validation::build_state_space(&config.inner, &controller.inner).map_err(err)?;
    let opts = SimOptions {
        duration,
        dt,
        seed,
        scheme: Scheme::Exact,
        initial: Initial::Stationary,
    };
    let sim = py
        .detach(|| validation::simulate(&ss, &opts))
        .map_err(err)?;
    to_py(py, &sim)
}

/// Monte Carlo spread of the conditional covariance under parameter uncertainty.
#[pyfunction]
#[pyo3(signature = (config, controller, rel_sigma=0.03, n_samples=200, seed=0, f_min=10.0, f_max=1.0e6, n_points=1 << 16, band=(1.0e4, 1.0e6)))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo<'py>(
    py: Python<'py>,
    config: &PyConfig,
    controller: &PyController,
    rel_sigma: f64,
    n_samples: usize,
    seed: u64,
    f_min: f64,
    f_max: f64,
    n_points: usize,
    band: (f64, f64),
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid(f_min, f_max, n_points)?;
    let dist = ParamDistribution::default_list(rel_sigma);
    let band = Band::new(band.0, band.1);
    let report = py
        .detach(|| {
            validation::monte_carlo_covariance(
                &config.inner,
                &dist,
                &controller.inner,
                &g,
                band,
                n_samples,
                seed,
            )
        })
        .map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn optomech_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OptomechError", m.py().get_type::<OptomechError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(model_spectra, m)?)?;
    m.add_function(wrap_pyfunction!(condition, m)?)?;
    m.add_function(wrap_pyfunction!(eigen_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(rate_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psd, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
