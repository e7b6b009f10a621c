mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use optomech::conditioning::{condition_spectra, Band};
use optomech::io;
use optomech::pipeline::{self, Units, Window};
use optomech::spectra::shot_noise_floor;
use optomech::sysid::{self, FitOptions, FitParam};
use optomech::validation::{
    self, Initial, McParam, ParamDistribution, ParamSpread, Scheme, SimOptions, Spread,
};
use optomech::{model_spectrum_set, Error, FrequencyGrid, SpectrumSet};
use serde_json::json;
use settings::{parse_band, GridSpec, RunConfig};

#[derive(Parser)]
#[command(
    name = "optomech",
    version,
    about = "Conditional squeezing analysis for a feedback-stabilized optomechanical cavity"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (model parameters plus optional [controller], [grid], [band], [run]).
    #[arg(long, global = true, env = "OPTOMECH_CONFIG")]
    config: Option<PathBuf>,
    /// Frequency grid as f_min,f_max,n_points.
    #[arg(long, global = true, env = "OPTOMECH_GRID")]
    grid: Option<String>,
    /// Integration band as lo_hz,hi_hz.
    #[arg(long, global = true, env = "OPTOMECH_BAND")]
    band: Option<String>,
    #[arg(long, global = true, env = "OPTOMECH_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "OPTOMECH_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Model spectra S_yy, S_qq, S_pp and cross spectra on the grid.
    ModelSpectra,
    /// Causal spectral factor of the model S_yy.
    Factorize,
    /// Wiener filters and the conditional covariance.
    Condition {
        /// Measured displacement-calibrated S_yy (freq_hz,psd CSV) replacing the model.
        #[arg(long)]
        measured: Option<PathBuf>,
    },
    /// Welch PSD of a time series.
    Psd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SeriesFormat::Csv)]
        format: SeriesFormat,
        /// Sample rate for raw input [Hz].
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long, default_value_t = 4096)]
        segment: usize,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
        window: WindowArg,
    },
    /// Displacement calibration against the shot-noise floor.
    Calibrate {
        /// Measured voltage PSD (freq_hz,psd CSV) [V²/Hz].
        #[arg(long)]
        measured: PathBuf,
        /// Shot-noise floor [m/√Hz]; computed from the model when omitted.
        #[arg(long)]
        floor: Option<f64>,
        /// Frequency range used for the histogram, lo_hz,hi_hz.
        #[arg(long)]
        fit_band: String,
        #[arg(long, default_value_t = 200)]
        bins: usize,
    },
    /// Two-detuning cancellation of common excess noise.
    Clean {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        aux_measured: PathBuf,
        #[arg(long)]
        aux_model: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
    },
    /// Fit cavity parameters to a measured open-loop transfer function.
    Fit {
        /// CSV with freq_hz,re_a,im_a,re_b,im_b.
        #[arg(long)]
        tf: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec!["kappa".to_string(), "p_cav".to_string()])]
        free: Vec<String>,
    },
    /// Stochastic time-domain simulation of the closed loop.
    Simulate {
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Exact)]
        scheme: SchemeArg,
        #[arg(long, value_enum, default_value_t = TrajFormat::Csv)]
        format: TrajFormat,
    },
    /// Monte Carlo propagation of parameter uncertainty.
    Mc {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Relative 1σ applied to every parameter.
        #[arg(long, default_value_t = 0.03)]
        sigma: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec!["kappa".to_string(), "delta_frac".to_string(), "p_cav".to_string(), "eta".to_string(), "mode_match".to_string()])]
        params: Vec<String>,
        #[arg(long)]
        lognormal: bool,
    },
    /// Solve the gain of a low-pass controller for the configured Ω_eff.
    FitController {
        #[arg(long)]
        pole_hz: f64,
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SeriesFormat {
    Csv,
    F32,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Exact,
    EulerMaruyama,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajFormat {
    Csv,
    Bin,
}

struct Ctx {
    run: Option<RunConfig>,
    grid: GridSpec,
    band: Band,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> anyhow::Result<Self> {
        let run = match &c.config {
            Some(p) => Some(RunConfig::load(p)?),
            None => None,
        };
        let grid = match &c.grid {
            Some(s) => GridSpec::parse(s)?,
            None => run.as_ref().map(|r| r.grid).unwrap_or_default(),
        };
        let band = match &c.band {
            Some(s) => parse_band(s)?,
            None => run.as_ref().map(|r| r.band).unwrap_or(Band::new(
                settings::DEFAULT_BAND.0,
                settings::DEFAULT_BAND.1,
            )),
        };
        let seed = c.seed.or(run.as_ref().map(|r| r.seed)).unwrap_or(0);
        let out = c
            .out
            .clone()
            .or(run.as_ref().map(|r| r.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Ctx {
            run,
            grid,
            band,
            seed,
            out,
        })
    }

    fn run(&self) -> anyhow::Result<&RunConfig> {
        match &self.run {
            Some(r) => Ok(r),
            None => Err(Error::config("config", "this subcommand needs --config").into()),
        }
    }

    fn out_file(&self, name: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.display().to_string(),
            source,
        })?;
        Ok(self.out.join(name))
    }

    fn model_spectra(&self) -> anyhow::Result<(SpectrumSet, optomech::ControllerResponse)> {
        let run = self.run()?;
        let ctrl = run.controller()?;
        let grid = self.grid.build()?;
        Ok((model_spectrum_set(&run.model, &ctrl, &grid)?, ctrl))
    }
}

fn interpolate_onto(
    grid: &FrequencyGrid,
    freq: &[f64],
    values: &[f64],
) -> anyhow::Result<Vec<f64>> {
    if freq.len() < 2 || freq.windows(2).any(|w| w[1] <= w[0]) {
        bail!(Error::Parse(
            "measured spectrum needs at least two increasing frequencies".into()
        ));
    }
    let (lo, hi) = (freq[0], freq[freq.len() - 1]);
    if grid.f_min() < lo * (1.0 - 1e-9) || grid.f_max() > hi * (1.0 + 1e-9) {
        bail!(Error::BandOutOfGrid {
            lo_hz: grid.f_min(),
            hi_hz: grid.f_max(),
            f_min: lo,
            f_max: hi,
        });
    }
    Ok(grid
        .freqs()
        .iter()
        .map(|&f| {
            let j = freq.partition_point(|&x| x <= f).clamp(1, freq.len() - 1);
            let t = ((f - freq[j - 1]) / (freq[j] - freq[j - 1])).clamp(0.0, 1.0);
            values[j - 1] + t * (values[j] - values[j - 1])
        })
        .collect())
}

fn print_report(r: &optomech::ConditionReport) {
    let s = &r.state;
    println!(
        "conditional covariance (quanta), band {} Hz - {} Hz",
        r.band.lo_hz, r.band.hi_hz
    );
    println!("  [{:8.4} {:8.4}]", s.v_qq, s.c_qp);
    println!("  [{:8.4} {:8.4}]", s.c_qp, s.v_pp);
    println!("  eigenvalues     {:.4}, {:.4}", s.eig_min, s.eig_max);
    println!(
        "  squeezing       {:+.3} dB / {:+.3} dB relative to zero point",
        s.squeeze_db, s.antisqueeze_db
    );
    println!(
        "  determinant     {:.4} ({})",
        s.det,
        if s.physical { "physical" } else { "unphysical" }
    );
    println!(
        "  rates [1/s]     meas {:.4e}, thermal {:.4e}, back-action {:.4e} (meas/Ω_eff = {:.3})",
        r.rates.gamma_meas, r.rates.gamma_th, r.rates.gamma_ba, r.rates.ratio_meas_to_omega
    );
}

fn mc_param(name: &str) -> anyhow::Result<McParam> {
    Ok(match name {
        "kappa" => McParam::Kappa,
        "delta_frac" => McParam::DeltaFrac,
        "p_cav" => McParam::PCav,
        "n_cav" => McParam::NCav,
        "eta" => McParam::Eta,
        "mode_match" => McParam::ModeMatch,
        other => {
            return Err(
                Error::config("params", format!("unknown Monte Carlo parameter `{other}`")).into(),
            )
        }
    })
}

fn fit_param(name: &str) -> anyhow::Result<FitParam> {
    Ok(match name {
        "kappa" => FitParam::Kappa,
        "delta_frac" => FitParam::DeltaFrac,
        "n_cav" => FitParam::NCav,
        "p_cav" => FitParam::PCav,
        "kappaL" | "kappa_l" => FitParam::KappaL,
        other => {
            return Err(Error::config("free", format!("unknown fit parameter `{other}`")).into())
        }
    })
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.command {
        Command::ModelSpectra => {
            let (s, _) = ctx.model_spectra()?;
            let path = ctx.out_file("spectra.csv")?;
            io::write_spectrum_set(&path, &s)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Factorize => {
            let (s, ctrl) = ctx.model_spectra()?;
            let m = optomech::causal_factor(&s.grid, &s.s_yy)?;
            let inv = m.inverse();
            let cfg = &ctx.run()?.model;
            let band = ctx.band;
            let doubling =
                optomech::factorization::doubling_change(&s.grid, (band.lo_hz, band.hi_hz), |g| {
                    Ok(model_spectrum_set(cfg, &ctrl, g)?.s_yy)
                })?;
            io::write_filter_response(&ctx.out_file("m_y.csv")?, &m)?;
            io::write_filter_impulse(&ctx.out_file("m_y_impulse.csv")?, &m)?;
            let report = json!({
                "residual": m.residual(),
                "anticausal_energy_fraction": m.anticausal_energy_fraction,
                "inverse_anticausal_energy_fraction": inv.anticausal_energy_fraction,
                "doubling_change": doubling,
                "n_points": s.grid.len(),
            });
            io::write_json(&ctx.out_file("factorization.json")?, &report)?;
        }
        Command::Condition { measured } => {
            let run = ctx.run()?;
            let (mut s, _) = ctx.model_spectra()?;
            if let Some(path) = measured {
                let m = io::read_measured_spectrum(&path, Units::Meters)?;
                s.s_yy = interpolate_onto(&s.grid, &m.freq_hz, &m.psd)?;
            }
            let result = condition_spectra(s, &run.model, ctx.band)?;
            let report = result.report(&run.model, ctx.band);
            io::write_json(&ctx.out_file("condition.json")?, &report)?;
            let c = &result.conditional;
            let grid = c.grid;
            let path = ctx.out_file("conditional_spectra.csv")?;
            let mut w =
                csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
            w.write_record(["freq_hz", "s_dqdq", "s_dpdp", "re_s_dqdp", "im_s_dqdp"])?;
            for i in 0..grid.len() {
                w.serialize((
                    grid.freq(i),
                    c.s_dqdq[i],
                    c.s_dpdp[i],
                    c.s_dqdp[i].re,
                    c.s_dqdp[i].im,
                ))?;
            }
            w.flush()?;
            io::write_filter_response(&ctx.out_file("h_q.csv")?, &result.h_q)?;
            io::write_filter_response(&ctx.out_file("h_p.csv")?, &result.h_p)?;
            print_report(&report);
        }
        Command::Psd {
            input,
            format,
            sample_rate,
            segment,
            overlap,
            window,
        } => {
            let rec = match format {
                SeriesFormat::Csv => io::read_time_series_csv(&input)?,
                SeriesFormat::F32 => {
                    let rate = sample_rate
                        .ok_or_else(|| Error::config("sample_rate", "required for raw input"))?;
                    io::read_time_series_f32(&input, rate)?
                }
            };
            let w = match window {
                WindowArg::Hann => Window::Hann,
                WindowArg::Rectangular => Window::Rectangular,
            };
            let psd = pipeline::estimate_psd(&rec, segment, w, overlap)?;
            io::write_measured_spectrum(&ctx.out_file("psd.csv")?, &psd)?;
        }
        Command::Calibrate {
            measured,
            floor,
            fit_band,
            bins,
        } => {
            let fb = parse_band(&fit_band)?;
            let meas = io::read_measured_spectrum(&measured, Units::Volts)?;
            let floor = match floor {
                Some(f) => f,
                None => {
                    let run = ctx.run()?;
                    let ctrl = run.controller()?;
                    let f_mid = (fb.lo_hz * fb.hi_hz).sqrt();
                    shot_noise_floor(&run.model, &ctrl, std::f64::consts::TAU * f_mid)?
                }
            };
            let cal = pipeline::calibrate_shot_noise(&meas, floor, (fb.lo_hz, fb.hi_hz), bins)?;
            let report = json!({ "model_floor": floor, "calibration": cal });
            io::write_json(&ctx.out_file("calibration.json")?, &report)?;
            println!("calibration factor {:.6e} m/V", cal.factor);
        }
        Command::Clean {
            target,
            aux_measured,
            aux_model,
            threshold,
        } => {
            let t = io::read_measured_spectrum(&target, Units::Meters)?;
            let am = io::read_measured_spectrum(&aux_measured, Units::Meters)?;
            let ad = io::read_measured_spectrum(&aux_model, Units::Meters)?;
            if t.freq_hz != am.freq_hz || t.freq_hz != ad.freq_hz {
                bail!(Error::GridMismatch);
            }
            let cleaned = pipeline::clean_spectrum(&t.psd, &am.psd, &ad.psd, threshold)?;
            let path = ctx.out_file("clean.csv")?;
            let mut w =
                csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
            w.write_record(["freq_hz", "psd", "flagged"])?;
            for i in 0..t.freq_hz.len() {
                w.serialize((t.freq_hz[i], cleaned.values[i], cleaned.flags[i] as u8))?;
            }
            w.flush()?;
        }
        Command::Fit { tf, free } => {
            let run = ctx.run()?;
            let meas = io::read_transfer_measurement(&tf)?;
            let c = sysid::open_loop_tf(&meas)?;
            let (f, c): (Vec<f64>, Vec<_>) = meas
                .freq_hz
                .iter()
                .zip(c)
                .filter_map(|(f, c)| c.map(|c| (*f, c)))
                .unzip();
            let free: Vec<FitParam> = free
                .iter()
                .map(|s| fit_param(s))
                .collect::<anyhow::Result<_>>()?;
            let report =
                sysid::fit_cavity_params(&f, &c, &run.model, &free, &[], &FitOptions::default())?;
            io::write_json(&ctx.out_file("fit.json")?, &report)?;
            for ((p, v), u) in report.params.iter().zip(&report.relative_uncertainties) {
                println!("{:<12} {:.6e} ± {:.2}%", p.name(), v, 100.0 * u);
            }
        }
        Command::Simulate {
            duration,
            dt,
            scheme,
            format,
        } => {
            let run = ctx.run()?;
            let ctrl = run.controller()?;
            let ss = validation::build_state_space(&run.model, &ctrl)?;
            let opts = SimOptions {
                duration,
                dt,
                seed: ctx.seed,
                scheme: match scheme {
                    SchemeArg::Exact => Scheme::Exact,
                    SchemeArg::EulerMaruyama => Scheme::EulerMaruyama,
                },
                initial: Initial::Stationary,
            };
            let sim = validation::simulate(&ss, &opts)?;
            match format {
                TrajFormat::Csv => {
                    io::write_trajectory_csv(&ctx.out_file("trajectory.csv")?, &sim)?
                }
                TrajFormat::Bin => {
                    io::write_trajectory_bin(&ctx.out_file("trajectory.bin")?, &sim)?
                }
            }
        }
        Command::Mc {
            samples,
            sigma,
            params,
            lognormal,
        } => {
            let run = ctx.run()?;
            let ctrl = run.controller()?;
            let grid = ctx.grid.build()?;
            let dist = ParamDistribution {
                params: params
                    .iter()
                    .map(|p| {
                        Ok(ParamSpread {
                            param: mc_param(p)?,
                            rel_sigma: sigma,
                            spread: if lognormal {
                                Spread::LogNormal
                            } else {
                                Spread::Normal
                            },
                        })
                    })
                    .collect::<anyhow::Result<_>>()?,
            };
            let report = validation::monte_carlo_covariance(
                &run.model, &dist, &ctrl, &grid, ctx.band, samples, ctx.seed,
            )?;
            io::write_json(&ctx.out_file("mc.json")?, &report)?;
            println!(
                "eig_min {:.4} ± {:.4} ({:+.3} ± {:.3} dB), eig_max {:.4} ± {:.4} ({:+.3} ± {:.3} dB), {} of {} samples accepted",
                report.eig_min.mean,
                report.eig_min.std,
                report.squeeze_db.mean,
                report.squeeze_db.std,
                report.eig_max.mean,
                report.eig_max.std,
                report.antisqueeze_db.mean,
                report.antisqueeze_db.std,
                report.n_accepted,
                report.n_requested
            );
        }
        Command::FitController { pole_hz, order } => {
            let run = ctx.run()?;
            let fit = optomech::fit_controller(&run.model, pole_hz, order)?;
            io::write_json(&ctx.out_file("controller.json")?, &fit)?;
            println!(
                "loop gain {:.6}, controller DC gain {:.6e}, peak {:.3} Hz",
                fit.loop_gain, fit.dc_gain, fit.peak_hz
            );
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> (serde_json::Value, u8) {
    if let Some(e) = err.downcast_ref::<Error>() {
        let mut v = json!({ "error": e.kind(), "message": e.to_string() });
        if let Error::InvalidConfig { field, .. } = e {
            v["field"] = json!(field);
        }
        let code = match e {
            Error::InvalidConfig { .. } | Error::Parse(_) | Error::Io { .. } => 2,
            _ => 1,
        };
        return (v, code);
    }
    (
        json!({ "error": "Other", "message": format!("{err:#}") }),
        1,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (v, code) = error_json(&e);
            eprintln!("{}", serde_json::to_string(&v).unwrap_or_default());
            ExitCode::from(code)
        }
    }
}
