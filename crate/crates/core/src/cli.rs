//! Command-line front end.
//!
//! Settings are resolved in increasing precedence: built-in defaults, the
//! preset, the `--config` file, then command-line flags and `--set` pairs.

use crate::analysis::{find_peaks, moving_average, poisson_sigma, quadratic_peak_fit, TimeTrace};
use crate::broadening::{BroadeningParams, DEFAULT_NODES};
use crate::config::Config;
use crate::datagen::{presets, synth, SignalModel, SynthSpec};
use crate::dynamics::{compare_to_model, ensemble_average, evolve, DynamicsConfig, StateTrajectory};
use crate::error::{Error, Result};
use crate::fitting::{multi_start_fit_with, FitModelSpec, FitResult, LmSettings, ModelKind, ParamId};
use crate::io::{emit, format_fit_report, format_trace, read_trace};
use crate::model::{ChirpedOscParams, CollectiveSizeParams};
use crate::plot::{plot_data, svg_line_plot};
use crate::units::{alpha_from_sigma, angular_to_mhz, mhz_to_angular};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Effectively unbroadened: α for a sub-Hz shift width.
pub const UNBROADENED_ALPHA: f64 = 1e12;

#[derive(Debug, Parser)]
#[command(name = "collective-rabi", version, about = "Chirped collective Rabi oscillations: simulate, synthesize, fit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a noise-free model trace.
    Simulate(Common),
    /// Write a Poisson-sampled trace.
    Synth(Common),
    /// Fit the single or two-frequency model to a trace CSV.
    Fit {
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Locate peaks in a trace CSV and fit a quadratic to their times.
    Peaks {
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the two-level dynamics, fit its intensity and compare peak times.
    Compare(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotMode {
    None,
    Data,
    Svg,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for Poisson sampling and fit start perturbations.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signal model (eq4, eq5, double, dynamics); for `fit`, single or double.
    #[arg(long)]
    pub model: Option<String>,
    /// Named preset (fig2b ... fig2e, fig4e, fig4f).
    #[arg(long)]
    pub preset: Option<String>,
    /// Also write plot data next to the output.
    #[arg(long, value_enum, default_value = "none")]
    pub plot: PlotMode,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn load_config(common: &Common, fit_model_flag: bool) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(m) = &common.model {
        cfg.set(if fit_model_flag { "fit.model" } else { "model.kind" }, m)?;
    }
    if let Some(p) = &common.preset {
        cfg.set("model.preset", p)?;
    }
    if let Some(s) = common.seed {
        cfg.set("synth.seed", &s.to_string())?;
        cfg.set("fit.seed", &s.to_string())?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if common.plot != PlotMode::None && common.out.is_none() {
        return Err(Error::Config("--plot needs --out to place the plot file".into()));
    }
    Ok(cfg)
}

/// Model and window settings after applying preset and overrides.
#[derive(Debug, Clone)]
struct Scenario {
    kind: String,
    osc: ChirpedOscParams,
    omega_n2: Option<f64>,
    weight2: f64,
    alpha: f64,
    window: (f64, f64, usize),
    amplitude: f64,
    baseline: f64,
    seed: u64,
    dynamics: DynamicsConfig,
    dynamics_alpha: Option<f64>,
}

fn sigma_to_alpha(key: &str, sigma_mhz: f64) -> Result<f64> {
    if !(sigma_mhz > 0.0) {
        return Err(Error::Config(format!("{key} must be > 0, got {sigma_mhz}")));
    }
    Ok(alpha_from_sigma(mhz_to_angular(sigma_mhz)))
}

fn dynamics_config(cfg: &Config) -> Result<(DynamicsConfig, Option<f64>, usize)> {
    let d = DynamicsConfig::default();
    let size = CollectiveSizeParams {
        n_m: cfg.f64_or("dynamics.n_m", d.size.n_m)?,
        n_m_prime: cfg.f64_or("dynamics.n_m_prime", d.size.n_m_prime)?,
        eta: cfg.f64_or("dynamics.eta", d.size.eta)?,
        omega_g: mhz_to_angular(cfg.f64_or("dynamics.omega_g_mhz", angular_to_mhz(d.size.omega_g))?),
        omega: mhz_to_angular(cfg.f64_or("dynamics.omega_mhz", angular_to_mhz(d.size.omega))?),
    };
    let dc = DynamicsConfig {
        size,
        gamma_loss: cfg.f64_or("dynamics.gamma_loss", d.gamma_loss)?,
        gamma_conv: cfg.f64_or("dynamics.gamma_conv", d.gamma_conv)?,
        gamma_e: cfg.f64_or("dynamics.gamma_e", d.gamma_e)?,
        delta: mhz_to_angular(cfg.f64_or("dynamics.delta_mhz", 0.0)?),
        dt: cfg.f64_or("dynamics.dt", d.dt)?,
        t_end: cfg.f64_or("dynamics.t_end", d.t_end)?,
    };
    dc.validate()?;
    let sigma = cfg.f64_or("dynamics.sigma_mhz", 0.0)?;
    let alpha = if sigma == 0.0 { None } else { Some(sigma_to_alpha("dynamics.sigma_mhz", sigma)?) };
    let stride = cfg.usize_or("dynamics.stride", 10)?;
    if stride == 0 {
        return Err(Error::Config("dynamics.stride must be >= 1".into()));
    }
    Ok((dc, alpha, stride))
}

fn scenario(cfg: &Config) -> Result<Scenario> {
    // without a preset the first measured scenario supplies the defaults
    let preset = presets(cfg.str("model.preset").unwrap_or("fig2b"))?;
    let spec = preset.spec;
    let (mut osc, mut omega_n2, mut weight2, alpha, kind) = match spec.model {
        SignalModel::Eq5 { osc, alpha } => (osc, None, 1.0, alpha, "eq5"),
        SignalModel::Double { osc, omega_n2, weight2, alpha } => (osc, Some(omega_n2), weight2, alpha, "double"),
        _ => unreachable!("presets are closed-form models"),
    };
    let kind = cfg.str("model.kind").unwrap_or(kind).to_string();
    if !["eq4", "eq5", "double", "dynamics"].contains(&kind.as_str()) {
        return Err(Error::Config(format!("unknown model '{kind}', expected eq4, eq5, double or dynamics")));
    }
    if let Some(v) = cfg.f64("model.omega_n_mhz")? {
        osc.omega_n = mhz_to_angular(v);
    }
    if let Some(v) = cfg.f64("model.omega_n2_mhz")? {
        omega_n2 = Some(mhz_to_angular(v));
    }
    weight2 = cfg.f64_or("model.weight2", weight2)?;
    osc.beta = cfg.f64_or("model.beta", osc.beta)?;
    osc.chirp = cfg.f64_or("model.chirp", osc.chirp)?;
    osc.t0 = cfg.f64_or("model.t0", osc.t0)?;
    osc.delta = mhz_to_angular(cfg.f64_or("model.delta_mhz", angular_to_mhz(osc.delta))?);
    let alpha = match cfg.f64("model.sigma_mhz")? {
        Some(s) => sigma_to_alpha("model.sigma_mhz", s)?,
        None => alpha,
    };
    osc.validate()?;
    BroadeningParams::new(alpha).validate()?;
    let (dynamics, dynamics_alpha, _) = dynamics_config(cfg)?;
    let (default_start, default_end) = if kind == "dynamics" { (0.0, dynamics.t_end) } else { (spec.t_start, spec.t_end) };
    let window = (
        cfg.f64_or("synth.t_start", default_start)?,
        cfg.f64_or("synth.t_end", default_end)?,
        cfg.usize_or("synth.n_bins", spec.n_bins)?,
    );
    Ok(Scenario {
        kind,
        osc,
        omega_n2,
        weight2,
        alpha,
        window,
        amplitude: cfg.f64_or("synth.amplitude", spec.amplitude)?,
        baseline: cfg.f64_or("synth.baseline", spec.baseline)?,
        seed: cfg.u64("synth.seed")?.unwrap_or(spec.seed),
        dynamics,
        dynamics_alpha,
    })
}

fn signal_model(s: &Scenario) -> Result<SignalModel> {
    Ok(match s.kind.as_str() {
        "eq4" => SignalModel::Eq4 { osc: s.osc },
        "eq5" => SignalModel::Eq5 { osc: s.osc, alpha: s.alpha },
        "double" => SignalModel::Double {
            osc: s.osc,
            omega_n2: s.omega_n2.ok_or_else(|| Error::Config("double model needs model.omega_n2_mhz".into()))?,
            weight2: s.weight2,
            alpha: s.alpha,
        },
        _ => SignalModel::Dynamics { cfg: s.dynamics, alpha: s.dynamics_alpha },
    })
}

fn write_plot(common: &Common, times: &[f64], values: &[f64], title: &str) -> Result<()> {
    let Some(out) = &common.out else { return Ok(()) };
    let (suffix, text) = match common.plot {
        PlotMode::None => return Ok(()),
        PlotMode::Data => ("plot.txt", plot_data(times, values)),
        PlotMode::Svg => ("svg", svg_line_plot(times, values, title)),
    };
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    emit(Some(Path::new(&name)), &text)
}

fn cmd_simulate(common: &Common) -> Result<i32> {
    let cfg = load_config(common, false)?;
    let s = scenario(&cfg)?;
    let model = signal_model(&s)?;
    let t_start = cfg.f64_or("grid.t_start", s.window.0)?;
    let t_end = cfg.f64_or("grid.t_end", s.window.1)?;
    let n = cfg.usize_or("grid.n_points", s.window.2)?;
    if n < 2 || !(t_end > t_start) {
        return Err(Error::Config(format!("need grid.n_points >= 2 and t_start < t_end, got {n} on [{t_start}, {t_end}]")));
    }
    let times: Vec<f64> = (0..n).map(|i| t_start + i as f64 * (t_end - t_start) / (n - 1) as f64).collect();
    let a = cfg.f64_or("simulate.amplitude", 1.0)?;
    let b = cfg.f64_or("simulate.baseline", 0.0)?;
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Config("simulate.amplitude and simulate.baseline must be >= 0".into()));
    }
    let values: Vec<f64> = model.evaluate(&times)?.iter().map(|v| a * v + b).collect();
    let sigma = values.iter().map(|&v| poisson_sigma(v)).collect();
    let trace = TimeTrace::new(times, values, sigma)?;
    emit(common.out.as_deref(), &format_trace(&trace))?;
    write_plot(common, &trace.times, &trace.counts, &format!("{} model", s.kind))?;
    Ok(0)
}

fn cmd_synth(common: &Common) -> Result<i32> {
    let cfg = load_config(common, false)?;
    let s = scenario(&cfg)?;
    let spec = SynthSpec {
        model: signal_model(&s)?,
        t_start: s.window.0,
        t_end: s.window.1,
        n_bins: s.window.2,
        amplitude: s.amplitude,
        baseline: s.baseline,
        seed: s.seed,
    };
    let trace = synth(&spec)?;
    emit(common.out.as_deref(), &format_trace(&trace))?;
    write_plot(common, &trace.times, &trace.counts, &format!("{} synthetic counts, seed {}", s.kind, s.seed))?;
    Ok(0)
}

fn fit_settings(cfg: &Config) -> Result<(LmSettings, usize, u64)> {
    let settings = LmSettings { max_iter: cfg.usize_or("fit.max_iter", 500)?, ..LmSettings::default() };
    let n_starts = cfg.usize_or("fit.n_starts", 1)?;
    if n_starts == 0 {
        return Err(Error::Config("fit.n_starts must be >= 1".into()));
    }
    Ok((settings, n_starts, cfg.u64("fit.seed")?.unwrap_or(0)))
}

fn fit_spec(cfg: &Config) -> Result<FitModelSpec> {
    let preset_double = matches!(cfg.str("model.preset"), Some("fig4e" | "fig4f"));
    let kind = match cfg.str("fit.model") {
        Some("single") => ModelKind::Single,
        Some("double") => ModelKind::Double,
        None if preset_double => ModelKind::Double,
        None => ModelKind::Single,
        Some(other) => return Err(Error::Config(format!("unknown fit model '{other}', expected single or double"))),
    };
    let mut spec = FitModelSpec::new(kind);
    spec.n_nodes = cfg.usize_or("fit.n_nodes", DEFAULT_NODES)?;
    if cfg.bool_or("fit.free_sigma", false)? {
        spec = spec.with_free(ParamId::Alpha);
    } else if let Some(s) = cfg.f64("fit.sigma_mhz")? {
        spec = spec.with_fixed(ParamId::Alpha, sigma_to_alpha("fit.sigma_mhz", s)?);
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_fit(trace_path: &Path, common: &Common) -> Result<i32> {
    let cfg = load_config(common, true)?;
    let trace = read_trace(trace_path)?;
    let spec = fit_spec(&cfg)?;
    let (settings, n_starts, seed) = fit_settings(&cfg)?;
    let res = multi_start_fit_with(&trace, &spec, n_starts, seed, settings)?;
    emit(common.out.as_deref(), &format_fit_report(&res))?;
    write_plot(common, &trace.times, &res.evaluate(&trace.times)?, &format!("{} model fit", spec.kind.name()))?;
    Ok(if res.converged { 0 } else { 3 })
}

fn cmd_peaks(trace_path: &Path, common: &Common) -> Result<i32> {
    let cfg = load_config(common, false)?;
    let trace = read_trace(trace_path)?;
    let smooth = cfg.usize_or("peaks.smooth", 1)?;
    let fraction = cfg.f64_or("peaks.prominence", 0.1)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("peaks.prominence must lie in [0, 1], got {fraction}")));
    }
    let smoothed = moving_average(&trace.counts, smooth);
    let range = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    // a flat trace has no prominent peaks at all
    let min_prominence = (fraction * range).max(f64::MIN_POSITIVE);
    let peaks = find_peaks(&trace, smooth, min_prominence)?;

    let mut out = String::new();
    let _ = writeln!(out, "n_peaks = {}", peaks.len());
    let _ = writeln!(out, "smooth = {smooth}");
    let _ = writeln!(out, "min_prominence = {min_prominence}");
    let fit = quadratic_peak_fit(&peaks);
    if let Ok(q) = &fit {
        let _ = writeln!(out, "y0 = {}", q.y0);
        let _ = writeln!(out, "b = {}", q.b);
        let _ = writeln!(out, "c = {}", q.c);
        let _ = writeln!(out, "residual_ss = {}", q.residual_sum_squares());
    }
    out.push_str("[peaks]\norder,bin,time_us,prominence,residual\n");
    for k in 0..peaks.len() {
        let r = fit.as_ref().map(|q| q.residuals[k].to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{r}", k + 1, peaks.indices[k], peaks.times[k], peaks.prominences[k]);
    }
    out.push_str("[end]\n");
    emit(common.out.as_deref(), &out)?;
    write_plot(common, &trace.times, &trace.counts, "trace")?;
    match fit {
        Ok(_) => Ok(0),
        Err(e) => {
            eprintln!("{e}");
            Ok(3)
        }
    }
}

fn cmd_compare(common: &Common) -> Result<i32> {
    let cfg = load_config(common, true)?;
    let (dc, alpha, stride) = dynamics_config(&cfg)?;
    let traj: StateTrajectory = match alpha {
        Some(a) => ensemble_average(&dc, &BroadeningParams::new(a))?,
        None => evolve(&dc)?,
    };
    let trace = traj.intensity_trace(stride)?;
    let mut spec = fit_spec(&cfg)?;
    if spec.kind != ModelKind::Single {
        return Err(Error::Config("compare fits the single model only".into()));
    }
    if !cfg.contains("fit.sigma_mhz") && !cfg.bool_or("fit.free_sigma", false)? {
        spec = spec.with_fixed(ParamId::Alpha, alpha.unwrap_or(UNBROADENED_ALPHA));
    }
    let (settings, n_starts, seed) = fit_settings(&cfg)?;
    let res: FitResult = multi_start_fit_with(&trace, &spec, n_starts, seed, settings)?;
    let report = compare_to_model(&traj, &res)?;

    let mut out = String::new();
    let _ = writeln!(out, "fit_converged = {}", res.converged);
    let _ = writeln!(out, "fit_reduced_chi2 = {}", res.reduced_chi2);
    let om = res.get(ParamId::OmegaN).unwrap_or(0.0);
    let _ = writeln!(out, "fitted_omega_n = {om}");
    let _ = writeln!(out, "fitted_omega_n_mhz = {}", angular_to_mhz(om));
    let _ = writeln!(out, "initial_coupling_mhz = {}", angular_to_mhz(dc.coupling_at(0.0)));
    let _ = writeln!(out, "fitted_chirp = {}", report.fitted_chirp);
    for (p, v) in [("fitted_beta", ParamId::Beta), ("fitted_t0", ParamId::T0)] {
        let _ = writeln!(out, "{p} = {}", res.get(v).unwrap_or(0.0));
    }
    let _ = writeln!(out, "trajectory_period = {}", report.trajectory_period);
    let _ = writeln!(out, "model_period = {}", report.model_period);
    let _ = writeln!(out, "relative_frequency_discrepancy = {}", report.relative_frequency_discrepancy);
    for (label, q) in [("trajectory", &report.trajectory_quadratic), ("model", &report.model_quadratic)] {
        let _ = writeln!(out, "{label}_y0 = {}", q.y0);
        let _ = writeln!(out, "{label}_b = {}", q.b);
        let _ = writeln!(out, "{label}_c = {}", q.c);
    }
    out.push_str("[peaks]\nsource,order,time_us\n");
    for (label, times) in [("trajectory", &report.trajectory_peaks), ("model", &report.model_peaks)] {
        for (k, t) in times.iter().enumerate() {
            let _ = writeln!(out, "{label},{},{t}", k + 1);
        }
    }
    out.push_str("[end]\n");
    emit(common.out.as_deref(), &out)?;
    write_plot(common, &trace.times, &trace.counts, "two-level emitted intensity")?;
    Ok(0)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Synth(c) => cmd_synth(c),
        Command::Fit { trace, common } => cmd_fit(trace, common),
        Command::Peaks { trace, common } => cmd_peaks(trace, common),
        Command::Compare(c) => cmd_compare(c),
    }
}
