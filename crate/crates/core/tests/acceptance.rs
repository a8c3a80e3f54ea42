//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use collective_rabi::analysis::{find_peaks, peak_spacings, quadratic_peak_fit, TimeTrace};
use collective_rabi::broadening::{reference_integrate, visibility, Broadening, BroadeningParams};
use collective_rabi::datagen::{presets, synth, SignalModel, SynthSpec};
use collective_rabi::dynamics::{compare_to_model, evolve, DynamicsConfig};
use collective_rabi::fitting::{fit, initialize, FitModelSpec, ParamId};
use collective_rabi::model::{chirp_phase, effective_rabi, instantaneous_frequency, ChirpedOscParams, DriveParams};
use collective_rabi::units::{alpha_from_sigma, angular_to_mhz, mhz_to_angular};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn effective_rabi_consistency() -> Outcome {
    let drive = DriveParams { omega_c: mhz_to_angular(44.8), delta_c: mhz_to_angular(23.4), delta_p: mhz_to_angular(-2.7) };
    let got = effective_rabi(&drive);
    let analytic = TAU * (44.8f64 * 44.8 + 23.4 * 23.4).sqrt();
    let exact = (got - analytic).abs() <= 4.0 * f64::EPSILON * analytic;
    let discrepancy = (mhz_to_angular(50.9) - got).abs() / mhz_to_angular(50.9);
    outcome(
        exact && discrepancy < 0.01,
        format!("effective Rabi 2π×{:.4} MHz, relative gap to 2π×50.9 MHz = {:.4}", angular_to_mhz(got), discrepancy),
    )
}

fn chirp_asymptote() -> Outcome {
    let omega = mhz_to_angular(50.0);
    let at_zero = instantaneous_frequency(7.0, omega, 0.0) == omega;
    let chirp = 10.0;
    let late = instantaneous_frequency(chirp, omega, 5.0 / chirp);
    let asym = (late / (omega * FRAC_1_SQRT_2) - 1.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(0.0..20.0);
        let om = mhz_to_angular(rng.random_range(10.0..100.0));
        let t = rng.random_range(-0.5..0.5);
        let h = 1e-5;
        let fd = (chirp_phase(c, om, t + h) - chirp_phase(c, om, t - h)) / (2.0 * h);
        let exact = instantaneous_frequency(c, om, t);
        worst = worst.max((fd / exact - 1.0).abs());
    }
    outcome(
        at_zero && asym < 1e-3 && worst < 1e-6,
        format!("ω(0) = Ω: {at_zero}, |ω/(Ω/√2) - 1| at Ct = 5: {asym:.2e}, worst derivative mismatch {worst:.2e}"),
    )
}

fn quadrature_oracle() -> Outcome {
    let times: Vec<f64> = (0..500).map(|i| 0.5 * i as f64 / 499.0).collect();
    let mut grid = Vec::new();
    for &c in &[0.0, 6.0, 15.0] {
        for &f in &[41.4, 50.9, 68.4] {
            for &s in &[0.5, 2.5, 4.0] {
                grid.push((c, f, s));
            }
        }
    }
    let hermite = Broadening::new(40).expect("rule");
    let worst = grid
        .par_iter()
        .map(|&(c, f, s)| {
            let osc = ChirpedOscParams { beta: 6.0, chirp: c, t0: 0.1, omega_n: mhz_to_angular(f), delta: 0.0 };
            let b = BroadeningParams::from_sigma(mhz_to_angular(s));
            times
                .iter()
                .map(|&t| (hermite.signal(&osc, b.alpha, t) - reference_integrate(&osc, &b, t).expect("oracle")).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    outcome(worst < 1e-8, format!("27 parameter sets × 500 times, worst |Hermite - Simpson| = {worst:.2e}"))
}

/// Bound on the quadratic coefficient from peak-time errors of half a bin.
fn curvature_bound(n_peaks: usize, bin: f64) -> f64 {
    let x = DMatrix::from_fn(n_peaks, 3, |r, c| ((r + 1) as f64).powi(c as i32));
    let pinv = x.pseudo_inverse(1e-14).expect("pseudo-inverse");
    0.5 * bin * pinv.row(2).iter().map(|v| v.abs()).sum::<f64>()
}

fn expected_trace(spec: &SynthSpec) -> TimeTrace {
    let lambda = spec.expected().expect("expected counts");
    TimeTrace::with_poisson_sigma(spec.bin_centers(), lambda).expect("trace")
}

fn curvature_signature() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["fig2b", "fig2c", "fig2d", "fig2e"] {
        for &chirp in &[0.0, 2.0, 6.0, 10.0] {
            let mut spec = presets(name).expect("preset").spec;
            if let SignalModel::Eq5 { osc, .. } = &mut spec.model {
                osc.chirp = chirp;
            }
            let tr = expected_trace(&spec);
            let top = tr.counts.iter().cloned().fold(0.0, f64::max);
            let peaks = find_peaks(&tr, 0, 0.05 * top).expect("peaks");
            let q = quadratic_peak_fit(&peaks).expect("quadratic");
            let ok = if chirp > 0.0 { q.c > 0.0 } else { q.c.abs() < curvature_bound(peaks.len(), tr.bin_width()) };
            pass &= ok;
            if !ok || chirp == 0.0 || chirp == 6.0 {
                lines.push(format!("{name} C={chirp}: c={:.2e}", q.c));
            }
        }
    }
    let bound = curvature_bound(9, 0.002);
    outcome(pass, format!("{} (C=0 bound ≈ {bound:.1e} µs for 9 peaks)", lines.join(", ")))
}

fn recovery_rate(name: &str, seeds: u64) -> (f64, usize) {
    let base = presets(name).expect("preset").spec;
    let truth: Vec<f64> = match &base.model {
        SignalModel::Eq5 { osc, .. } => vec![osc.omega_n],
        SignalModel::Double { osc, omega_n2, .. } => vec![osc.omega_n, *omega_n2],
        _ => unreachable!(),
    };
    let spec = if truth.len() == 1 { FitModelSpec::single() } else { FitModelSpec::double() };
    let hits = (0..seeds)
        .into_par_iter()
        .filter(|&seed| {
            let tr = synth(&SynthSpec { seed, ..base.clone() }).expect("synth");
            let Ok(init) = initialize(&tr, &spec) else { return false };
            let Ok(res) = fit(&tr, &spec, &init) else { return false };
            let got: Vec<f64> = if truth.len() == 1 {
                vec![res.get(ParamId::OmegaN).unwrap()]
            } else {
                vec![res.get(ParamId::OmegaN).unwrap(), res.get(ParamId::OmegaN2).unwrap()]
            };
            let ordered = got.windows(2).all(|w| w[0] < w[1]);
            ordered && got.iter().zip(&truth).all(|(g, t)| (g / t - 1.0).abs() < 0.02)
        })
        .count();
    (hits as f64 / seeds as f64, hits)
}

fn fit_round_trip() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["fig2b", "fig2c", "fig2d", "fig2e"] {
        let (rate, _) = recovery_rate(name, 100);
        pass &= rate >= 0.95;
        parts.push(format!("{name} {:.0}%", 100.0 * rate));
    }
    outcome(pass, format!("Ωₙ within 2% over 100 seeds: {}", parts.join(", ")))
}

fn two_frequency() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["fig4e", "fig4f"] {
        let (rate, _) = recovery_rate(name, 100);
        pass &= rate >= 0.90;
        parts.push(format!("{name} {:.0}%", 100.0 * rate));
    }
    outcome(pass, format!("both Ωₙ within 2% and ascending over 100 seeds: {}", parts.join(", ")))
}

fn mechanistic_fit(cfg: &DynamicsConfig) -> (collective_rabi::dynamics::StateTrajectory, collective_rabi::fitting::FitResult) {
    let traj = evolve(cfg).expect("evolve");
    let trace = traj.intensity_trace(10).expect("trace");
    // a single undispersed shift: broadening switched off
    let spec = FitModelSpec::single().with_fixed(ParamId::Alpha, 1e12);
    let init = initialize(&trace, &spec).expect("init");
    let res = fit(&trace, &spec, &init).expect("fit");
    (traj, res)
}

fn mechanistic_chirp() -> Outcome {
    let decaying = DynamicsConfig::default();
    let (traj, res) = mechanistic_fit(&decaying);
    let tr = traj.intensity_trace(1).expect("trace");
    let peaks = find_peaks(&tr, 0, 1e-3).expect("peaks");
    let spacing = peak_spacings(&peaks).expect("spacings");
    let increasing = spacing.windows(2).all(|w| w[1] > w[0]);
    let c_decay = res.get(ParamId::Chirp).unwrap();
    let report = compare_to_model(&traj, &res);

    let omega = decaying.size.omega;
    let lossless = DynamicsConfig { gamma_loss: 0.0, gamma_conv: 0.0, gamma_e: 1e-3, ..decaying };
    let (_, res0) = mechanistic_fit(&lossless);
    let c0 = res0.get(ParamId::Chirp).unwrap();
    let period_err = (omega / res0.get(ParamId::OmegaN).unwrap() - 1.0).abs();
    let pass = increasing
        && c_decay > 0.0
        && res.converged
        && report.is_ok()
        && res0.converged
        && c0.abs() < 0.05
        && period_err < 1e-3;
    outcome(
        pass,
        format!(
            "{} peaks with increasing spacing: {increasing}; fitted C = {c_decay:.3}/µs; decay off: |C| = {:.1e}/µs, period error {period_err:.1e}",
            peaks.len(),
            c0.abs()
        ),
    )
}

fn visibility_trend() -> Outcome {
    let osc = ChirpedOscParams { beta: 6.0, chirp: 6.0, t0: 0.1, omega_n: mhz_to_angular(46.1), delta: 0.0 };
    let hermite = Broadening::new(40).expect("rule");
    let times: Vec<f64> = (0..=3000).map(|i| i as f64 * 1e-4).collect();
    let vis: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&s| {
            let alpha = alpha_from_sigma(mhz_to_angular(s));
            let y = hermite.trace(&osc, alpha, &times);
            visibility(&times, &y, (0.0, 0.3)).expect("visibility")
        })
        .collect();
    let pass = vis.windows(2).all(|w| w[1] < w[0]);
    outcome(pass, format!("visibility at σ = 2π×{{0.5, 1, 2, 4}} MHz: {vis:.4?}"))
}

fn statistical_soundness() -> Outcome {
    let base = presets("fig2b").expect("preset").spec;
    let lambda = base.expected().expect("expected");
    let n = 200u64;
    let mut sum = vec![0.0; lambda.len()];
    let mut sum2 = vec![0.0; lambda.len()];
    for seed in 0..n {
        let tr = synth(&SynthSpec { seed, ..base.clone() }).expect("synth");
        for (i, &c) in tr.counts.iter().enumerate() {
            sum[i] += c;
            sum2[i] += c * c;
        }
    }
    let nf = n as f64;
    let (mut var, mut mean) = (0.0, 0.0);
    for i in 0..lambda.len() {
        let m = sum[i] / nf;
        var += (sum2[i] - nf * m * m) / (nf - 1.0);
        mean += m;
    }
    let ratio = var / mean;

    let truth = mhz_to_angular(46.1);
    let spec = FitModelSpec::single();
    let pulls: Vec<f64> = (1000..1000 + n)
        .into_par_iter()
        .filter_map(|seed| {
            let tr = synth(&SynthSpec { seed, ..base.clone() }).ok()?;
            let res = fit(&tr, &spec, &initialize(&tr, &spec).ok()?).ok()?;
            let se = res.std_error(ParamId::OmegaN);
            (res.converged && se > 0.0).then(|| (res.get(ParamId::OmegaN).unwrap() - truth) / se)
        })
        .collect();
    let k = pulls.len() as f64;
    let mu = pulls.iter().sum::<f64>() / k;
    let pvar = pulls.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (k - 1.0);
    let pass = (ratio - 1.0).abs() < 0.1 && mu.abs() < 0.2 && (0.5..=2.0).contains(&pvar) && pulls.len() as u64 == n;
    outcome(
        pass,
        format!("variance/mean = {ratio:.3}; Ωₙ pull over {} fits: mean {mu:.3}, variance {pvar:.3}", pulls.len()),
    )
}

const BIN: &str = env!("CARGO_BIN_EXE_collective-rabi");

/// Runs the binary inside `dir`; returns exit code and stdout.
fn run_cli(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(BIN).current_dir(dir).args(args).output().expect("spawn");
    (out.status.code().unwrap_or(-1), out.stdout)
}

/// Every file in `dir`, sorted by name.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("read_dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let shared = tempfile::tempdir().expect("tempdir");
    let config = shared.path().join("run.cfg");
    std::fs::write(&config, "fit.n_starts = 4\nsynth.n_bins = 120\npeaks.smooth = 1\n").expect("config");
    let input = shared.path().join("input.csv");
    let (code, _) = run_cli(shared.path(), &["synth", "--preset", "fig2c", "--seed", "11", "--out", input.to_str().unwrap()]);
    if code != 0 {
        return outcome(false, format!("could not create input trace (exit {code})"));
    }
    let cfg = config.to_str().unwrap();
    let inp = input.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--config", cfg, "--preset", "fig2b", "--out", "sim.csv", "--plot", "svg"]),
        ("simulate dynamics", vec!["simulate", "--model", "dynamics", "--out", "dyn.csv", "--plot", "data"]),
        ("synth", vec!["synth", "--config", cfg, "--preset", "fig4e", "--seed", "5", "--out", "syn.csv", "--plot", "data"]),
        ("fit", vec!["fit", inp, "--config", cfg, "--seed", "9", "--out", "fit.txt", "--plot", "svg"]),
        ("fit double", vec!["fit", inp, "--model", "double", "--seed", "9", "--out", "fit2.txt"]),
        ("peaks", vec!["peaks", inp, "--config", cfg, "--out", "peaks.txt", "--plot", "data"]),
        ("compare", vec!["compare", "--config", cfg, "--seed", "2", "--out", "cmp.txt", "--plot", "svg"]),
        ("fit to stdout", vec!["fit", inp, "--seed", "9"]),
    ];
    let mut mismatched = Vec::new();
    let mut n_files = 0;
    for (label, args) in &commands {
        let a = tempfile::tempdir().expect("tempdir");
        let b = tempfile::tempdir().expect("tempdir");
        let ra = run_cli(a.path(), args);
        let rb = run_cli(b.path(), args);
        let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
        n_files += fa.len();
        if ra != rb || fa != fb || (fa.is_empty() && ra.1.is_empty()) {
            mismatched.push(format!("{label} (exit {} / {})", ra.0, rb.0));
        }
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} invocations, {n_files} output files and stdout byte-identical across two runs", commands.len())
        } else {
            format!("differing or empty output: {}", mismatched.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: Vec<Check> = vec![
        ("1 effective-Rabi consistency", effective_rabi_consistency),
        ("2 chirp asymptote", chirp_asymptote),
        ("3 quadrature oracle equivalence", quadrature_oracle),
        ("4 peak-time curvature signature", curvature_signature),
        ("5 single-model fit round trip", fit_round_trip),
        ("6 two-frequency fit", two_frequency),
        ("7 mechanistic chirp emergence", mechanistic_chirp),
        ("8 broadening-visibility monotonicity", visibility_trend),
        ("9 statistical soundness", statistical_soundness),
        ("10 CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
