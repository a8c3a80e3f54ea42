//! Trace CSV and text reports.
//!
//! Trace files have the header `time_us,counts,sigma` (the `sigma` column is
//! optional on input), one row per bin, LF line endings and `.` as the
//! decimal separator. Numbers are written in Rust's shortest round-trip form,
//! so the same values always produce the same bytes.

use crate::analysis::{poisson_sigma, TimeTrace};
use crate::error::{Error, Result};
use crate::fitting::{FitResult, ParamId};
use crate::units::{angular_to_mhz, sigma_from_alpha};
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_HEADER: &str = "time_us,counts,sigma";

/// Parses a trace CSV. Errors carry the 1-based line number.
pub fn parse_trace(text: &str) -> Result<TimeTrace> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let with_sigma = match cols.as_slice() {
        ["time_us", "counts", "sigma"] => true,
        ["time_us", "counts"] => false,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header '{TRACE_HEADER}' or 'time_us,counts', got '{header}'"),
            })
        }
    };
    let n_cols = if with_sigma { 3 } else { 2 };
    let (mut times, mut counts, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_cols {
            return Err(Error::Parse { line: line_no, msg: format!("expected {n_cols} fields, found {}", fields.len()) });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line: line_no, msg: format!("{what} '{s}' is not a finite number") }),
            }
        };
        let t = num(fields[0], "time_us")?;
        let c = num(fields[1], "counts")?;
        if c < 0.0 {
            return Err(Error::Parse { line: line_no, msg: format!("negative count {c}") });
        }
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(Error::Parse { line: line_no, msg: format!("time {t} does not increase (previous {prev})") });
            }
        }
        let s = if with_sigma {
            let s = num(fields[2], "sigma")?;
            if s < 0.0 {
                return Err(Error::Parse { line: line_no, msg: format!("negative sigma {s}") });
            }
            s
        } else {
            poisson_sigma(c)
        };
        times.push(t);
        counts.push(c);
        sigma.push(s);
    }
    if times.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    TimeTrace::new(times, counts, sigma)
}

pub fn read_trace(path: &Path) -> Result<TimeTrace> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read trace {}: {e}", path.display())))?;
    parse_trace(&text)
}

pub fn format_trace(trace: &TimeTrace) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for i in 0..trace.len() {
        let _ = writeln!(out, "{},{},{}", trace.times[i], trace.counts[i], trace.sigma[i]);
    }
    out
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Flat `key = value` lines followed by a `[parameters]` CSV block.
///
/// Frequencies are echoed in rad/µs and in cyclic MHz; α is also reported as
/// the shift width σ_Δ in MHz.
pub fn format_fit_report(fit: &FitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model = {}", fit.kind.name());
    let _ = writeln!(out, "converged = {}", fit.converged);
    let _ = writeln!(out, "n_iter = {}", fit.n_iter);
    let _ = writeln!(out, "n_points = {}", fit.n_points);
    let _ = writeln!(out, "n_free = {}", fit.free.len());
    let _ = writeln!(out, "cost = {}", fit.cost);
    let _ = writeln!(out, "reduced_chi2 = {}", fit.reduced_chi2);
    for (&p, &v) in &fit.estimates {
        let se = fit.std_error(p);
        let _ = writeln!(out, "{p} = {v}");
        let _ = writeln!(out, "{p}_stderr = {se}");
        if p.is_frequency() {
            let _ = writeln!(out, "{p}_mhz = {}", angular_to_mhz(v));
            let _ = writeln!(out, "{p}_mhz_stderr = {}", angular_to_mhz(se));
        }
        if p == ParamId::Alpha {
            let _ = writeln!(out, "sigma_mhz = {}", angular_to_mhz(sigma_from_alpha(v)));
        }
    }
    out.push_str("[parameters]\nname,value,stderr,unit,free\n");
    for (&p, &v) in &fit.estimates {
        let _ = writeln!(out, "{p},{v},{},{},{}", fit.std_error(p), p.unit(), fit.free.contains(&p));
    }
    out.push_str("[end]\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let times: Vec<f64> = (0..20).map(|i| 0.001 + i as f64 * 0.002).collect();
        let counts: Vec<f64> = (0..20).map(|i| (i * i % 17) as f64).collect();
        let tr = TimeTrace::with_poisson_sigma(times, counts).unwrap();
        let text = format_trace(&tr);
        assert!(text.starts_with("time_us,counts,sigma\n"));
        assert_eq!(parse_trace(&text).unwrap(), tr);
    }

    #[test]
    fn sigma_column_optional() {
        let tr = parse_trace("time_us,counts\n0,4\n0.5,0\n1.0,9\n").unwrap();
        assert_eq!(tr.sigma, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn errors_report_line_numbers() {
        let cases = [
            ("time_us,counts,sigma\n0,1,1\n0.1,abc,1\n", 3),
            ("time_us,counts,sigma\n0,1,1\n0,2,1\n", 3),
            ("time_us,counts,sigma\n0,1\n", 2),
            ("time,counts\n0,1\n", 1),
            ("time_us,counts\n0,1\n0.1,-3\n", 3),
            ("", 1),
        ];
        for (text, line) in cases {
            match parse_trace(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn crlf_tolerated() {
        let tr = parse_trace("time_us,counts,sigma\r\n0,1,1\r\n0.5,2,1.5\r\n").unwrap();
        assert_eq!(tr.len(), 2);
    }
}
