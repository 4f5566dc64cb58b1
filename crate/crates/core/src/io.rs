//! Plain CSV output with `#`-prefixed header comments.
//!
//! Numbers are printed with nine significant digits in the shortest of fixed
//! or scientific notation, so the same value always prints the same text.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::lab::{Curve, ExperimentResult};
use crate::likelihood::Dataset;
use crate::posterior::McmcSample;
use crate::sim::{StatMode, SuffStats, Trajectory};

const SIG_DIGITS: usize = 9;

/// `x` with nine significant digits, in the style of C's `%.9g`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Numerical(format!("i/o failure: {e}"))
}

/// `# key: value` lines.
pub fn write_header<W: Write>(w: &mut W, fields: &[(&str, String)]) -> Result<()> {
    for (k, v) in fields {
        writeln!(w, "# {k}: {v}").map_err(io_err)?;
    }
    Ok(())
}

fn mode_fields(mode: StatMode) -> (&'static str, usize) {
    match mode {
        StatMode::Exact => ("exact", 0),
        StatMode::Discretized(m) => ("discretized", m),
    }
}

pub fn write_stats_csv<W: Write>(w: &mut W, data: &Dataset) -> Result<()> {
    writeln!(w, "i,x0,T,U,V,mode,m").map_err(io_err)?;
    for (i, s) in data.stats.iter().enumerate() {
        let (mode, m) = mode_fields(s.mode);
        writeln!(w, "{},{},{},{},{},{mode},{m}", i + 1, fmt_num(s.x0), fmt_num(s.horizon), fmt_num(s.u), fmt_num(s.v))
            .map_err(io_err)?;
    }
    Ok(())
}

/// Inverse of [`write_stats_csv`]; `#` lines and blank lines are skipped.
pub fn read_stats_csv<R: BufRead>(r: R) -> Result<Dataset> {
    let mut stats = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "i,x0,T,U,V,mode,m" {
                return Err(invalid("data", format!("line {}: unexpected header `{line}`", lineno + 1)));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(invalid("data", format!("line {}: expected 7 fields, found {}", lineno + 1, fields.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| invalid("data", format!("line {}: bad {name} `{}`", lineno + 1, fields[k])))
        };
        let mode = match (fields[5], fields[6].parse::<usize>()) {
            ("exact", _) => StatMode::Exact,
            ("discretized", Ok(m)) => StatMode::Discretized(m),
            _ => return Err(invalid("data", format!("line {}: bad mode `{},{}`", lineno + 1, fields[5], fields[6]))),
        };
        stats.push(SuffStats { x0: num(1, "x0")?, horizon: num(2, "T")?, u: num(3, "U")?, v: num(4, "V")?, mode });
    }
    Dataset::new(stats)
}

pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "t,x").map_err(io_err)?;
    for (t, x) in traj.times.iter().zip(&traj.values) {
        writeln!(w, "{},{}", fmt_num(*t), fmt_num(*x)).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_draws_csv<W: Write>(w: &mut W, sample: &McmcSample) -> Result<()> {
    writeln!(w, "iter,mu,omega2").map_err(io_err)?;
    for (k, t) in sample.draws.iter().enumerate() {
        writeln!(w, "{},{},{}", sample.burn_in + k + 1, fmt_num(t.mu), fmt_num(t.omega2)).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_results_csv<W: Write>(w: &mut W, result: &ExperimentResult) -> Result<()> {
    writeln!(w, "experiment,n_or_m,replicate,metric,value,error_flag").map_err(io_err)?;
    for r in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.experiment.label(),
            r.n_or_m,
            r.replicate,
            r.metric,
            fmt_num(r.value),
            u8::from(r.error_flag)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

pub fn write_curves_csv<W: Write>(w: &mut W, curves: &[Curve]) -> Result<()> {
    writeln!(w, "curve,n,grid,density").map_err(io_err)?;
    for c in curves {
        for (x, d) in c.x.iter().zip(&c.density) {
            writeln!(w, "{},{},{},{}", c.label, c.n, fmt_num(*x), fmt_num(*d)).map_err(io_err)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(123_456_789.0), "123456789");
        assert_eq!(fmt_num(1_234_567_890.0), "1.23456789e+09");
        assert_eq!(fmt_num(0.000_123_456_789_1), "0.000123456789");
        assert_eq!(fmt_num(1.5e-7), "1.5e-07");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_num(0.520_100_12), "0.52010012");
    }

    proptest! {
        #[test]
        fn printed_values_round_trip_to_nine_digits(x in -1e12f64..1e12) {
            let back: f64 = fmt_num(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-9 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn stats_round_trip() {
        let mut a = SuffStats::from_uv(1.25, 5.0);
        a.horizon = 5.0;
        let mut b = SuffStats::from_uv(-0.5, 0.75);
        b.mode = StatMode::Discretized(100);
        b.x0 = 1.0;
        let data = Dataset::new(vec![a, b]).unwrap();
        let mut buf = Vec::new();
        write_header(&mut buf, &[("seed", "3".into())]).unwrap();
        write_stats_csv(&mut buf, &data).unwrap();
        let back = read_stats_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
        assert!(read_stats_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_stats_csv("i,x0,T,U,V,mode,m\n1,0,5,x,5,exact,0\n".as_bytes()).is_err());
    }
}
