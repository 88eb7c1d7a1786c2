//! Exporters and importers: DSS circuit text, grid-tables JSON, GeoJSON
//! and ensemble statistics CSV.

pub mod dss;
pub mod geojson;
pub mod stats;
pub mod tables;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error("line {line}: unsupported statement `{stmt}`")]
    UnsupportedStatement { line: usize, stmt: String },
    #[error("line {line}: {msg}")]
    MalformedStatement { line: usize, msg: String },
    #[error("ensemble holds no samples")]
    EmptyEnsemble,
    #[error(transparent)]
    Hdi(#[from] crate::bayes::BayesError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Render with 6 significant digits, plain decimal notation, trailing
/// zeros trimmed ("13.8", "0.123457").
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let x = if exp > 5 {
        // above 1e6 there is no fractional digit left to carry the rounding
        let scale = 10f64.powi(exp - 5);
        (x / scale).round() * scale
    } else {
        x
    };
    let decimals = (5 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.123456789), "0.123457");
        assert_eq!(fmt_sig(13.8), "13.8");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1234567.0), "1234570");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-0.000123456789), "-0.000123457");
        assert_eq!(fmt_sig(100.0), "100");
        assert_eq!(fmt_sig(0.22), "0.22");
    }

    #[test]
    fn reformat_is_stable() {
        for &x in &[0.123456789, 13.8, 1.0e-7, 987654.321, 3.3333333] {
            let once = fmt_sig(x);
            let twice = fmt_sig(once.parse::<f64>().unwrap());
            assert_eq!(once, twice);
        }
    }
}
