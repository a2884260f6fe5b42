//! Plain-text output helpers shared by the report writers.

/// Decimal float with 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// Comment lines (`# ...`) echoing a configuration and the crate version.
pub fn echo_lines(echo: Option<&str>) -> String {
    let mut s = format!("# topodeg {}\n", crate::VERSION);
    if let Some(e) = echo {
        for line in e.lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(float(1.0), "1.0000000000000000e0");
    }
}
