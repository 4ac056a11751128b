//! Fixed-precision formatting shared by every CSV writer.

/// 17 significant digits in scientific notation, so values round-trip and
/// files diff cleanly across platforms.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // fold -0.0
        return format!("{:.16e}", 0.0f64);
    }
    format!("{:.16e}", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }
}
