//! Number formatting for tabular output.

/// How floating-point values are rendered in emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Six significant digits.
    #[default]
    Significant6,
    /// Shortest representation that round-trips exactly.
    Full,
}

impl Precision {
    pub fn format(self, x: f64) -> String {
        match self {
            Precision::Full => x.to_string(),
            Precision::Significant6 => {
                if !x.is_finite() {
                    return x.to_string();
                }
                let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
                // avoid "-0"
                if rounded == 0.0 {
                    "0".to_string()
                } else {
                    rounded.to_string()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Precision;

    #[test]
    fn six_significant_digits() {
        let p = Precision::Significant6;
        assert_eq!(p.format(124.36726), "124.367");
        assert_eq!(p.format(0.000025000001), "0.000025");
        assert_eq!(p.format(-0.0), "0");
        assert_eq!(p.format(1234567.0), "1234570");
        assert_eq!(p.format(f64::NAN), "NaN");
        assert_eq!(Precision::Full.format(0.1 + 0.2), "0.30000000000000004");
    }
}
