//! Fixed-precision number rendering shared by answer templates and reports.

/// Renders `x` with `decimals` digits after the point.
///
/// Rounding is half-to-even on the exact binary value, which is what the
/// standard formatter implements; `format_fixed(0.125, 2)` is `"0.12"`.
/// Negative zero renders as `"0.0…"`.
pub fn format_fixed(x: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, x);
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

#[cfg(test)]
mod tests {
    use super::format_fixed;

    #[test]
    fn half_even_on_exact_ties() {
        assert_eq!(format_fixed(0.125, 2), "0.12");
        assert_eq!(format_fixed(0.375, 2), "0.38");
        assert_eq!(format_fixed(2.5, 0), "2");
        assert_eq!(format_fixed(0.25, 1), "0.2");
    }

    #[test]
    fn pads_and_strips_negative_zero() {
        assert_eq!(format_fixed(1.0, 3), "1.000");
        assert_eq!(format_fixed(-0.0001, 3), "0.000");
        assert_eq!(format_fixed(-0.5, 1), "-0.5");
    }
}
