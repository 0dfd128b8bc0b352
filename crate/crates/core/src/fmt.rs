//! Number formatting for text outputs.

/// Formats `x` rounded to 9 significant digits, without trailing zeros.
///
/// Non-finite values print as `nan`, `inf` and `-inf`.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn rounds_to_nine_digits() {
        assert_eq!(sig9(0.15), "0.15");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789012.0), "123456789000");
        assert_eq!(sig9(-2.5e-7), "-0.00000025");
        assert_eq!(sig9(-0.0), "0");
        assert_eq!(sig9(f64::NAN), "nan");
        assert_eq!(sig9(f64::NEG_INFINITY), "-inf");
    }
}
