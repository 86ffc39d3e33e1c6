//! Number formatting shared by every CSV writer.
//!
//! Values are written with 17 significant digits in scientific notation,
//! which round-trips any `f64` and does not depend on the platform's locale.

/// Formats `v` with 17 significant digits, e.g. `1.2500000000000000e-1`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Joins values with `,` using [`fmt_f64`].
pub fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(",")
}
