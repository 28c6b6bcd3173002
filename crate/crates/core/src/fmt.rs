//! Number formatting shared by every machine-readable artifact.

/// 17 significant digits, scientific notation; parses back to the same bits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// 6 significant digits for human summaries.
pub fn short(x: f64) -> String {
    format!("{x:.5e}")
}
