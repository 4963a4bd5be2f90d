//! Tolerant float comparisons used wherever products or utilities are ranked.

/// Default tolerance for "equal product" checks.
pub const EPSILON: f64 = 1e-9;

/// Relative-then-absolute equality.
pub fn approx_eq(x: f64, y: f64, eps: f64) -> bool {
    let diff = (x - y).abs();
    diff <= eps * x.abs().max(y.abs()) || diff <= eps
}

/// `x > y` by more than the tolerance.
pub fn definitely_gt(x: f64, y: f64, eps: f64) -> bool {
    x > y && !approx_eq(x, y, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_and_absolute() {
        assert!(approx_eq(1e12, 1e12 + 1.0, EPSILON));
        assert!(!approx_eq(1.0, 1.0 + 1e-6, EPSILON));
        assert!(approx_eq(0.0, 1e-10, EPSILON));
        assert!(definitely_gt(67.5, 60.0, EPSILON));
        assert!(!definitely_gt(67.5 + 1e-12, 67.5, EPSILON));
    }
}
