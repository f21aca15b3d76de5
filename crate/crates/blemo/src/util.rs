//! Small shared helpers.

/// `n` evenly spaced values from `a` to `b` inclusive; `n == 1` gives `[a]`.
pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Quantized key for duplicate detection at 1e-12 resolution.
pub(crate) fn grid_key(x: &[f64]) -> Vec<i64> {
    x.iter().map(|v| (v / 1e-12).round() as i64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints_and_single_point() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.25, 9.0, 1), vec![0.25]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }

    #[test]
    fn grid_key_separates_values_coarser_than_the_resolution() {
        assert_eq!(grid_key(&[0.5]), grid_key(&[0.5 + 1e-13]));
        assert_ne!(grid_key(&[0.5]), grid_key(&[0.5 + 1e-11]));
    }
}
