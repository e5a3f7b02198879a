//! Small shared helpers.

/// Linear-interpolation empirical quantile (R type 7) of an already sorted
/// slice. `p` is clamped to `[0, 1]`.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let p = p.clamp(0.0, 1.0);
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Quantile of an unsorted slice; sorts a copy.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

/// FNV-1a over bytes; used to fingerprint configurations in model metadata.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_matches_uniform_grid() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        for &p in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            assert!((quantile_sorted(&grid, p) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_single_element() {
        assert_eq!(quantile(&[3.5], 0.7), 3.5);
    }

    #[test]
    fn fnv_differs_on_input() {
        assert_ne!(fnv1a(b"a"), fnv1a(b"b"));
    }
}
