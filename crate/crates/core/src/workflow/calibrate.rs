use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard-normal quantile for a one-sided bound at `confidence`.
pub fn one_sided_z(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(confidence)
}

/// Wilson score upper bound on a binomial rate with `errors` of `n`.
pub fn wilson_upper(errors: u64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre + spread) / (1.0 + z2 / n)).min(1.0)
}

/// Smallest score threshold whose accepted set (score >= threshold) has a
/// one-sided Wilson upper error bound at or below `target_error`.
/// `None` when no threshold qualifies.
pub fn calibrate_threshold(sample: &[(f64, bool)], target_error: f64, confidence: f64) -> Result<Option<f64>> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("calibration sample is empty".into()));
    }
    if !(target_error > 0.0 && target_error <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target error must lie in (0, 1], got {target_error}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let z = one_sided_z(confidence);
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut n, mut errors) = (0u64, 0u64);
    let mut best = None;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            n += 1;
            errors += u64::from(!sorted[i].1);
            i += 1;
        }
        if wilson_upper(errors, n, z) <= target_error {
            best = Some(threshold);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_matches_table() {
        assert!((one_sided_z(0.95) - 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn zero_errors_in_200() {
        let sample: Vec<(f64, bool)> = (0..200).map(|i| (0.5 + i as f64 / 1000.0, true)).collect();
        // Closed form for zero errors: z² / (n + z²).
        let z = 1.6448536269514722f64;
        let bound = z * z / (200.0 + z * z);
        assert!((wilson_upper(0, 200, z) - bound).abs() < 1e-12);
        assert!(bound <= 0.03);
        assert_eq!(calibrate_threshold(&sample, 0.03, 0.95).unwrap(), Some(0.5));
        // 0.005 is below the zero-error floor for n = 200, and every smaller prefix is worse.
        assert!(bound > 0.005);
        assert_eq!(calibrate_threshold(&sample, 0.005, 0.95).unwrap(), None);
    }

    #[test]
    fn vacuous_target_takes_min_score() {
        let sample = vec![(0.9, false), (0.2, false), (0.4, true)];
        assert_eq!(calibrate_threshold(&sample, 1.0, 0.95).unwrap(), Some(0.2));
    }

    #[test]
    fn top_error_blocks_small_targets() {
        let mut sample: Vec<(f64, bool)> = (0..50).map(|i| (i as f64 / 100.0, true)).collect();
        sample.push((0.99, false));
        assert_eq!(calibrate_threshold(&sample, 0.03, 0.95).unwrap(), None);
    }

    #[test]
    fn wilson_against_direct_formula() {
        // p = 3/40, z = 1.96
        let (e, n, z) = (3.0f64, 40.0f64, 1.96f64);
        let p = e / n;
        let expected = (p + z * z / (2.0 * n) + z * ((p * (1.0 - p) + z * z / (4.0 * n)) / n).sqrt()) / (1.0 + z * z / n);
        assert!((wilson_upper(3, 40, z) - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(calibrate_threshold(&[], 0.03, 0.95).is_err());
        assert!(calibrate_threshold(&[(0.5, true)], 0.0, 0.95).is_err());
        assert!(calibrate_threshold(&[(0.5, true)], 0.03, 1.0).is_err());
    }
}
