//! Largest-remainder apportionment, shared by class counts and splits.

use crate::error::{Error, Result};

/// Quotas this close to an integer are treated as exact.
const SNAP: f64 = 1e-9;

/// Splits `total` into integer parts proportional to `weights`.
///
/// Every part gets the floor of its quota; the leftover units go to the
/// largest fractional remainders, ties going to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::Argument("no weights to apportion".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Argument(format!("weights must be finite and non-negative: {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Argument("weights sum to zero".into()));
    }
    let mut parts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let quota = w / sum * total as f64;
        let nearest = quota.round();
        let quota = if (quota - nearest).abs() < SNAP { nearest } else { quota };
        let floor = quota.floor();
        parts.push(floor as usize);
        remainders.push((quota - floor, i));
    }
    let assigned: usize = parts.iter().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn demographic_counts() {
        let counts = largest_remainder(1629, &[0.570, 0.082, 0.347]).unwrap();
        assert_eq!(counts, vec![929, 134, 566]);
    }

    #[test]
    fn split_ratios() {
        let r = [0.64, 0.16, 0.20];
        assert_eq!(largest_remainder(25, &r).unwrap(), vec![16, 4, 5]);
        assert_eq!(largest_remainder(1, &r).unwrap(), vec![1, 0, 0]);
        assert_eq!(largest_remainder(0, &r).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(largest_remainder(1, &[1.0, 1.0]).unwrap(), vec![1, 0]);
        assert_eq!(largest_remainder(2, &[1.0, 1.0, 1.0]).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(largest_remainder(3, &[]).is_err());
        assert!(largest_remainder(3, &[0.0, 0.0]).is_err());
        assert!(largest_remainder(3, &[1.0, -0.5]).is_err());
        assert!(largest_remainder(3, &[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn parts_sum_and_stay_within_one_of_quota(
            total in 0usize..5000,
            weights in prop::collection::vec(0.01f64..10.0, 1..8),
        ) {
            let parts = largest_remainder(total, &weights).unwrap();
            prop_assert_eq!(parts.iter().sum::<usize>(), total);
            let sum: f64 = weights.iter().sum();
            for (p, w) in parts.iter().zip(&weights) {
                let quota = w / sum * total as f64;
                prop_assert!((*p as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }
    }
}
