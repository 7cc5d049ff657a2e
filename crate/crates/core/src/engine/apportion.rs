use crate::error::{Error, Result};

use super::WEIGHT_SUM_TOLERANCE;

/// Largest-remainder apportionment of `total` integer units to `weights`.
///
/// Every entry receives `floor(w_i * total)`; the leftover units go to the
/// largest fractional remainders, ties resolved in favour of the lower index.
pub fn apportion_counts(weights: &[f64], total: u64) -> Result<Vec<u64>> {
    if total < 1 {
        return Err(Error::domain("apportionment total must be at least 1"));
    }
    if weights.is_empty() {
        return Err(Error::domain("no weights to apportion over"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::domain(format!("weights must be non-negative, got {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::domain(format!("weights sum to {sum}, not 1")));
    }

    let n = total as f64;
    let mut counts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned: u64 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let exact = w / sum * n;
        let base = exact.floor();
        counts.push(base as u64);
        assigned += base as u64;
        remainders.push((exact - base, i));
    }
    // Float rounding can push the floors past the total by a unit.
    while assigned > total {
        let (_, i) = remainders
            .iter()
            .copied()
            .filter(|&(_, i)| counts[i] > 0)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("some count is positive when the floors exceed the total");
        counts[i] -= 1;
        assigned -= 1;
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = total - assigned;
    let mut k = 0;
    while leftover > 0 {
        counts[remainders[k % remainders.len()].1] += 1;
        leftover -= 1;
        k += 1;
    }
    Ok(counts)
}
