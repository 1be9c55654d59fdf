//! Batch-means estimators for ratios of sums.

/// Estimate of `Σ num / Σ den` with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `batches` holds per-batch `(numerator, denominator)` sums.
pub fn ratio_estimate(batches: &[(f64, f64)]) -> RatioEstimate {
    let b = batches.len() as f64;
    let num: f64 = batches.iter().map(|x| x.0).sum();
    let den: f64 = batches.iter().map(|x| x.1).sum();
    let value = num / den;
    if batches.len() < 2 {
        return RatioEstimate { value, stderr: f64::NAN };
    }
    let mean_den = den / b;
    let ss: f64 = batches
        .iter()
        .map(|(n, d)| {
            let r = n - value * d;
            r * r
        })
        .sum();
    RatioEstimate {
        value,
        stderr: (ss / (b * (b - 1.0))).sqrt() / mean_den,
    }
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Splits `0..n` into `b` contiguous, nearly equal ranges.
pub fn batch_ranges(n: usize, b: usize) -> Vec<std::ops::Range<usize>> {
    let b = b.min(n).max(1);
    (0..b).map(|i| (i * n / b)..((i + 1) * n / b)).collect()
}
