//! Small statistics toolkit: order-independent sums, blocked error bars,
//! jackknife, correlation coefficients and least-squares lines.

/// Pairwise summation; error grows like `log n` and the result does not
/// depend on how the caller split the data into chunks of the same order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// A value with a one-sigma statistical error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, error: 0.0 }
    }

    /// `|value - reference|` in units of the error (infinite when the error
    /// is zero and the values differ).
    pub fn pull(&self, reference: f64) -> f64 {
        let d = (self.value - reference).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.error
        }
    }
}

/// Splits `n` items into `blocks` contiguous ranges of near-equal size.
pub fn block_ranges(n: usize, blocks: usize) -> Vec<std::ops::Range<usize>> {
    let blocks = blocks.clamp(1, n.max(1));
    (0..blocks)
        .map(|b| (b * n / blocks)..((b + 1) * n / blocks))
        .collect()
}

/// Mean with the standard error of the block means.
pub fn blocked_mean(xs: &[f64], blocks: usize) -> Estimate {
    let value = mean(xs);
    let ranges = block_ranges(xs.len(), blocks);
    if ranges.len() < 2 {
        return Estimate { value, error: f64::NAN };
    }
    let means: Vec<f64> = ranges.iter().map(|r| mean(&xs[r.clone()])).collect();
    Estimate {
        value,
        error: (variance(&means) / means.len() as f64).sqrt(),
    }
}

/// Delete-one-block jackknife of a statistic computed from a subset of rows.
///
/// `stat` receives the indices of the rows to use.
pub fn jackknife<F>(n: usize, blocks: usize, stat: F) -> Estimate
where
    F: Fn(&mut dyn Iterator<Item = usize>) -> f64,
{
    let value = stat(&mut (0..n));
    let ranges = block_ranges(n, blocks);
    let b = ranges.len();
    if b < 2 {
        return Estimate { value, error: f64::NAN };
    }
    let partial: Vec<f64> = ranges
        .iter()
        .map(|skip| stat(&mut (0..n).filter(|i| !skip.contains(i))))
        .collect();
    let m = mean(&partial);
    let spread: f64 = partial.iter().map(|p| (p - m) * (p - m)).sum();
    Estimate {
        value,
        error: ((b - 1) as f64 / b as f64 * spread).sqrt(),
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (ties share the mean rank).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares line `y = a + b x`; returns `(a, b, stderr of b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (intercept, slope, se)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jackknife_of_mean_matches_blocked_error() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64).collect();
        let jk = jackknife(xs.len(), 8, |it| {
            let v: Vec<f64> = it.map(|i| xs[i]).collect();
            mean(&v)
        });
        let bl = blocked_mean(&xs, 8);
        assert!((jk.value - bl.value).abs() < 1e-12);
        assert!((jk.error - bl.error).abs() < 1e-10);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.25 * v).collect();
        let (a, b, _) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-12 && (b + 0.25).abs() < 1e-12);
    }
}
