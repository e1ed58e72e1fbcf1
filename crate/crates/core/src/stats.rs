//! Small numerical helpers: order-stable summation and straight-line fits.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// length, so the result is independent of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and standard error of the mean (`s/√N`, unbiased `s`).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 0, "mean of an empty sample");
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Binomial standard error `sqrt(p(1-p)/N)`.
pub fn binomial_se(fraction: f64, samples: usize) -> f64 {
    (fraction * (1.0 - fraction) / samples as f64).sqrt()
}

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination, clamped to `[0, 1]`.
    pub r2: f64,
    /// Root-mean-square residual.
    pub rms: f64,
    pub points: usize,
}

/// Fits a line through `(x, y)` pairs. Returns `None` with fewer than two
/// points or when every `x` coincides.
pub fn fit_line<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Option<LineFit> {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    let pts: Vec<(f64, f64)> = points.into_iter().collect();
    for &(x, y) in &pts {
        n += 1;
        sx += x;
        sy += y;
    }
    if n < 2 {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = (syy - slope * sxy).max(0.0);
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Some(LineFit {
        slope,
        intercept,
        r2,
        rms: (sse / n as f64).sqrt(),
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_for_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn exact_line() {
        let f = fit_line((0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64))).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 3.0).abs() < 1e-13);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_line([(1.0, 2.0)]).is_none());
        assert!(fit_line([(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 1.0, 1.0]);
        assert_eq!((m, se), (1.0, 0.0));
        let (m, se) = mean_and_se(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
