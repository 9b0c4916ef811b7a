//! Bootstrap summaries over seeds.

use rand::Rng;
use serde::Serialize;
use tradeoff_core::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Standard deviation of the bootstrap means.
    pub std_error: f64,
    /// 5% and 95% quantiles of the bootstrap means.
    pub q05: f64,
    pub q95: f64,
    pub n: usize,
}

impl Summary {
    /// Whether the 90% intervals of `self` and `other` are disjoint.
    pub fn separated_from(&self, other: &Summary) -> bool {
        self.q95 < other.q05 || other.q95 < self.q05
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples `values` with replacement `resamples` times.
///
/// Panics on empty input.
pub fn bootstrap(values: &[f64], resamples: usize, stream: RngStream) -> Summary {
    assert!(!values.is_empty(), "bootstrap of an empty sample");
    let m = mean(values);
    let n = values.len();
    if n == 1 || resamples == 0 {
        return Summary {
            mean: m,
            std_error: 0.0,
            q05: m,
            q95: m,
            n,
        };
    }
    let mut rng = stream.rng();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let bm = mean(&means);
    let sd = (means.iter().map(|x| (x - bm) * (x - bm)).sum::<f64>() / (resamples.max(2) - 1) as f64).sqrt();
    means.sort_by(f64::total_cmp);
    Summary {
        mean: m,
        std_error: sd,
        q05: quantile(&means, 0.05),
        q95: quantile(&means, 0.95),
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_has_no_spread() {
        let s = bootstrap(&[2.0; 10], 200, RngStream::from_seed(0));
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std_error, 0.0);
        assert_eq!((s.q05, s.q95), (2.0, 2.0));
    }

    #[test]
    fn bootstrap_se_tracks_the_analytic_value() {
        // SE of the mean of 0..100 is sd / sqrt(n) with the 1/n variance
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        let want = (xs.iter().map(|x| (x - 49.5) * (x - 49.5)).sum::<f64>() / 100.0).sqrt() / 10.0;
        let s = bootstrap(&xs, 4000, RngStream::from_seed(3));
        assert!((s.std_error - want).abs() < 0.05 * want, "{} vs {want}", s.std_error);
        assert!(s.q05 < s.mean && s.mean < s.q95);
    }

    #[test]
    fn replays() {
        let xs = [1.0, 5.0, 2.0, 8.0];
        assert_eq!(bootstrap(&xs, 50, RngStream::new(1, 2)), bootstrap(&xs, 50, RngStream::new(1, 2)));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.05), 0.5);
        assert_eq!(quantile(&[3.0], 0.95), 3.0);
    }
}
