//! Monte-Carlo bookkeeping: running means and standard errors.

use serde::Serialize;

/// Welford accumulator for the mean and variance of a scalar sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Combines two accumulators (Chan et al. parallel update).
    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// An empirical estimate compared with an exact value.
#[derive(Clone, Debug, Serialize)]
pub struct MomentCheck {
    pub label: String,
    pub empirical: f64,
    pub exact: f64,
    pub std_err: f64,
}

impl MomentCheck {
    /// Discrepancy in units of the Monte-Carlo standard error.
    ///
    /// A zero standard error (degenerate estimator) yields zero when the
    /// values agree to rounding and infinity otherwise.
    pub fn z_score(&self) -> f64 {
        let diff = (self.empirical - self.exact).abs();
        if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, n_se: f64) -> bool {
        self.z_score() <= n_se
    }
}

/// Largest z-score in a collection of checks.
pub fn max_z_score(checks: &[MomentCheck]) -> f64 {
    checks.iter().map(MomentCheck::z_score).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25, 0.0];
        let mut acc = RunningMoments::new();
        xs.iter().for_each(|&x| acc.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut all = RunningMoments::new();
        xs.iter().for_each(|&x| all.push(x));
        let mut left = RunningMoments::new();
        let mut right = RunningMoments::new();
        xs[..17].iter().for_each(|&x| left.push(x));
        xs[17..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        assert_eq!(left.count(), all.count());
        assert!((left.mean() - all.mean()).abs() < 1e-14);
        assert!((left.variance() - all.variance()).abs() < 1e-13);
    }

    #[test]
    fn degenerate_z_score() {
        let check = MomentCheck { label: "x".into(), empirical: 1.0, exact: 1.0, std_err: 0.0 };
        assert_eq!(check.z_score(), 0.0);
        let check = MomentCheck { label: "x".into(), empirical: 1.0, exact: 0.5, std_err: 0.0 };
        assert!(check.z_score().is_infinite());
    }
}
