use serde::{Deserialize, Serialize};

/// A growth-rate statistic in nats per step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub value: f64,
    pub stderr: f64,
    pub horizon: usize,
    pub repetitions: usize,
}

impl GrowthEstimate {
    pub fn exact(value: f64, horizon: usize) -> Self {
        GrowthEstimate { value, stderr: 0.0, horizon, repetitions: 1 }
    }

    /// Mean and standard error (sample sd / √reps) of independent
    /// per-repetition values.
    pub fn from_samples(samples: &[f64], horizon: usize) -> Self {
        let (value, stderr) = mean_stderr(samples);
        GrowthEstimate { value, stderr, horizon, repetitions: samples.len() }
    }

    /// `sqrt(s1² + s2²)`, the error scale for comparing two estimates.
    pub fn combined_stderr(&self, other: &GrowthEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// Whether `|self − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let var = compensated_sum(xs.iter().map(|x| (x - m).powi(2))) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Mean with the standard error of `batches` contiguous batch means, for
/// serially correlated sequences.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    let b = batches.min(n);
    if b < 2 {
        return (m, 0.0);
    }
    let means: Vec<f64> = (0..b)
        .map(|i| {
            let lo = i * n / b;
            let hi = (i + 1) * n / b;
            mean(&xs[lo..hi])
        })
        .collect();
    (m, mean_stderr(&means).1)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_of_known_sample() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sd = sqrt(5/3), stderr = sd / 2
        assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn batch_means_of_constant_sequence() {
        let (m, s) = batch_means(&[0.5; 100], 20);
        assert_eq!((m, s), (0.5, 0.0));
    }
}
