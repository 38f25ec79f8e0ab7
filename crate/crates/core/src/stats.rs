//! Small statistical helpers shared by the experiment harness and tests.

/// Kahan compensated accumulator. Trials are summed in a fixed order so the
/// result is independent of how the work was scheduled.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut acc = KahanSum::default();
    for &x in xs {
        acc.add(x);
    }
    acc.value() / xs.len() as f64
}

/// Population (1/n) variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = KahanSum::default();
    for &x in xs {
        acc.add((x - m) * (x - m));
    }
    acc.value() / xs.len() as f64
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of an empirical frequency `p̂` over `n` trials.
pub fn frequency_standard_error(p_hat: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// 95% normal-approximation half-width for a frequency.
pub fn frequency_ci_half_width(p_hat: f64, n: u64) -> f64 {
    1.96 * frequency_standard_error(p_hat, n)
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n − F|` against a CDF.
/// Samples need not be sorted.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("samples must not be NaN"));
    let n = xs.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let upper = ((i + 1) as f64 / n - f).abs();
        let lower = (f - i as f64 / n).abs();
        d = d.max(upper).max(lower);
    }
    d
}

/// Asymptotic KS critical value at significance `alpha`:
/// `sqrt(-ln(alpha/2) / (2n))`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    assert!(n > 0 && alpha > 0.0 && alpha < 1.0);
    (-(alpha / 2.0).ln() / (2.0 * n as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_sums_small_terms_accurately() {
        let mut acc = KahanSum::default();
        acc.add(1.0);
        for _ in 0..1_000_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-10)).abs() < 1e-14);
    }

    #[test]
    fn mean_and_variance() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert_eq!(variance(&xs), 1.25);
    }

    #[test]
    fn ks_statistic_of_exact_uniform_grid_is_small() {
        // Midpoints of n equal bins against U(0,1): D = 1/(2n).
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn ks_critical_value_at_one_percent() {
        // 1.6276/sqrt(n) at alpha = 0.01.
        let c = ks_critical_value(10_000, 0.01);
        assert!((c - 0.016276).abs() < 1e-5, "c = {c}");
    }

    #[test]
    fn ks_rejects_shifted_distribution() {
        let n = 1_000;
        let xs: Vec<f64> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64) * 0.8).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d > ks_critical_value(n, 0.01));
    }
}
