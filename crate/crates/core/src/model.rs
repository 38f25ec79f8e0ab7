//! Signal and measurement model.
//!
//! A support is a strictly increasing tuple of 1-based positions, the object
//! being estimated. A sparse signal pairs a support with its nonzero
//! coefficients, all of magnitude at least `theta_min`. Measurements are
//! `y = Φ_s θ_s + ε` with `ε ~ N(0, σ² I)`.

use serde::{Deserialize, Serialize};

use crate::numerics::{Mat, QrFactor};
use crate::rng::GaussianStream;
use crate::{Error, Result};

/// Sorted tuple of 1-based indices identifying the nonzero positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Support {
    p: usize,
    indices: Vec<usize>,
}

impl Support {
    pub fn new(p: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.len() > p {
            return Err(Error::InvalidSupport {
                reason: format!("need 1 <= k <= p, got k = {}, p = {p}", indices.len()),
            });
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSupport {
                    reason: format!("indices must be strictly increasing, got {indices:?}"),
                });
            }
        }
        if indices[0] < 1 || *indices.last().unwrap() > p {
            return Err(Error::InvalidSupport {
                reason: format!("indices must lie in 1..={p}, got {indices:?}"),
            });
        }
        Ok(Self { p, indices })
    }

    /// The canonical first support `(1, …, k)`.
    pub fn first(p: usize, k: usize) -> Result<Self> {
        Self::new(p, (1..=k).collect())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl std::fmt::Display for Support {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Exact-match loss: 0 iff the supports are identical.
pub fn rho1(s: &Support, s_prime: &Support) -> Result<u8> {
    check_comparable(s, s_prime)?;
    Ok(u8::from(s.indices != s_prime.indices))
}

/// Squared `ℓ2` distance between the index tuples.
pub fn rho2(s: &Support, s_prime: &Support) -> Result<f64> {
    check_comparable(s, s_prime)?;
    Ok(s.indices
        .iter()
        .zip(&s_prime.indices)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum())
}

fn check_comparable(s: &Support, s_prime: &Support) -> Result<()> {
    if s.p != s_prime.p {
        return Err(Error::DimensionMismatch {
            context: "support metric (ambient dimension)",
            expected: s.p,
            got: s_prime.p,
        });
    }
    if s.k() != s_prime.k() {
        return Err(Error::DimensionMismatch {
            context: "support metric (sparsity)",
            expected: s.k(),
            got: s_prime.k(),
        });
    }
    Ok(())
}

/// A `k`-sparse signal in the class `C(theta_min)`: every nonzero coefficient
/// has magnitude at least `theta_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal {
    p: usize,
    support: Support,
    coefficients: Vec<f64>,
    theta_min: f64,
}

impl SparseSignal {
    pub fn new(support: Support, coefficients: Vec<f64>, theta_min: f64) -> Result<Self> {
        if !(theta_min > 0.0) || !theta_min.is_finite() {
            return Err(Error::InvalidSignal {
                reason: format!("theta_min must be positive and finite, got {theta_min}"),
            });
        }
        if coefficients.len() != support.k() {
            return Err(Error::InvalidSignal {
                reason: format!(
                    "need one coefficient per support index: {} vs k = {}",
                    coefficients.len(),
                    support.k()
                ),
            });
        }
        for &c in &coefficients {
            if !c.is_finite() || c.abs() < theta_min {
                return Err(Error::InvalidSignal {
                    reason: format!("coefficient {c} is below theta_min = {theta_min}"),
                });
            }
        }
        Ok(Self {
            p: support.p(),
            support,
            coefficients,
            theta_min,
        })
    }

    /// All coefficients equal to `theta_min` on the canonical support
    /// `(1, …, k)`: the worst case within the class for distinguishability.
    pub fn flat(p: usize, k: usize, theta_min: f64) -> Result<Self> {
        Self::new(Support::first(p, k)?, vec![theta_min; k], theta_min)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.support.k()
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }
}

/// Measurement matrix plus noise level. `sigma_sq = 0` is allowed and yields
/// noiseless measurements; the bounds all require strictly positive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetup {
    phi: Mat,
    sigma_sq: f64,
    k: usize,
}

impl MeasurementSetup {
    pub fn new(phi: Mat, sigma_sq: f64, k: usize) -> Result<Self> {
        if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidConfig {
                reason: format!("sigma_sq must be finite and nonnegative, got {sigma_sq}"),
            });
        }
        if k == 0 || k > phi.cols() {
            return Err(Error::InvalidConfig {
                reason: format!("need 1 <= k <= p, got k = {k}, p = {}", phi.cols()),
            });
        }
        Ok(Self { phi, sigma_sq, k })
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.phi.rows()
    }

    pub fn p(&self) -> usize {
        self.phi.cols()
    }

    /// The column submatrix `Φ_s`.
    pub fn submatrix(&self, s: &Support) -> Result<Mat> {
        self.phi.select_columns(s.indices())
    }

    /// Noiseless image `x = Φ_s θ_s`.
    pub fn noiseless_measurement(&self, signal: &SparseSignal) -> Result<Vec<f64>> {
        if signal.p() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "noiseless_measurement",
                expected: self.p(),
                got: signal.p(),
            });
        }
        self.submatrix(signal.support())?.mul_vec(signal.coefficients())
    }
}

/// `m × p` matrix of i.i.d. standard normal entries, filled row-major from
/// the seeded stream. Identical seeds give bitwise-identical matrices.
pub fn sample_gaussian_ensemble(m: usize, p: usize, seed: u64) -> Mat {
    assert!(m >= 1 && p >= 1);
    let mut g = GaussianStream::new(seed);
    let mut phi = Mat::zeros(m, p);
    for i in 0..m {
        for j in 0..p {
            phi[(i, j)] = g.standard_normal();
        }
    }
    phi
}

/// Noisy measurement `y = Φ_s θ_s + ε`, `ε ~ N(0, σ² I)`, with the noise
/// drawn from the seeded stream. `sigma_sq = 0` returns the noiseless image
/// exactly.
pub fn measure(setup: &MeasurementSetup, signal: &SparseSignal, seed: u64) -> Result<Vec<f64>> {
    let mut y = setup.noiseless_measurement(signal)?;
    add_noise(&mut y, setup.sigma_sq(), seed);
    Ok(y)
}

pub(crate) fn add_noise(y: &mut [f64], sigma_sq: f64, seed: u64) {
    if sigma_sq == 0.0 {
        return;
    }
    let sigma = sigma_sq.sqrt();
    let mut g = GaussianStream::new(seed);
    for v in y.iter_mut() {
        *v += sigma * g.standard_normal();
    }
}

/// Exact binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic stream over all `C(p, k)` supports.
///
/// Errors with `CapExceeded` up front when the count is above `cap`, so
/// exhaustive consumers fail loudly instead of running forever.
pub fn enumerate_supports(p: usize, k: usize, cap: u64) -> Result<SupportIter> {
    if k == 0 || k > p {
        return Err(Error::InvalidSupport {
            reason: format!("need 1 <= k <= p, got k = {k}, p = {p}"),
        });
    }
    let count = binomial(p, k);
    if count > u128::from(cap) {
        return Err(Error::CapExceeded {
            required: count,
            cap,
        });
    }
    Ok(SupportIter {
        p,
        k,
        next: Some((1..=k).collect()),
    })
}

pub struct SupportIter {
    p: usize,
    k: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for SupportIter {
    type Item = Support;

    fn next(&mut self) -> Option<Support> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        // Rightmost index that can still be advanced.
        let mut pos = self.k;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            if succ[pos] < self.p - (self.k - 1 - pos) {
                succ[pos] += 1;
                for j in pos + 1..self.k {
                    succ[j] = succ[j - 1] + 1;
                }
                self.next = Some(succ);
                break;
            }
        }
        Some(Support {
            p: self.p,
            indices: current,
        })
    }
}

/// Outcome of the advisory 2k-independence check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub m: usize,
    pub p: usize,
    pub k: usize,
    pub exhaustive: bool,
    pub subsets_checked: u64,
    /// Every 2k-column subset found rank deficient (1-based indices).
    pub failures: Vec<Vec<usize>>,
}

impl IndependenceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Rank-tests 2k-column submatrices of `Φ`. Exhaustive when `C(p, 2k)` fits
/// inside `max_checks`; otherwise tests `max_checks` uniformly sampled
/// subsets. Advisory only: constructors never run this.
pub fn verify_2k_independence(
    setup: &MeasurementSetup,
    k: usize,
    max_checks: u64,
    seed: u64,
) -> Result<IndependenceReport> {
    let m = setup.m();
    let p = setup.p();
    let two_k = 2 * k;
    if two_k > m {
        return Err(Error::Infeasible { two_k, m });
    }
    if two_k > p {
        return Err(Error::InvalidSupport {
            reason: format!("2k = {two_k} exceeds p = {p}"),
        });
    }
    let total = binomial(p, two_k);
    let mut failures = Vec::new();
    let mut checked = 0u64;
    let exhaustive = total <= u128::from(max_checks);
    let full_rank = |indices: &[usize]| -> Result<bool> {
        let sub = setup.phi().select_columns(indices)?;
        match QrFactor::factor(&sub) {
            Ok(_) => Ok(true),
            Err(Error::RankDeficient { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if exhaustive {
        for s in enumerate_supports(p, two_k, max_checks)? {
            checked += 1;
            if !full_rank(s.indices())? {
                failures.push(s.indices().to_vec());
            }
        }
    } else {
        let mut g = GaussianStream::new(seed);
        let mut pool: Vec<usize> = (1..=p).collect();
        for _ in 0..max_checks {
            // Partial Fisher-Yates: first 2k entries become the sample.
            for i in 0..two_k {
                let j = i + g.below(p - i);
                pool.swap(i, j);
            }
            let mut indices: Vec<usize> = pool[..two_k].to_vec();
            indices.sort_unstable();
            checked += 1;
            if !full_rank(&indices)? {
                failures.push(indices);
            }
        }
    }
    Ok(IndependenceReport {
        m,
        p,
        k,
        exhaustive,
        subsets_checked: checked,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm_sq, residual_norm_sq};

    #[test]
    fn support_validation() {
        assert!(Support::new(5, vec![1, 3, 5]).is_ok());
        assert!(Support::new(5, vec![3, 1]).is_err());
        assert!(Support::new(5, vec![1, 1]).is_err());
        assert!(Support::new(5, vec![0, 2]).is_err());
        assert!(Support::new(5, vec![4, 6]).is_err());
        assert!(Support::new(5, vec![]).is_err());
    }

    #[test]
    fn rho1_examples() {
        let s = Support::new(6, vec![1, 2, 3]).unwrap();
        let same = Support::new(6, vec![1, 2, 3]).unwrap();
        let diff = Support::new(6, vec![1, 2, 4]).unwrap();
        assert_eq!(rho1(&s, &same).unwrap(), 0);
        assert_eq!(rho1(&s, &diff).unwrap(), 1);
        // rho1 = 0 ⇔ rho2 = 0
        assert_eq!(rho2(&s, &same).unwrap(), 0.0);
        assert!(rho2(&s, &diff).unwrap() > 0.0);
    }

    #[test]
    fn rho2_examples() {
        let s = Support::new(8, vec![1, 2, 3]).unwrap();
        let t = Support::new(8, vec![1, 2, 5]).unwrap();
        assert_eq!(rho2(&s, &t).unwrap(), 4.0);

        // Swap the last index for p: distance (p − k)².
        let p = 11;
        let k = 4;
        let s1 = Support::first(p, k).unwrap();
        let mut idx: Vec<usize> = (1..k).collect();
        idx.push(p);
        let s2 = Support::new(p, idx).unwrap();
        assert_eq!(rho2(&s1, &s2).unwrap(), ((p - k) as f64).powi(2));

        let a = Support::new(9, vec![2, 5]).unwrap();
        let b = Support::new(9, vec![3, 7]).unwrap();
        assert_eq!(rho2(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn rho2_is_a_squared_metric() {
        let supports: Vec<Support> = enumerate_supports(6, 2, 100).unwrap().collect();
        for a in &supports {
            for b in &supports {
                let dab = rho2(a, b).unwrap();
                assert!(dab >= 0.0);
                assert_eq!(dab, rho2(b, a).unwrap());
                assert_eq!(dab == 0.0, a == b);
                for c in &supports {
                    let dac = rho2(a, c).unwrap();
                    let dcb = rho2(c, b).unwrap();
                    assert!(dab <= 2.0 * dac + 2.0 * dcb + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mismatched_metrics_error() {
        let s = Support::new(5, vec![1, 2]).unwrap();
        let t = Support::new(6, vec![1, 2]).unwrap();
        assert!(matches!(rho2(&s, &t), Err(Error::DimensionMismatch { .. })));
        let u = Support::new(5, vec![1, 2, 3]).unwrap();
        assert!(matches!(rho1(&s, &u), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn signal_class_membership_enforced() {
        let s = Support::new(5, vec![1, 4]).unwrap();
        assert!(SparseSignal::new(s.clone(), vec![2.0, -3.0], 2.0).is_ok());
        assert!(SparseSignal::new(s.clone(), vec![1.5, -3.0], 2.0).is_err());
        assert!(SparseSignal::new(s.clone(), vec![2.0], 2.0).is_err());
        assert!(SparseSignal::new(s, vec![2.0, -3.0], 0.0).is_err());
    }

    #[test]
    fn ensemble_is_deterministic_per_seed() {
        let a = sample_gaussian_ensemble(2, 3, 7);
        let b = sample_gaussian_ensemble(2, 3, 7);
        assert_eq!(a, b);
        let c = sample_gaussian_ensemble(2, 3, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn ensemble_moments() {
        let phi = sample_gaussian_ensemble(100, 100, 21);
        let n = 10_000.0;
        let mean = phi.data().iter().sum::<f64>() / n;
        let var = phi.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean = {mean}");
        assert!((var - 1.0).abs() < 0.1, "var = {var}");
    }

    #[test]
    fn column_pair_difference_has_variance_two() {
        let phi = sample_gaussian_ensemble(2_000, 4, 33);
        let ck = phi.column(1);
        let cp = phi.column(3);
        let diffs: Vec<f64> = ck.iter().zip(&cp).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        assert!((var - 2.0).abs() < 0.2, "var = {var}");
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let phi = sample_gaussian_ensemble(6, 5, 3);
        let setup = MeasurementSetup::new(phi, 0.0, 2).unwrap();
        let signal = SparseSignal::flat(5, 2, 1.5).unwrap();
        let y = measure(&setup, &signal, 99).unwrap();
        let x = setup.noiseless_measurement(&signal).unwrap();
        assert_eq!(y, x);
        // Residual against the true submatrix is zero to rounding.
        let sub = setup.submatrix(signal.support()).unwrap();
        let r = residual_norm_sq(&sub, &y).unwrap();
        assert!(r <= 1e-18 * norm_sq(&y));
    }

    #[test]
    fn noise_depends_on_seed() {
        let phi = sample_gaussian_ensemble(6, 5, 3);
        let setup = MeasurementSetup::new(phi, 1.0, 2).unwrap();
        let signal = SparseSignal::flat(5, 2, 1.5).unwrap();
        let y1 = measure(&setup, &signal, 1).unwrap();
        let y1_again = measure(&setup, &signal, 1).unwrap();
        let y2 = measure(&setup, &signal, 2).unwrap();
        assert_eq!(y1, y1_again);
        assert_ne!(y1, y2);
    }

    #[test]
    fn residual_of_noise_concentrates_at_m_minus_k_sigma_sq() {
        let m = 8;
        let k = 2;
        let sigma_sq = 0.5;
        let phi = sample_gaussian_ensemble(m, 6, 41);
        let setup = MeasurementSetup::new(phi, sigma_sq, k).unwrap();
        let signal = SparseSignal::flat(6, k, 2.0).unwrap();
        let sub = setup.submatrix(signal.support()).unwrap();
        let trials = 10_000;
        let mut acc = 0.0;
        for t in 0..trials {
            let y = measure(&setup, &signal, crate::rng::derive_seed(5, t)).unwrap();
            acc += residual_norm_sq(&sub, &y).unwrap();
        }
        let mean = acc / trials as f64;
        let want = (m - k) as f64 * sigma_sq;
        assert!(
            (mean - want).abs() < 0.05 * want,
            "mean = {mean}, want {want}"
        );
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete() {
        let got: Vec<Vec<usize>> = enumerate_supports(4, 2, 100)
            .unwrap()
            .map(|s| s.indices().to_vec())
            .collect();
        assert_eq!(
            got,
            vec![
                vec![1, 2],
                vec![1, 3],
                vec![1, 4],
                vec![2, 3],
                vec![2, 4],
                vec![3, 4]
            ]
        );

        assert_eq!(enumerate_supports(5, 1, 100).unwrap().count(), 5);

        let all: Vec<Support> = enumerate_supports(10, 3, 1_000).unwrap().collect();
        assert_eq!(all.len(), 120);
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 120);
        // Already sorted = lexicographic order.
        assert_eq!(dedup, all);
    }

    #[test]
    fn enumeration_counts_match_binomial_at_desk_scale() {
        for p in 1..=12 {
            for k in 1..=p {
                let n = enumerate_supports(p, k, 1_000_000).unwrap().count();
                assert_eq!(n as u128, binomial(p, k), "p={p} k={k}");
            }
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        assert!(matches!(
            enumerate_supports(10, 3, 100),
            Err(Error::CapExceeded { required: 120, cap: 100 })
        ));
    }

    #[test]
    fn independence_identity_matrix_passes() {
        let setup = MeasurementSetup::new(Mat::identity(6), 1.0, 2).unwrap();
        let report = verify_2k_independence(&setup, 2, 100, 0).unwrap();
        assert!(report.exhaustive);
        assert!(report.passed());
        assert_eq!(report.subsets_checked, 15);
    }

    #[test]
    fn independence_duplicate_columns_fail_with_named_pair() {
        let mut phi = sample_gaussian_ensemble(4, 5, 9);
        for i in 0..4 {
            let v = phi[(i, 1)];
            phi[(i, 3)] = v;
        }
        let setup = MeasurementSetup::new(phi, 1.0, 1).unwrap();
        let report = verify_2k_independence(&setup, 1, 100, 0).unwrap();
        assert!(!report.passed());
        assert!(report.failures.contains(&vec![2, 4]));
    }

    #[test]
    fn independence_gaussian_passes_exhaustively_at_desk_scale() {
        for (m, p, k) in [(6, 9, 3), (8, 12, 3), (4, 12, 2)] {
            let phi = sample_gaussian_ensemble(m, p, 1_000 + m as u64);
            let setup = MeasurementSetup::new(phi, 1.0, k).unwrap();
            let report = verify_2k_independence(&setup, k, 1_000_000, 0).unwrap();
            assert!(report.exhaustive);
            assert!(report.passed(), "({m},{p},{k}): {:?}", report.failures);
        }
    }

    #[test]
    fn independence_infeasible_when_2k_exceeds_m() {
        let setup = MeasurementSetup::new(sample_gaussian_ensemble(3, 8, 1), 1.0, 2).unwrap();
        assert!(matches!(
            verify_2k_independence(&setup, 2, 10, 0),
            Err(Error::Infeasible { two_k: 4, m: 3 })
        ));
    }

    #[test]
    fn independence_sampled_mode_reports_counts() {
        let phi = sample_gaussian_ensemble(8, 20, 2);
        let setup = MeasurementSetup::new(phi, 1.0, 3).unwrap();
        let report = verify_2k_independence(&setup, 3, 50, 7).unwrap();
        assert!(!report.exhaustive);
        assert_eq!(report.subsets_checked, 50);
        assert!(report.passed());
    }
}
