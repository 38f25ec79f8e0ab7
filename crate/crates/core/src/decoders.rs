//! Support estimators.
//!
//! `mle_decode` is the optimal decoder under white Gaussian noise: it scans
//! every `k`-column subspace and returns the one whose projection is closest
//! to the observation. `mce_decode` is the cheap baseline that keeps the `k`
//! columns with the highest absolute correlation to the observation.

use serde::{Deserialize, Serialize};

use crate::model::{enumerate_supports, MeasurementSetup, SparseSignal, Support};
use crate::numerics::{
    dot, least_squares, norm_sq, orthonormal_basis, residual_norm_sq,
    residual_norm_sq_with_basis, Mat,
};
use crate::{Error, Result};

/// Residuals closer than `RESIDUAL_TIE_FACTOR * ‖y‖²` count as ties and are
/// resolved toward the lexicographically smaller support.
pub const RESIDUAL_TIE_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    Mle,
    Mce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub support: Support,
    pub residual_norm_sq: f64,
    /// Least-squares coefficients on the returned support.
    pub coefficients: Vec<f64>,
    pub method: DecodeMethod,
}

fn check_observation(setup: &MeasurementSetup, y: &[f64]) -> Result<()> {
    if y.len() != setup.m() {
        return Err(Error::DimensionMismatch {
            context: "decode observation",
            expected: setup.m(),
            got: y.len(),
        });
    }
    Ok(())
}

fn named_rank_error(e: Error, s: &Support) -> Error {
    match e {
        Error::RankDeficient { support: None } => Error::RankDeficient {
            support: Some(s.indices().to_vec()),
        },
        other => other,
    }
}

/// Exhaustive maximum-likelihood decoding: the support whose column span is
/// closest to `y`. Streams the enumeration, so memory stays `O(k)` no matter
/// how many supports there are.
pub fn mle_decode(
    setup: &MeasurementSetup,
    y: &[f64],
    k: usize,
    cap: u64,
) -> Result<DecodeResult> {
    check_observation(setup, y)?;
    let tie_tol = RESIDUAL_TIE_FACTOR * norm_sq(y);
    let mut best: Option<(Support, f64)> = None;
    for s in enumerate_supports(setup.p(), k, cap)? {
        let sub = setup.submatrix(&s)?;
        let res = residual_norm_sq(&sub, y).map_err(|e| named_rank_error(e, &s))?;
        best = Some(match best {
            None => (s, res),
            Some((bs, br)) => {
                if res < br - tie_tol {
                    (s, res)
                } else {
                    (bs, br)
                }
            }
        });
    }
    let (support, residual) = best.expect("enumeration yields at least one support");
    finish(setup, y, support, residual, DecodeMethod::Mle)
}

/// Maximum-correlation decoding: the `k` indices whose columns have the
/// largest `|⟨φ_i, y⟩|`, ties toward the smaller index. `normalized` divides
/// each score by the column norm.
pub fn mce_decode_with(
    setup: &MeasurementSetup,
    y: &[f64],
    k: usize,
    normalized: bool,
) -> Result<DecodeResult> {
    check_observation(setup, y)?;
    if k == 0 || k > setup.p() {
        return Err(Error::InvalidSupport {
            reason: format!("need 1 <= k <= p, got k = {k}, p = {}", setup.p()),
        });
    }
    let mut scored: Vec<(usize, f64)> = (0..setup.p())
        .map(|j| {
            let col = setup.phi().column(j);
            let mut score = dot(&col, y).abs();
            if normalized {
                let n = norm_sq(&col).sqrt();
                if n > 0.0 {
                    score /= n;
                }
            }
            (j + 1, score)
        })
        .collect();
    // Stable sort by descending score keeps smaller indices first among ties.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("scores are finite"));
    let mut indices: Vec<usize> = scored[..k].iter().map(|&(i, _)| i).collect();
    indices.sort_unstable();
    let support = Support::new(setup.p(), indices)?;
    let sub = setup.submatrix(&support)?;
    let residual = residual_norm_sq(&sub, y).map_err(|e| named_rank_error(e, &support))?;
    finish(setup, y, support, residual, DecodeMethod::Mce)
}

/// [`mce_decode_with`] using plain (unnormalized) correlations.
pub fn mce_decode(setup: &MeasurementSetup, y: &[f64], k: usize) -> Result<DecodeResult> {
    mce_decode_with(setup, y, k, false)
}

fn finish(
    setup: &MeasurementSetup,
    y: &[f64],
    support: Support,
    residual: f64,
    method: DecodeMethod,
) -> Result<DecodeResult> {
    let sub = setup.submatrix(&support)?;
    let coefficients = least_squares(&sub, y).map_err(|e| named_rank_error(e, &support))?;
    Ok(DecodeResult {
        support,
        residual_norm_sq: residual,
        coefficients,
        method,
    })
}

/// Whether the ML rule would pick `s_prime` over the true support given `y`:
/// true iff the observation sits strictly closer to the alternative subspace.
pub fn pairwise_ml_error_event(
    setup: &MeasurementSetup,
    signal: &SparseSignal,
    s_prime: &Support,
    y: &[f64],
) -> Result<bool> {
    check_observation(setup, y)?;
    if s_prime == signal.support() {
        return Err(Error::SameSupport);
    }
    let true_sub = setup.submatrix(signal.support())?;
    let alt_sub = setup.submatrix(s_prime)?;
    let res_true =
        residual_norm_sq(&true_sub, y).map_err(|e| named_rank_error(e, signal.support()))?;
    let res_alt = residual_norm_sq(&alt_sub, y).map_err(|e| named_rank_error(e, s_prime))?;
    Ok(res_alt < res_true)
}

/// Precomputed orthonormal bases for every candidate support of one setup.
///
/// Decoding many observations against a fixed `Φ` re-uses the factorizations;
/// results are identical to [`mle_decode`] because both paths compute the
/// same basis and apply the same tie rule in the same enumeration order.
pub struct SupportScan {
    supports: Vec<Support>,
    bases: Vec<Mat>,
}

impl SupportScan {
    pub fn new(setup: &MeasurementSetup, k: usize, cap: u64) -> Result<Self> {
        let mut supports = Vec::new();
        let mut bases = Vec::new();
        for s in enumerate_supports(setup.p(), k, cap)? {
            let sub = setup.submatrix(&s)?;
            let q = orthonormal_basis(&sub).map_err(|e| named_rank_error(e, &s))?;
            supports.push(s);
            bases.push(q);
        }
        Ok(Self { supports, bases })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn residual_norm_sq(&self, index: usize, y: &[f64]) -> f64 {
        residual_norm_sq_with_basis(&self.bases[index], y)
    }

    /// Index of the given support inside the enumeration, if present.
    pub fn position_of(&self, s: &Support) -> Option<usize> {
        self.supports.binary_search(s).ok()
    }

    /// ML decision only (support index and residual), skipping the
    /// coefficient solve.
    pub fn mle_argmin(&self, y: &[f64]) -> (usize, f64) {
        let tie_tol = RESIDUAL_TIE_FACTOR * norm_sq(y);
        let mut best_idx = 0;
        let mut best_res = self.residual_norm_sq(0, y);
        for i in 1..self.bases.len() {
            let res = self.residual_norm_sq(i, y);
            if res < best_res - tie_tol {
                best_idx = i;
                best_res = res;
            }
        }
        (best_idx, best_res)
    }

    pub fn mle_decode(&self, setup: &MeasurementSetup, y: &[f64]) -> Result<DecodeResult> {
        check_observation(setup, y)?;
        let (idx, residual) = self.mle_argmin(y);
        finish(setup, y, self.supports[idx].clone(), residual, DecodeMethod::Mle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_gaussian_ensemble;
    use crate::numerics::QrFactor;
    use crate::rng::{derive_seed, GaussianStream};

    fn gaussian_setup(m: usize, p: usize, k: usize, sigma_sq: f64, seed: u64) -> MeasurementSetup {
        MeasurementSetup::new(sample_gaussian_ensemble(m, p, seed), sigma_sq, k).unwrap()
    }

    #[test]
    fn noiseless_mle_recovers_the_true_support() {
        for seed in 0..20 {
            let setup = gaussian_setup(7, 9, 3, 0.0, 500 + seed);
            let signal = SparseSignal::new(
                Support::new(9, vec![2, 5, 8]).unwrap(),
                vec![1.0, -2.0, 1.5],
                1.0,
            )
            .unwrap();
            let y = crate::model::measure(&setup, &signal, 0).unwrap();
            let out = mle_decode(&setup, &y, 3, 1_000).unwrap();
            assert_eq!(out.support, *signal.support());
            assert!(out.residual_norm_sq < 1e-18 * norm_sq(&y));
            for (got, want) in out.coefficients.iter().zip(signal.coefficients()) {
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_observation_breaks_ties_lexicographically() {
        let setup = gaussian_setup(6, 8, 2, 1.0, 4);
        let y = vec![0.0; 6];
        let mle = mle_decode(&setup, &y, 2, 1_000).unwrap();
        assert_eq!(mle.support.indices(), &[1, 2]);
        let mce = mce_decode(&setup, &y, 2).unwrap();
        assert_eq!(mce.support.indices(), &[1, 2]);
    }

    #[test]
    fn mle_matches_naive_double_loop_oracle() {
        let setup = gaussian_setup(12, 10, 2, 1.0, 42);
        let signal = SparseSignal::flat(10, 2, 4.0).unwrap();
        for trial in 0..20 {
            let y = crate::model::measure(&setup, &signal, derive_seed(42, trial)).unwrap();
            let got = mle_decode(&setup, &y, 2, 1_000).unwrap();
            // Naive oracle: every pair, residual through a fresh projection.
            let mut best: Option<(Vec<usize>, f64)> = None;
            for a in 1..=10usize {
                for b in (a + 1)..=10 {
                    let sub = setup.phi().select_columns(&[a, b]).unwrap();
                    let r = residual_norm_sq(&sub, &y).unwrap();
                    if best.as_ref().is_none_or(|(_, br)| r < *br) {
                        best = Some((vec![a, b], r));
                    }
                }
            }
            let (oracle_support, oracle_res) = best.unwrap();
            assert_eq!(got.support.indices(), &oracle_support[..]);
            assert!((got.residual_norm_sq - oracle_res).abs() <= 1e-10 * oracle_res.max(1.0));
        }
    }

    #[test]
    fn scan_decode_equals_streaming_decode() {
        let setup = gaussian_setup(10, 9, 2, 2.0, 7);
        let scan = SupportScan::new(&setup, 2, 1_000).unwrap();
        let signal = SparseSignal::flat(9, 2, 3.0).unwrap();
        for trial in 0..50 {
            let y = crate::model::measure(&setup, &signal, derive_seed(9, trial)).unwrap();
            let a = mle_decode(&setup, &y, 2, 1_000).unwrap();
            let b = scan.mle_decode(&setup, &y).unwrap();
            assert_eq!(a.support, b.support);
            assert_eq!(a.residual_norm_sq.to_bits(), b.residual_norm_sq.to_bits());
        }
    }

    #[test]
    fn mce_identity_matrix_picks_largest_entries() {
        let setup = MeasurementSetup::new(Mat::identity(6), 1.0, 2).unwrap();
        let y = vec![0.1, -3.0, 0.2, 2.5, 0.0, 0.0];
        let out = mce_decode(&setup, &y, 2).unwrap();
        assert_eq!(out.support.indices(), &[2, 4]);
    }

    #[test]
    fn mce_and_mle_agree_on_orthonormal_columns() {
        // Orthonormal Φ via QR of a seeded Gaussian matrix, p <= m.
        let raw = sample_gaussian_ensemble(8, 6, 11);
        let q = QrFactor::factor(&raw).unwrap().thin_q();
        let setup = MeasurementSetup::new(q, 0.0, 2).unwrap();
        let signal = SparseSignal::new(
            Support::new(6, vec![2, 5]).unwrap(),
            vec![2.0, -1.5],
            1.0,
        )
        .unwrap();
        let y = crate::model::measure(&setup, &signal, 0).unwrap();
        let mle = mle_decode(&setup, &y, 2, 1_000).unwrap();
        let mce = mce_decode(&setup, &y, 2).unwrap();
        assert_eq!(mle.support, mce.support);
        assert_eq!(mle.support, *signal.support());
    }

    #[test]
    fn pairwise_event_examples() {
        let setup = gaussian_setup(8, 7, 2, 1.0, 13);
        let signal = SparseSignal::flat(7, 2, 3.0).unwrap();
        let x = setup.noiseless_measurement(&signal).unwrap();
        let alt = Support::new(7, vec![3, 6]).unwrap();
        // Noiseless observation: the true subspace has residual 0.
        assert!(!pairwise_ml_error_event(&setup, &signal, &alt, &x).unwrap());
        // An observation inside the alternative subspace flips the event.
        let alt_sub = setup.submatrix(&alt).unwrap();
        let y_alt = alt_sub.mul_vec(&[1.0, 1.0]).unwrap();
        assert!(pairwise_ml_error_event(&setup, &signal, &alt, &y_alt).unwrap());
        // Same support is rejected.
        assert!(matches!(
            pairwise_ml_error_event(&setup, &signal, signal.support(), &x),
            Err(Error::SameSupport)
        ));
    }

    #[test]
    fn half_distance_noise_never_flips_the_pairwise_event() {
        let setup = gaussian_setup(9, 8, 2, 1.0, 29);
        let signal = SparseSignal::flat(8, 2, 3.0).unwrap();
        let x = setup.noiseless_measurement(&signal).unwrap();
        let alt = Support::new(8, vec![1, 5]).unwrap();
        let alt_sub = setup.submatrix(&alt).unwrap();
        let dist = residual_norm_sq(&alt_sub, &x).unwrap().sqrt();
        let mut checked = 0u32;
        for trial in 0..10_000u64 {
            let mut g = GaussianStream::new(derive_seed(77, trial));
            let eps = g.normal_vec(9);
            if norm_sq(&eps).sqrt() >= dist / 2.0 {
                continue;
            }
            checked += 1;
            let y: Vec<f64> = x.iter().zip(&eps).map(|(a, b)| a + b).collect();
            assert!(!pairwise_ml_error_event(&setup, &signal, &alt, &y).unwrap());
        }
        assert!(checked > 100, "only {checked} trials fell below d/2");
    }

    #[test]
    fn cap_and_rank_errors_are_reported() {
        let setup = gaussian_setup(12, 10, 2, 1.0, 3);
        let y = vec![0.0; 12];
        assert!(matches!(
            mle_decode(&setup, &y, 3, 10),
            Err(Error::CapExceeded { .. })
        ));

        // Duplicate columns: the offending support is named.
        let mut phi = sample_gaussian_ensemble(6, 5, 19);
        for i in 0..6 {
            let v = phi[(i, 0)];
            phi[(i, 2)] = v;
        }
        let setup = MeasurementSetup::new(phi, 1.0, 2).unwrap();
        let err = mle_decode(&setup, &vec![1.0; 6], 2, 1_000).unwrap_err();
        match err {
            Error::RankDeficient { support: Some(s) } => assert_eq!(s, vec![1, 3]),
            other => panic!("expected named RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn decode_result_serializes_with_method_tag() {
        let setup = gaussian_setup(6, 5, 2, 0.0, 23);
        let signal = SparseSignal::flat(5, 2, 2.0).unwrap();
        let y = crate::model::measure(&setup, &signal, 0).unwrap();
        let out = mle_decode(&setup, &y, 2, 100).unwrap();
        let json = serde_json::to_string(&out).unwrap();
        assert!(json.contains("\"method\":\"mle\""), "{json}");
        let back: DecodeResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out);
    }
}
