//! Closed-form quantities: the HCR lower bound on unbiased support
//! estimators, the distinguishability factor, the ML decoder's error and
//! covariance-trace upper bounds, necessary and sufficient measurement
//! counts for the standard Gaussian ensemble, the restricted integer-mean
//! example, and the direct-measurement error probability.
//!
//! Natural logarithms throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{enumerate_supports, rho2, MeasurementSetup, SparseSignal, Support};
use crate::numerics::{gaussian_q, norm_sq, orthonormal_basis, residual_norm_sq_with_basis};
use crate::{Error, Result};

/// Exponents above this underflow the HCR term to an explicit zero instead
/// of overflowing the denominator.
pub const HCR_EXPONENT_LIMIT: f64 = 700.0;

/// Residuals below this fraction of `‖x‖²` mean the alternative subspace
/// contains the noiseless measurement.
pub const DEGENERATE_RESIDUAL_FACTOR: f64 = 1e-18;

/// One enumerated HCR term: numerator `‖s − sᵢ‖²` and denominator exponent
/// `‖x − p_{sᵢ} x‖² / σ²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HcrTermRecord {
    pub support: Support,
    pub numerator: f64,
    pub exponent: f64,
    pub underflowed: bool,
}

/// Output of the exhaustive HCR maximization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HcrReport {
    /// Lower bound on `tr[cov(ŝ)]` for unbiased estimators.
    pub value: f64,
    /// First support (lexicographically) attaining the maximum.
    pub argmax_support: Support,
    /// Minimum distance from `x` to any alternative subspace.
    pub d_min: f64,
    /// Retained only on request; one entry per alternative support.
    pub per_support_terms: Option<Vec<HcrTermRecord>>,
}

/// Uniform carrier for scalar bounds with their input parameters echoed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    pub parameters: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: &str, value: f64, parameters: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            value,
            parameters: parameters
                .iter()
                .map(|&(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

fn check_signal_setup(setup: &MeasurementSetup, signal: &SparseSignal) -> Result<()> {
    if signal.p() != setup.p() {
        return Err(Error::DimensionMismatch {
            context: "bounds signal/setup",
            expected: setup.p(),
            got: signal.p(),
        });
    }
    if !(setup.sigma_sq() > 0.0) {
        return Err(Error::InvalidConfig {
            reason: "bounds require sigma_sq > 0".into(),
        });
    }
    Ok(())
}

/// Term value from its parts; `underflowed` is set when the exponent is so
/// large that the term is returned as an explicit zero.
pub fn hcr_term_from_parts(numerator: f64, exponent: f64) -> (f64, bool) {
    if exponent > HCR_EXPONENT_LIMIT {
        (0.0, true)
    } else {
        (numerator / exponent.exp_m1(), false)
    }
}

/// The single-subspace HCR term `‖s − sᵢ‖² / (e^{‖x − p_{sᵢ}x‖²/σ²} − 1)`.
/// Every such term lower-bounds [`hcr_support_bound`].
pub fn hcr_single_term(
    setup: &MeasurementSetup,
    signal: &SparseSignal,
    s_i: &Support,
) -> Result<f64> {
    check_signal_setup(setup, signal)?;
    if s_i == signal.support() {
        return Err(Error::SameSupport);
    }
    let x = setup.noiseless_measurement(signal)?;
    let term = term_record(setup, signal, s_i, &x, norm_sq(&x))?;
    Ok(hcr_term_from_parts(term.numerator, term.exponent).0)
}

fn term_record(
    setup: &MeasurementSetup,
    signal: &SparseSignal,
    s_i: &Support,
    x: &[f64],
    x_norm_sq: f64,
) -> Result<HcrTermRecord> {
    let sub = setup.submatrix(s_i)?;
    let q = orthonormal_basis(&sub).map_err(|e| match e {
        Error::RankDeficient { support: None } => Error::RankDeficient {
            support: Some(s_i.indices().to_vec()),
        },
        other => other,
    })?;
    let resid = residual_norm_sq_with_basis(&q, x);
    if resid <= DEGENERATE_RESIDUAL_FACTOR * x_norm_sq {
        return Err(Error::DegenerateSubspace {
            support: s_i.indices().to_vec(),
        });
    }
    let exponent = resid / setup.sigma_sq();
    let numerator = rho2(signal.support(), s_i)?;
    let underflowed = exponent > HCR_EXPONENT_LIMIT;
    Ok(HcrTermRecord {
        support: s_i.clone(),
        numerator,
        exponent,
        underflowed,
    })
}

/// Exhaustive HCR lower bound: the maximum of [`hcr_single_term`] over every
/// support different from the true one, together with `d_min`. Ties go to
/// the lexicographically first support.
pub fn hcr_support_bound(
    setup: &MeasurementSetup,
    signal: &SparseSignal,
    cap: u64,
    retain_terms: bool,
) -> Result<HcrReport> {
    check_signal_setup(setup, signal)?;
    let x = setup.noiseless_measurement(signal)?;
    let x_norm_sq = norm_sq(&x);
    let k = signal.k();
    let mut best: Option<(Support, f64)> = None;
    let mut d_min_sq = f64::INFINITY;
    let mut terms = Vec::new();
    for s_i in enumerate_supports(setup.p(), k, cap)? {
        if s_i == *signal.support() {
            continue;
        }
        let record = term_record(setup, signal, &s_i, &x, x_norm_sq)?;
        let (value, _) = hcr_term_from_parts(record.numerator, record.exponent);
        d_min_sq = d_min_sq.min(record.exponent * setup.sigma_sq());
        match &best {
            Some((_, bv)) if value <= *bv => {}
            _ => best = Some((s_i.clone(), value)),
        }
        if retain_terms {
            terms.push(record);
        }
    }
    let (argmax_support, value) = best.ok_or(Error::NoAlternativeSupport)?;
    Ok(HcrReport {
        value,
        argmax_support,
        d_min: d_min_sq.sqrt(),
        per_support_terms: retain_terms.then_some(terms),
    })
}

/// Minimum distance from the noiseless measurement to any alternative
/// subspace, plus the support attaining it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DminReport {
    pub value: f64,
    pub argmin_support: Support,
    /// Set when some alternative subspace contains `x`, in which case the
    /// distance is reported as exactly zero.
    pub indistinguishable: bool,
}

pub fn d_min(setup: &MeasurementSetup, signal: &SparseSignal, cap: u64) -> Result<DminReport> {
    check_signal_setup(setup, signal)?;
    let x = setup.noiseless_measurement(signal)?;
    let x_norm_sq = norm_sq(&x);
    let mut best: Option<(Support, f64)> = None;
    for s_i in enumerate_supports(setup.p(), signal.k(), cap)? {
        if s_i == *signal.support() {
            continue;
        }
        let sub = setup.submatrix(&s_i)?;
        let q = orthonormal_basis(&sub).map_err(|e| match e {
            Error::RankDeficient { support: None } => Error::RankDeficient {
                support: Some(s_i.indices().to_vec()),
            },
            other => other,
        })?;
        let resid = residual_norm_sq_with_basis(&q, &x);
        match &best {
            Some((_, br)) if resid >= *br => {}
            _ => best = Some((s_i.clone(), resid)),
        }
    }
    let (argmin_support, resid) = best.ok_or(Error::NoAlternativeSupport)?;
    let indistinguishable = resid <= DEGENERATE_RESIDUAL_FACTOR * x_norm_sq;
    Ok(DminReport {
        value: if indistinguishable { 0.0 } else { resid.sqrt() },
        argmin_support,
        indistinguishable,
    })
}

/// Distinguishability factor `β = d_min² / (4 m σ²)`.
pub fn distinguishability(d_min_val: f64, m: usize, sigma_sq: f64) -> f64 {
    assert!(m >= 1 && sigma_sq > 0.0 && d_min_val >= 0.0);
    d_min_val * d_min_val / (4.0 * m as f64 * sigma_sq)
}

/// `ln c(β) = ((β − 1) − ln β) / (2β)`, positive for `β > 1`.
pub fn ln_c_beta(beta: f64) -> Result<f64> {
    if !(beta > 1.0) || !beta.is_finite() {
        return Err(Error::BetaOutOfRange { beta });
    }
    Ok(((beta - 1.0) - beta.ln()) / (2.0 * beta))
}

/// `c(β) = e^{(β−1)/2β} / β^{1/2β}`; exceeds 1 for `β > 1` and tends to
/// `√e` as `β` grows.
pub fn c_beta(beta: f64) -> Result<f64> {
    Ok(ln_c_beta(beta)?.exp())
}

/// Error probability bound `(m/2) c(β)^{−βm}` for the ML decoder; requires
/// even `m` and `β > 1`.
pub fn mle_error_upper_bound(m: u32, beta: f64) -> Result<f64> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::OddM { m });
    }
    let ln_c = ln_c_beta(beta)?;
    Ok(f64::from(m) / 2.0 * (-beta * f64::from(m) * ln_c).exp())
}

/// Covariance-trace bound `(k m p² / 2) c(β)^{−βm}` for the ML decoder,
/// i.e. exactly `k p²` times [`mle_error_upper_bound`].
pub fn mle_cov_trace_bound(k: usize, m: u32, p: usize, beta: f64) -> Result<f64> {
    Ok(k as f64 * (p as f64) * (p as f64) * mle_error_upper_bound(m, beta)?)
}

/// Measurement count `(1+ε) ln(p) / (β ln c(β))` above which the ML decoder
/// enters its asymptotically unbiased regime.
pub fn unbiasedness_threshold(p: usize, beta: f64, epsilon: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidConfig {
            reason: format!("unbiasedness threshold needs p >= 2, got {p}"),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    let ln_c = ln_c_beta(beta)?;
    Ok((1.0 + epsilon) * (p as f64).ln() / (beta * ln_c))
}

/// Below `max{k, σ² ln(p−k) / θ_min²}` measurements, no unbiased estimator
/// is reliable over the class `C(θ_min)` under the Gaussian ensemble.
pub fn necessary_m_lower(p: usize, k: usize, theta_min: f64, sigma_sq: f64) -> Result<f64> {
    if p <= k || k == 0 {
        return Err(Error::InvalidDims { p, k });
    }
    if !(theta_min > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidConfig {
            reason: "necessary_m_lower needs theta_min > 0 and sigma_sq > 0".into(),
        });
    }
    let tail = sigma_sq * ((p - k) as f64).ln() / (theta_min * theta_min);
    Ok((k as f64).max(tail))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MsuffReport {
    pub value: f64,
    pub maximizing_ell: usize,
}

/// `k + max_{1≤ℓ≤k} { ln k + ℓ ln(k/ℓ) + ℓ ln((p−k)/ℓ) }`, maximized by a
/// direct loop. This is the measurement count sufficient for the ML decoder
/// under the Gaussian ensemble (in its high-SNR validity regime).
pub fn msuff_value(p: usize, k: usize) -> Result<MsuffReport> {
    if p <= k || k == 0 {
        return Err(Error::InvalidDims { p, k });
    }
    let kf = k as f64;
    let rest = (p - k) as f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_ell = 1;
    for ell in 1..=k {
        let lf = ell as f64;
        let term = kf.ln() + lf * (kf / lf).ln() + lf * (rest / lf).ln();
        if term > best {
            best = term;
            best_ell = ell;
        }
    }
    Ok(MsuffReport {
        value: kf + best,
        maximizing_ell: best_ell,
    })
}

/// [`msuff_value`] gated on the validity regime `θ_min²/σ² > 8` of the
/// sufficiency analysis; outside it the evaluator errors with `SnrTooLow`.
pub fn sufficient_m_suff(
    p: usize,
    k: usize,
    theta_min: f64,
    sigma_sq: f64,
) -> Result<MsuffReport> {
    if p <= k || k == 0 {
        return Err(Error::InvalidDims { p, k });
    }
    if !(theta_min > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidConfig {
            reason: "sufficient_m_suff needs theta_min > 0 and sigma_sq > 0".into(),
        });
    }
    let ratio = theta_min * theta_min / sigma_sq;
    if ratio <= 8.0 {
        return Err(Error::SnrTooLow { ratio });
    }
    msuff_value(p, k)
}

/// Bounds for estimating an integer-restricted Gaussian mean from `m`
/// samples: the unrestricted variance bound `σ²/m` and the restricted bound
/// `1/(e^{m/σ²} − 1)`, attained at a unit integer shift.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegerMeanBounds {
    pub cr: f64,
    pub hcr: f64,
}

pub fn integer_mean_hcr(m: u32, sigma_sq: f64) -> IntegerMeanBounds {
    assert!(m >= 1 && sigma_sq > 0.0);
    IntegerMeanBounds {
        cr: sigma_sq / f64::from(m),
        hcr: 1.0 / (f64::from(m) / sigma_sq).exp_m1(),
    }
}

/// One candidate term `α² / (e^{mα²/σ²} − 1)` of the restricted-mean
/// maximization; the maximum over nonzero integers sits at `|α| = 1`.
pub fn integer_mean_hcr_term(alpha: f64, m: u32, sigma_sq: f64) -> f64 {
    assert!(m >= 1 && sigma_sq > 0.0 && alpha != 0.0);
    alpha * alpha / (f64::from(m) * alpha * alpha / sigma_sq).exp_m1()
}

/// ML pairwise error probability `Q(√(2k θ_min²) / 2σ)` for two signals
/// differing in one position under the diagonal `√k`-gain direct sampler.
pub fn direct_measurement_error(k: usize, theta_min: f64, sigma: f64) -> f64 {
    assert!(k >= 1 && theta_min > 0.0 && sigma > 0.0);
    gaussian_q((2.0 * k as f64 * theta_min * theta_min).sqrt() / (2.0 * sigma))
}

/// Ratio of the HCR denominator exponent at the `d_min` subspace
/// (`d_min²/σ² = 4βm`) to the ML bound exponent (`βm ln c(β)`): `4/ln c(β)`.
/// Decreases toward 8 as `β` grows, i.e. about a 9 dB gap.
pub fn hcr_mle_exponent_ratio(beta: f64) -> Result<f64> {
    Ok(4.0 / ln_c_beta(beta)?)
}

/// The four `(k, θ_min)` scaling regimes at a concrete dimension `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    /// `k = Θ(p)`, `θ_min² = Θ(1/k)`.
    LinearVanishing,
    /// `k = Θ(p)`, `θ_min² = Θ(1)`.
    LinearConstant,
    /// `k = o(p)`, `θ_min² = Θ(1/k)`.
    SublinearVanishing,
    /// `k = o(p)`, `θ_min² = Θ(1)`.
    SublinearConstant,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 4] = [
        RegimeKind::LinearVanishing,
        RegimeKind::LinearConstant,
        RegimeKind::SublinearVanishing,
        RegimeKind::SublinearConstant,
    ];

    /// Concrete `(k, θ_min)` at dimension `p`: linear regimes use
    /// `k = ⌈p/4⌉`, sublinear `k = ⌈√p⌉`; constant-coefficient regimes pin
    /// `θ_min = 3` (inside the sufficiency validity region), vanishing ones
    /// use `θ_min = 1/√k`.
    pub fn instantiate(self, p: usize) -> (usize, f64) {
        let k = match self {
            RegimeKind::LinearVanishing | RegimeKind::LinearConstant => (p + 3) / 4,
            RegimeKind::SublinearVanishing | RegimeKind::SublinearConstant => {
                (p as f64).sqrt().ceil() as usize
            }
        };
        let k = k.clamp(1, p - 1);
        let theta_min = match self {
            RegimeKind::LinearVanishing | RegimeKind::SublinearVanishing => {
                1.0 / (k as f64).sqrt()
            }
            RegimeKind::LinearConstant | RegimeKind::SublinearConstant => 3.0,
        };
        (k, theta_min)
    }

    /// Whether a closed-form sufficient count is available: the vanishing
    /// coefficient regimes have none.
    pub fn has_sufficient_formula(self) -> bool {
        matches!(self, RegimeKind::LinearConstant | RegimeKind::SublinearConstant)
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegimeKind::LinearVanishing => "k=Theta(p), theta_min^2=Theta(1/k)",
            RegimeKind::LinearConstant => "k=Theta(p), theta_min^2=Theta(1)",
            RegimeKind::SublinearVanishing => "k=o(p), theta_min^2=Theta(1/k)",
            RegimeKind::SublinearConstant => "k=o(p), theta_min^2=Theta(1)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: RegimeKind,
    pub k: usize,
    pub theta_min: f64,
    pub necessary: f64,
    /// `None` marks a regime with no closed-form sufficient count.
    pub sufficient: Option<f64>,
    pub maximizing_ell: Option<usize>,
}

/// Necessary/sufficient measurement counts across the four regimes at a
/// concrete `p`.
pub fn regime_table(p: usize, sigma_sq: f64) -> Result<Vec<RegimeRow>> {
    if p < 4 {
        return Err(Error::InvalidConfig {
            reason: format!("regime table needs p >= 4, got {p}"),
        });
    }
    let mut rows = Vec::with_capacity(4);
    for regime in RegimeKind::ALL {
        let (k, theta_min) = regime.instantiate(p);
        let necessary = necessary_m_lower(p, k, theta_min, sigma_sq)?;
        let (sufficient, maximizing_ell) = if regime.has_sufficient_formula() {
            let r = msuff_value(p, k)?;
            (Some(r.value), Some(r.maximizing_ell))
        } else {
            (None, None)
        };
        rows.push(RegimeRow {
            regime,
            k,
            theta_min,
            necessary,
            sufficient,
            maximizing_ell,
        });
    }
    Ok(rows)
}
