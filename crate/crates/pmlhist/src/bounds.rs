//! Closed-form privacy bounds for Laplace histogram release and the monotone
//! inversion used to calibrate noise against a leakage target.
//!
//! A k-bin histogram has l1-sensitivity 2 (one record moves at most two
//! bins), so `Lap(b)` noise gives the differential-privacy level
//! `eps_dp = 2/b`. If additionally every record's probability of landing in
//! any class is at least `alpha`, the pointwise maximal leakage of the
//! release is bounded by the tight
//!
//! ```text
//! eps_pml(b, alpha) = 2/b - log(1 - alpha + alpha*e^{2/b})
//! ```
//!
//! which is strictly below `eps_dp` for every `alpha > 0` and recovers it as
//! `alpha -> 0`. Two weaker companions are provided: the algebraic relaxation
//! `2(1-alpha)/b + 2 alpha^2/b^2` and the per-count composition bound
//! `(k-1)*((1-alpha)/b + alpha^2/(2 b^2))`, which grows linearly in `k` and
//! illustrates how much the direct analysis saves. All bounds are in nats.
//!
//! The tight bound is strictly increasing in `u = 2/b` with slope
//! `(1-alpha)/(1-alpha+alpha*e^u) > 0` and has supremum `-log(alpha)` as
//! `b -> 0`; calibration therefore bisects on `u` and reports a target at or
//! above that cap as needing no noise at all.

use std::fmt;
use thiserror::Error;

/// Default residual tolerance (in nats) for [`calibrate_pml`].
pub const DEFAULT_CALIBRATION_TOL: f64 = 1e-10;

/// Bisection iteration cap; vastly exceeds double-precision needs.
const MAX_BISECTION_ITERS: u32 = 200;

/// Errors from constructing bound inputs or running calibration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("noise scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("bin count k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("alpha must lie in (0, 1/k] = (0, {limit}] for k={k}, got {alpha}")]
    InvalidAlpha { alpha: f64, k: usize, limit: f64 },
    #[error("privacy level must be nonnegative and finite, got {0}")]
    InvalidLevel(f64),
    #[error("calibration target must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("calibration tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("bisection did not reach tolerance {tol:e} within {max_iters} iterations")]
    NoConvergence { tol: f64, max_iters: u32 },
}

/// Laplace scale parameter `b`; the noise has density `exp(-|x|/b)/(2b)` and
/// variance `2 b^2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseScale(f64);

impl NoiseScale {
    /// A positive, finite scale.
    pub fn new(b: f64) -> Result<Self, BoundsError> {
        if b.is_finite() && b > 0.0 {
            Ok(NoiseScale(b))
        } else {
            Err(BoundsError::InvalidScale(b))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for NoiseScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Lower bound `alpha` on every class probability, tied to the bin count `k`
/// it is quoted against (a floor above `1/k` would be unsatisfiable).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaFloor {
    alpha: f64,
    k: usize,
}

impl AlphaFloor {
    /// Requires `k >= 2` and `0 < alpha <= 1/k`.
    pub fn new(alpha: f64, k: usize) -> Result<Self, BoundsError> {
        if k < 2 {
            return Err(BoundsError::InvalidK(k));
        }
        let limit = 1.0 / k as f64;
        if !alpha.is_finite() || alpha <= 0.0 || alpha > limit {
            return Err(BoundsError::InvalidAlpha { alpha, k, limit });
        }
        Ok(AlphaFloor { alpha, k })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }

    pub fn k(self) -> usize {
        self.k
    }
}

/// A leakage level in nats (a DP epsilon or a PML bound).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PrivacyLevel(f64);

impl PrivacyLevel {
    /// A nonnegative, finite level.
    pub fn new(epsilon: f64) -> Result<Self, BoundsError> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(PrivacyLevel(epsilon))
        } else {
            Err(BoundsError::InvalidLevel(epsilon))
        }
    }

    pub fn nats(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PrivacyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Outcome of a successful bisection: the scale found, the bound value it
/// achieves, and how the search went.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub scale: NoiseScale,
    pub achieved: PrivacyLevel,
    pub iterations: u32,
    /// `achieved - target`, within the requested tolerance.
    pub residual: f64,
}

/// Result of [`calibrate_pml`]: either a finite scale, or the target sits at
/// or above the leakage cap `-log(alpha)`, in which case arbitrarily small
/// noise already satisfies it and no scale is returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PmlCalibration {
    Calibrated(CalibrationResult),
    NoNoiseNeeded { cap: PrivacyLevel },
}

impl PmlCalibration {
    /// The calibrated scale, or `None` when no noise is needed.
    pub fn scale(&self) -> Option<NoiseScale> {
        match self {
            PmlCalibration::Calibrated(r) => Some(r.scale),
            PmlCalibration::NoNoiseNeeded { .. } => None,
        }
    }
}

/// Differential-privacy level of `Lap(b)` noise on a histogram: `2/b`.
pub fn eps_dp(b: NoiseScale) -> PrivacyLevel {
    PrivacyLevel(2.0 / b.get())
}

/// The tight PML bound `2/b - log(1 - alpha + alpha*e^{2/b})`.
///
/// Evaluated as `-log1p((1-alpha)*expm1(-u))` with `u = 2/b`, which is
/// algebraically identical but never exponentiates `+u`, so it neither
/// overflows for tiny `b` nor loses precision for alpha as small as 1e-6.
pub fn eps_pml_tight(b: NoiseScale, a: AlphaFloor) -> PrivacyLevel {
    PrivacyLevel(tight_from_u(2.0 / b.get(), a.alpha()))
}

/// The bound as a function of `u = 2/b`; strictly increasing in `u` with
/// range `(0, -log(alpha))`.
fn tight_from_u(u: f64, alpha: f64) -> f64 {
    -((1.0 - alpha) * f64::exp_m1(-u)).ln_1p()
}

/// The simplified relaxation `2(1-alpha)/b + 2 alpha^2/b^2`; always at least
/// [`eps_pml_tight`], and below [`eps_dp`] whenever `b >= alpha`.
pub fn eps_pml_simplified(b: NoiseScale, a: AlphaFloor) -> PrivacyLevel {
    let b = b.get();
    let alpha = a.alpha();
    PrivacyLevel(2.0 * (1.0 - alpha) / b + 2.0 * alpha * alpha / (b * b))
}

/// The per-count composition bound `(k-1)*((1-alpha)/b + alpha^2/(2 b^2))`:
/// what summing a per-count analysis over the k-1 free counts would give.
/// Linear in `k`, hence much looser than the direct bound for large `k`.
pub fn eps_pml_composition(b: NoiseScale, a: AlphaFloor) -> PrivacyLevel {
    let b = b.get();
    let alpha = a.alpha();
    let k = a.k() as f64;
    PrivacyLevel((k - 1.0) * ((1.0 - alpha) / b + alpha * alpha / (2.0 * b * b)))
}

/// Least upper bound `-log(alpha)` of [`eps_pml_tight`] over all scales;
/// the bound approaches it as `b -> 0` but never attains it. Calibration
/// targets at or above the cap need no noise.
pub fn pml_cap(a: AlphaFloor) -> PrivacyLevel {
    PrivacyLevel(-a.alpha().ln())
}

/// Noise scale meeting a DP target exactly: `b = 2/target`.
pub fn calibrate_dp(target: PrivacyLevel) -> Result<NoiseScale, BoundsError> {
    let eps = target.nats();
    if eps <= 0.0 {
        return Err(BoundsError::InvalidTarget(eps));
    }
    Ok(NoiseScale(2.0 / eps))
}

/// Invert the tight bound: find `b` with `eps_pml_tight(b, a)` within `tol`
/// of `target`, by bracketing bisection on `u = 2/b`.
///
/// The lower bracket endpoint is `u = target` (the bound satisfies
/// `f(u) < u`); the upper endpoint doubles from 1 until `f(u) >= target`,
/// which must happen because `f` is continuous, strictly increasing, and
/// fills `(0, -log(alpha))`. Targets at or above the cap `-log(alpha)`
/// return [`PmlCalibration::NoNoiseNeeded`].
pub fn calibrate_pml(
    target: PrivacyLevel,
    a: AlphaFloor,
    tol: f64,
) -> Result<PmlCalibration, BoundsError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(BoundsError::InvalidTolerance(tol));
    }
    let eps = target.nats();
    if eps <= 0.0 {
        return Err(BoundsError::InvalidTarget(eps));
    }
    let cap = pml_cap(a);
    if eps >= cap.nats() {
        return Ok(PmlCalibration::NoNoiseNeeded { cap });
    }

    let alpha = a.alpha();
    let mut lo = eps;
    let mut hi = 1.0;
    let mut iterations = 0;
    while tight_from_u(hi, alpha) < eps {
        hi *= 2.0;
        iterations += 1;
        if iterations > MAX_BISECTION_ITERS {
            return Err(BoundsError::NoConvergence { tol, max_iters: MAX_BISECTION_ITERS });
        }
    }
    loop {
        iterations += 1;
        if iterations > MAX_BISECTION_ITERS {
            return Err(BoundsError::NoConvergence { tol, max_iters: MAX_BISECTION_ITERS });
        }
        let mid = 0.5 * (lo + hi);
        let achieved = tight_from_u(mid, alpha);
        if (achieved - eps).abs() <= tol {
            return Ok(PmlCalibration::Calibrated(CalibrationResult {
                scale: NoiseScale(2.0 / mid),
                achieved: PrivacyLevel(achieved),
                iterations,
                residual: achieved - eps,
            }));
        }
        if achieved < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
