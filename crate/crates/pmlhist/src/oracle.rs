//! Exact pointwise maximal leakage for small i.i.d. databases, by brute
//! force, used to verify the closed-form bound and its tightness.
//!
//! Fix class probabilities `p` over `k` bins and condition on record 1
//! lying in class `c`. The Laplace release density at an outcome `y` then
//! factors through the multinomial counts `m` of the other `n-1` records:
//!
//! ```text
//! L_c(y) ∝ Σ_m multinomial(n-1; p)(m) · Π_j exp(-|y_j - m_j - 1{j=c}| / b)
//! ```
//!
//! and the leakage realized at `y` is `log(max_c L_c / Σ_c p_c L_c)`. The
//! constant `(1/2b)^k` cancels in that ratio and is dropped. Terms are
//! accumulated in log space with a running max shift, since a product of
//! `n·k` Laplace densities underflows quickly.
//!
//! Enumeration is over the `C(n-1+k-1, k-1)` weak compositions of `n-1`
//! into `k` parts, generated in reverse-lexicographic order; the term count
//! is checked against an explicit budget before any work starts.

use crate::bounds::{eps_pml_tight, AlphaFloor, BoundsError, NoiseScale};
use crate::mechanism::{histogram, privatize, Dataset, NoisyHistogram, RandomStream};
use thiserror::Error;

/// Slack added to the bound when scanning for violations, absorbing
/// double-precision round-off in the oracle itself.
pub const BOUND_SLACK: f64 = 1e-12;

/// Errors from oracle evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("class probabilities invalid: {0}")]
    InvalidDistribution(String),
    #[error("outcome has {got} bins but the distribution has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("database must contain at least one record")]
    EmptyDatabase,
    #[error("enumeration budget must be positive")]
    InvalidBudget,
    #[error("enumeration needs {required} terms, over the budget of {max_terms}")]
    BudgetExceeded { required: u128, max_terms: u64 },
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// Probability vector over `k` classes together with the floor `alpha` it is
/// certified against: every entry is at least `alpha.alpha()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
    alpha: AlphaFloor,
}

impl ClassDistribution {
    /// A distribution certified against an explicit floor. Requires matching
    /// dimensions, entries at least `alpha`, and total mass 1 within 1e-12.
    pub fn new(probs: Vec<f64>, alpha: AlphaFloor) -> Result<Self, OracleError> {
        if probs.len() != alpha.k() {
            return Err(OracleError::InvalidDistribution(format!(
                "{} probabilities for k={}",
                probs.len(),
                alpha.k()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite()) {
            return Err(OracleError::InvalidDistribution(format!("non-finite entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(OracleError::InvalidDistribution(format!("mass sums to {sum}")));
        }
        if let Some(p) = probs.iter().find(|&&p| p < alpha.alpha()) {
            return Err(OracleError::InvalidDistribution(format!(
                "entry {p} below the floor alpha={}",
                alpha.alpha()
            )));
        }
        Ok(ClassDistribution { probs, alpha })
    }

    /// A distribution floored at its own minimum entry (clamped to `1/k` so
    /// the floor stays in range when rounding pushes the minimum above it).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, OracleError> {
        let k = probs.len();
        if k < 2 {
            return Err(OracleError::InvalidDistribution(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let alpha = AlphaFloor::new(min.min(1.0 / k as f64), k)?;
        ClassDistribution::new(probs, alpha)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alpha(&self) -> AlphaFloor {
        self.alpha
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Guard against combinatorial blowup: enumeration refuses to start if the
/// term count exceeds `max_terms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    max_terms: u64,
}

impl EnumerationBudget {
    pub const DEFAULT_MAX_TERMS: u64 = 2_000_000;

    pub fn new(max_terms: u64) -> Result<Self, OracleError> {
        if max_terms == 0 {
            return Err(OracleError::InvalidBudget);
        }
        Ok(EnumerationBudget { max_terms })
    }

    pub fn max_terms(self) -> u64 {
        self.max_terms
    }
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_terms: Self::DEFAULT_MAX_TERMS }
    }
}

/// Oracle output at a single outcome.
///
/// `per_class_likelihood` is scaled so its maximum is 1 — the common
/// constant cancels in the leakage ratio — and `marginal` uses the same
/// scale, so `pml = log(1/marginal)` up to round-off.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub outcome: NoisyHistogram,
    pub per_class_likelihood: Vec<f64>,
    pub marginal: f64,
    /// Realized leakage at the outcome, in nats.
    pub pml: f64,
    /// 1-based class with the largest conditional likelihood.
    pub argmax_class: usize,
}

/// Realized leakage `log(max_c L_c / Σ_c p_c L_c)` from already-computed
/// per-class likelihoods. Any common positive scaling of the likelihoods
/// cancels, which is why enumeration may drop `(1/2b)^k`.
pub fn pml_from_likelihoods(likelihoods: &[f64], probs: &[f64]) -> Result<f64, OracleError> {
    if likelihoods.len() != probs.len() {
        return Err(OracleError::DimensionMismatch { got: likelihoods.len(), want: probs.len() });
    }
    if likelihoods.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(OracleError::InvalidDistribution(
            "likelihoods must be positive and finite".into(),
        ));
    }
    let max = likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let marginal: f64 = likelihoods.iter().zip(probs).map(|(l, p)| l * p).sum();
    Ok((max / marginal).ln().max(0.0))
}

/// Exact PML of the Laplace histogram release at outcome `y`, for a database
/// of `n` i.i.d. records with class distribution `p` and noise scale `b`.
pub fn exact_pml(
    y: &NoisyHistogram,
    p: &ClassDistribution,
    n: usize,
    b: NoiseScale,
    budget: EnumerationBudget,
) -> Result<LeakageReport, OracleError> {
    let k = p.k();
    if y.k() != k {
        return Err(OracleError::DimensionMismatch { got: y.k(), want: k });
    }
    if n == 0 {
        return Err(OracleError::EmptyDatabase);
    }
    let t = n - 1;
    let required = compositions_count(t, k);
    if required > budget.max_terms() as u128 {
        return Err(OracleError::BudgetExceeded { required, max_terms: budget.max_terms() });
    }

    let ln_fact = ln_factorials(t);
    let ln_p: Vec<f64> = p.probs().iter().map(|&q| q.ln()).collect();
    let inv_b = 1.0 / b.get();
    let ys = y.values();

    // Streaming max-shifted log-sum-exp accumulator per class.
    let mut max_log = vec![f64::NEG_INFINITY; k];
    let mut sums = vec![0.0f64; k];
    for_each_composition(t, k, |m| {
        // ln multinomial(t; p)(m) plus the joint log-density exponent with
        // record 1 excluded.
        let mut ln_w = ln_fact[t];
        let mut base = 0.0;
        for j in 0..k {
            ln_w += m[j] as f64 * ln_p[j] - ln_fact[m[j] as usize];
            base -= (ys[j] - m[j] as f64).abs() * inv_b;
        }
        // Placing record 1 in class c shifts bin c by one; only that bin's
        // |·| term changes.
        for c in 0..k {
            let yc = ys[c] - m[c] as f64;
            let l = ln_w + base + (yc.abs() - (yc - 1.0).abs()) * inv_b;
            if l > max_log[c] {
                sums[c] = sums[c] * (max_log[c] - l).exp() + 1.0;
                max_log[c] = l;
            } else {
                sums[c] += (l - max_log[c]).exp();
            }
        }
    });

    let log_l: Vec<f64> = (0..k).map(|c| max_log[c] + sums[c].ln()).collect();
    let (argmax0, log_l_max) = log_l
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("k >= 2 classes");
    // log Σ_c p_c L_c, shifted by the max conditional.
    let marginal: f64 = (0..k).map(|c| (ln_p[c] + log_l[c] - log_l_max).exp()).sum();
    // Clamped at zero: an exact tie across classes can round to -1e-17.
    let pml = (-marginal.ln()).max(0.0);
    Ok(LeakageReport {
        outcome: y.clone(),
        per_class_likelihood: log_l.iter().map(|&l| (l - log_l_max).exp()).collect(),
        marginal,
        pml,
        argmax_class: argmax0 + 1,
    })
}

/// Outcome at which the tight bound is attained when class 1 carries the
/// minimum probability: all mass on bin 1 (`y_1 = n`), zero elsewhere.
pub fn tightness_witness(n: usize, k: usize) -> Result<NoisyHistogram, OracleError> {
    if n == 0 {
        return Err(OracleError::EmptyDatabase);
    }
    let mut values = vec![0.0; k];
    if k < 2 {
        return Err(OracleError::InvalidDistribution(format!("need at least 2 classes, got {k}")));
    }
    values[0] = n as f64;
    NoisyHistogram::new(values).map_err(|e| OracleError::InvalidDistribution(e.to_string()))
}

/// An outcome whose realized leakage exceeded the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub outcome: Vec<f64>,
    pub pml: f64,
    /// `pml - bound`; positive beyond [`BOUND_SLACK`].
    pub excess: f64,
}

/// Outcome sweep summary from [`verify_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// The closed-form bound `eps_pml_tight(b, alpha)` being checked.
    pub bound: f64,
    /// Number of outcomes evaluated (adversarial grid plus sampled trials).
    pub evaluated: usize,
    /// Largest realized leakage seen.
    pub max_pml: f64,
    /// Outcome achieving `max_pml`.
    pub max_outcome: Vec<f64>,
    /// Realized leakage at the all-mass-on-bin-1 witness.
    pub witness_pml: f64,
    /// `bound - witness_pml`; near zero when class 1 attains the floor.
    pub witness_gap: f64,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    /// True when no evaluated outcome exceeded the bound.
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sweep outcomes and check the realized leakage never exceeds
/// `eps_pml_tight(b, p.alpha())` plus [`BOUND_SLACK`].
///
/// The sweep covers an adversarial grid — the tightness witness, its
/// negation, the all-zero and all-`n` outcomes, and half-integer offsets of
/// the witness and of the balanced histogram — plus `trials` outcomes drawn
/// by running the mechanism on fresh databases sampled from `p`.
pub fn verify_bound(
    p: &ClassDistribution,
    n: usize,
    b: NoiseScale,
    trials: u32,
    budget: EnumerationBudget,
    s: &RandomStream,
) -> Result<VerifyReport, OracleError> {
    if n == 0 {
        return Err(OracleError::EmptyDatabase);
    }
    let k = p.k();
    let bound = eps_pml_tight(b, p.alpha()).nats();
    let nf = n as f64;

    let witness = tightness_witness(n, k)?;
    let mut outcomes: Vec<NoisyHistogram> = vec![witness.clone()];
    let grid: Vec<Vec<f64>> = {
        let w = witness.values();
        let balanced = vec![nf / k as f64; k];
        vec![
            w.iter().map(|v| -v).collect(),
            vec![0.0; k],
            vec![nf; k],
            w.iter().map(|v| v + 0.5).collect(),
            w.iter().map(|v| v - 0.5).collect(),
            balanced.iter().map(|v| v + 0.5).collect(),
            balanced.iter().map(|v| v - 0.5).collect(),
        ]
    };
    for values in grid {
        outcomes.push(
            NoisyHistogram::new(values)
                .map_err(|e| OracleError::InvalidDistribution(e.to_string()))?,
        );
    }
    for trial in 0..trials {
        let stream = s.child(trial as u64);
        let data = sample_dataset(p, n, &mut stream.child(0));
        let (noisy, _) = privatize(&histogram(&data), b, &mut stream.child(1));
        outcomes.push(noisy);
    }

    let mut max_pml = f64::NEG_INFINITY;
    let mut max_outcome = Vec::new();
    let mut witness_pml = 0.0;
    let mut violations = Vec::new();
    for (i, y) in outcomes.iter().enumerate() {
        let report = exact_pml(y, p, n, b, budget)?;
        if i == 0 {
            witness_pml = report.pml;
        }
        if report.pml > max_pml {
            max_pml = report.pml;
            max_outcome = y.values().to_vec();
        }
        if report.pml > bound + BOUND_SLACK {
            violations.push(Violation {
                outcome: y.values().to_vec(),
                pml: report.pml,
                excess: report.pml - bound,
            });
        }
    }

    Ok(VerifyReport {
        bound,
        evaluated: outcomes.len(),
        max_pml,
        max_outcome,
        witness_pml,
        witness_gap: bound - witness_pml,
        violations,
    })
}

/// `n` i.i.d. labels drawn from `p` by inverting the CDF of the class index.
fn sample_dataset(p: &ClassDistribution, n: usize, s: &mut RandomStream) -> Dataset {
    let k = p.k();
    let labels = (0..n)
        .map(|_| {
            let u = s.next_f64();
            let mut acc = 0.0;
            for (j, &q) in p.probs().iter().enumerate() {
                acc += q;
                if u < acc {
                    return (j + 1) as u32;
                }
            }
            k as u32
        })
        .collect();
    Dataset::new(labels, k).expect("labels constructed in range")
}

/// `C(t + k - 1, k - 1)`: number of weak compositions of `t` into `k`
/// parts; saturates at `u128::MAX` on overflow.
fn compositions_count(t: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..k {
        // Multiplying C(t+i-1, i-1) by (t+i)/i keeps the value integral.
        c = match c.checked_mul((t + i) as u128) {
            Some(v) => v / i as u128,
            None => return u128::MAX,
        };
    }
    c
}

/// `ln(i!)` for `i = 0..=t`.
fn ln_factorials(t: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(t + 1);
    table.push(0.0);
    for i in 1..=t {
        table.push(table[i - 1] + (i as f64).ln());
    }
    table
}

/// Visit every weak composition of `t` into `k` parts, in reverse
/// lexicographic order starting from `(t, 0, ..., 0)`.
fn for_each_composition(t: usize, k: usize, mut visit: impl FnMut(&[u64])) {
    let t = t as u64;
    let mut m = vec![0u64; k];
    m[0] = t;
    loop {
        visit(&m);
        if m[k - 1] == t {
            return;
        }
        let j = (0..k - 1).rfind(|&j| m[j] > 0).expect("mass remains left of the last part");
        let tail: u64 = m[j + 1..].iter().sum();
        m[j] -= 1;
        m[j + 1..].iter_mut().for_each(|v| *v = 0);
        m[j + 1] = tail + 1;
    }
}

#[cfg(test)]
// Frozen reference values keep every digit the high-precision oracle
// produced, one or two past what f64 retains.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::bounds::{eps_pml_tight, AlphaFloor, NoiseScale};

    fn scale(b: f64) -> NoiseScale {
        NoiseScale::new(b).unwrap()
    }

    fn outcome(values: &[f64]) -> NoisyHistogram {
        NoisyHistogram::new(values.to_vec()).unwrap()
    }

    fn dist(probs: &[f64]) -> ClassDistribution {
        ClassDistribution::from_probs(probs.to_vec()).unwrap()
    }

    #[test]
    fn composition_enumeration_is_exhaustive_and_ordered() {
        assert_eq!(compositions_count(2, 3), 6);
        let mut seen = Vec::new();
        for_each_composition(2, 3, |m| seen.push(m.to_vec()));
        assert_eq!(
            seen,
            vec![
                vec![2, 0, 0],
                vec![1, 1, 0],
                vec![1, 0, 1],
                vec![0, 2, 0],
                vec![0, 1, 1],
                vec![0, 0, 2],
            ]
        );
        // Degenerate cases: nothing to distribute, or a single record.
        let mut count = 0;
        for_each_composition(0, 4, |m| {
            assert_eq!(m, &[0, 0, 0, 0]);
            count += 1;
        });
        assert_eq!(count, 1);
        assert_eq!(compositions_count(0, 5), 1);
        assert_eq!(compositions_count(3, 2), 4);
    }

    #[test]
    fn budget_is_checked_before_any_work() {
        // n=50, k=10 needs C(58,9) = 10_648_873_950 terms.
        let p = ClassDistribution::new(vec![0.1; 10], AlphaFloor::new(0.1, 10).unwrap()).unwrap();
        let y = outcome(&[0.0; 10]);
        let err = exact_pml(&y, &p, 50, scale(1.0), EnumerationBudget::default()).unwrap_err();
        assert_eq!(
            err,
            OracleError::BudgetExceeded { required: 10_648_873_950, max_terms: 2_000_000 }
        );
    }

    #[test]
    fn single_record_matches_the_two_term_closed_form() {
        // n=1, p=(1/2,1/2), b=1, y=(1,0): pml = -ln(1/2 + e^{-2}/2).
        let p = dist(&[0.5, 0.5]);
        let report =
            exact_pml(&outcome(&[1.0, 0.0]), &p, 1, scale(1.0), EnumerationBudget::default())
                .unwrap();
        let want = -(0.5 + 0.5 * (-2.0f64).exp()).ln();
        assert!((report.pml - want).abs() < 1e-12, "{} vs {want}", report.pml);
        assert!((report.pml - 0.566_219_169_516_972_81).abs() < 1e-12);
        assert_eq!(report.argmax_class, 1);
        // ... which is exactly the tight bound at alpha = 1/2.
        let bound = eps_pml_tight(scale(1.0), AlphaFloor::new(0.5, 2).unwrap()).nats();
        assert!((report.pml - bound).abs() < 1e-12);
    }

    #[test]
    fn symmetric_outcome_leaks_nothing() {
        let p = dist(&[0.5, 0.5]);
        let report =
            exact_pml(&outcome(&[0.5, 0.5]), &p, 1, scale(1.0), EnumerationBudget::default())
                .unwrap();
        // Exactly zero up to log-sum-exp rounding; the clamp rules out
        // negative values, so only a sub-ulp positive residue can remain.
        assert!(report.pml >= 0.0 && report.pml < 1e-12, "pml {}", report.pml);
        assert!((report.marginal - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_frozen_values() {
        // Reference values computed with an independent 50-digit evaluation
        // of the same sum.
        let p = dist(&[0.3, 0.7]);
        let report =
            exact_pml(&outcome(&[1.5, 0.5]), &p, 3, scale(2.0), EnumerationBudget::default())
                .unwrap();
        assert!((report.pml - 0.339_901_058_961_979_2).abs() < 1e-12, "{}", report.pml);

        let p = dist(&[0.2, 0.3, 0.5]);
        let report = exact_pml(
            &outcome(&[0.5, -0.25, 1.75]),
            &p,
            2,
            scale(1.0),
            EnumerationBudget::default(),
        )
        .unwrap();
        assert!((report.pml - 0.415_835_312_688_374_35).abs() < 1e-12, "{}", report.pml);
    }

    #[test]
    fn witness_attains_the_bound_when_class_one_is_the_minimum() {
        // n=3, k=2, p=(0.3,0.7), b=2: leakage at y=(3,0) equals the bound
        // at alpha=0.3.
        let p = dist(&[0.3, 0.7]);
        let y = tightness_witness(3, 2).unwrap();
        assert_eq!(y.values(), &[3.0, 0.0]);
        let report = exact_pml(&y, &p, 3, scale(2.0), EnumerationBudget::default()).unwrap();
        let bound = eps_pml_tight(scale(2.0), p.alpha()).nats();
        assert!((report.pml - bound).abs() < 1e-9, "{} vs {bound}", report.pml);
        assert_eq!(report.argmax_class, 1);
    }

    #[test]
    fn likelihood_ratio_report_is_consistent() {
        let p = dist(&[0.25, 0.75]);
        let report =
            exact_pml(&outcome(&[2.0, 1.0]), &p, 3, scale(1.5), EnumerationBudget::default())
                .unwrap();
        let max = report.per_class_likelihood.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        let marginal: f64 =
            report.per_class_likelihood.iter().zip(p.probs()).map(|(l, q)| l * q).sum();
        assert!((marginal - report.marginal).abs() < 1e-12);
        let direct = pml_from_likelihoods(&report.per_class_likelihood, p.probs()).unwrap();
        assert!((direct - report.pml).abs() < 1e-12);
    }

    #[test]
    fn verify_passes_on_a_fair_coin_instance() {
        let p = dist(&[0.5, 0.5]);
        let stream = RandomStream::new(99);
        let report =
            verify_bound(&p, 2, scale(1.0), 200, EnumerationBudget::default(), &stream).unwrap();
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert_eq!(report.evaluated, 208);
        // alpha = min p and class 1 attains it, so the witness is tight.
        assert!(report.witness_gap.abs() <= 1e-9, "gap {}", report.witness_gap);
        assert!(report.max_pml <= report.bound + BOUND_SLACK);
    }

    #[test]
    fn floor_below_the_minimum_leaves_a_strict_gap() {
        // alpha=0.1 < min p = 0.5: the bound is computed at the looser
        // floor, so every outcome sits strictly below it.
        let p = ClassDistribution::new(vec![0.5, 0.5], AlphaFloor::new(0.1, 2).unwrap()).unwrap();
        let stream = RandomStream::new(7);
        let report =
            verify_bound(&p, 2, scale(1.0), 100, EnumerationBudget::default(), &stream).unwrap();
        assert!(report.passed());
        assert!(report.witness_gap > 1e-3, "gap {}", report.witness_gap);
        assert!(report.max_pml < report.bound);
    }

    #[test]
    fn distribution_validation() {
        assert!(ClassDistribution::from_probs(vec![0.6, 0.5]).is_err());
        assert!(ClassDistribution::from_probs(vec![1.0]).is_err());
        assert!(ClassDistribution::from_probs(vec![0.25; 4]).is_ok());
        let floor = AlphaFloor::new(0.3, 2).unwrap();
        assert!(ClassDistribution::new(vec![0.2, 0.8], floor).is_err());
        assert!(EnumerationBudget::new(0).is_err());
    }

    #[test]
    fn witness_shape() {
        assert_eq!(tightness_witness(1, 2).unwrap().values(), &[1.0, 0.0]);
        assert_eq!(tightness_witness(3, 3).unwrap().values(), &[3.0, 0.0, 0.0]);
        assert!(tightness_witness(0, 2).is_err());
    }
}
