//! The Laplace release pipeline: seedable splittable randomness, histogram
//! computation, noising, sanitization (clip at zero, round to the nearest
//! integer), and the total variation distance used to score utility.
//!
//! All randomness flows through [`RandomStream`], a counter-based generator
//! addressed by a root seed plus a path of child labels. Any (seed, path)
//! pair reproduces the same draws regardless of scheduling, which is what
//! makes the parallel experiment sweeps bit-stable. Laplace noise is drawn
//! by inverse CDF from a single uniform per value, so a noise value occupies
//! exactly one stream position and scales linearly in `b` — two mechanisms
//! fed the same stream see proportional noise (common random numbers).

use crate::bounds::NoiseScale;
use thiserror::Error;

/// Errors from dataset construction, ingestion, or distribution checks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MechanismError {
    #[error("dataset must contain at least one label")]
    EmptyDataset,
    #[error("bin count k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("label {label} out of range 1..={k}")]
    LabelOutOfRange { label: u32, k: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("outcome value at bin {index} is not finite: {value}")]
    NonFiniteOutcome { index: usize, value: f64 },
    #[error("distributions have mismatched lengths {left} and {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("vector sums to {sum}, expected a distribution summing to 1")]
    NotNormalized { sum: f64 },
}

/// Weyl increment for the output counter (the SplitMix64 gamma).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; a bijective 64-bit mixer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable counter-based random stream.
///
/// Output `i` is `mix64(key + GAMMA*i)`; [`RandomStream::child`] re-keys with
/// a mixed label, so sibling streams (different labels) and parent/child
/// streams are statistically independent. A stream is addressed purely by
/// values — seed plus the labels on the path from the root — so the same
/// address always replays the same sequence, from any thread.
#[derive(Debug, Clone)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    /// Root stream for a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        RandomStream { key: mix64(seed), counter: 0 }
    }

    /// Derive the child stream with the given label. Does not consume or
    /// depend on this stream's position, only on its address.
    pub fn child(&self, label: u64) -> Self {
        RandomStream { key: mix64(self.key ^ mix64(label.wrapping_add(GOLDEN_GAMMA))), counter: 0 }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(GOLDEN_GAMMA.wrapping_mul(self.counter)))
    }

    /// Uniform on `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(-1/2, 1/2)`.
    ///
    /// Built from a 53-bit integer shifted to the half-open lattice
    /// `{(i + 1/2) * 2^-53}`, every step exact in double precision, so the
    /// endpoints (where the Laplace inverse CDF diverges) can never occur.
    fn next_symmetric(&mut self) -> f64 {
        let i = (self.next_u64() >> 11) as i64;
        ((i - (1i64 << 52)) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// One draw from the zero-mean Laplace distribution with scale `b`.
pub fn laplace_sample(s: &mut RandomStream, b: NoiseScale) -> f64 {
    laplace_inv_cdf(s.next_symmetric(), b.get())
}

/// Inverse CDF of `Lap(b)` against a centered uniform `u` on `(-1/2, 1/2)`:
/// `x = -b * sign(u) * ln(1 - 2|u|)`.
fn laplace_inv_cdf(u: f64, b: f64) -> f64 {
    -b * u.signum() * 2.0f64.mul_add(-u.abs(), 1.0).ln()
}

/// A pre-classified database: `n` one-based class labels over `k` bins.
///
/// Raw-record binning is an ingestion concern; the release mechanism only
/// ever needs class membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    labels: Vec<u32>,
    k: usize,
}

impl Dataset {
    /// Requires `k >= 2`, at least one label, and every label in `1..=k`.
    pub fn new(labels: Vec<u32>, k: usize) -> Result<Self, MechanismError> {
        // A zero label is out of range for every k, so report it as such
        // even when k itself is bad (e.g. inferred as 1 from a labels-only
        // file that contains a 0).
        if let Some(&bad) = labels.iter().find(|&&l| l < 1) {
            return Err(MechanismError::LabelOutOfRange { label: bad, k });
        }
        if k < 2 {
            return Err(MechanismError::InvalidK(k));
        }
        if labels.is_empty() {
            return Err(MechanismError::EmptyDataset);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > k) {
            return Err(MechanismError::LabelOutOfRange { label: bad, k });
        }
        Ok(Dataset { labels, k })
    }

    /// Parse a label file: one 1-based integer label per line.
    ///
    /// An optional `k=<int>` header declares the bin count; otherwise `k` is
    /// inferred as the maximum label. A single-column CSV with a `label`
    /// header is accepted as the same format. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, MechanismError> {
        let mut declared: Option<usize> = None;
        let mut labels = Vec::new();
        let mut in_data = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !in_data {
                if let Some(rest) = line.strip_prefix("k=") {
                    if declared.is_some() {
                        return Err(parse_err(idx, "duplicate k= header"));
                    }
                    declared = Some(rest.trim().parse().map_err(|_| {
                        parse_err(idx, format!("invalid bin count {:?}", rest.trim()))
                    })?);
                    continue;
                }
                if line == "label" {
                    in_data = true;
                    continue;
                }
            }
            in_data = true;
            let label: u32 = line
                .parse()
                .map_err(|_| parse_err(idx, format!("expected a class label, got {line:?}")))?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(MechanismError::EmptyDataset);
        }
        let max = usize::try_from(*labels.iter().max().expect("nonempty")).expect("u32 fits");
        let k = match declared {
            Some(k) => k,
            None => max,
        };
        Dataset::new(labels, k)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

fn parse_err(idx: usize, message: impl Into<String>) -> MechanismError {
    MechanismError::Parse { line: idx + 1, message: message.into() }
}

/// Exact per-bin counts of a dataset; sums to `n` by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
}

impl Histogram {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Empirical distribution; `None` if all counts are zero (impossible for
    /// a histogram built from a nonempty dataset).
    pub fn normalize(&self) -> Option<Vec<f64>> {
        normalize(&self.counts)
    }
}

/// Real-valued noisy counts before post-processing (the raw outcome the
/// leakage oracle evaluates).
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyHistogram {
    values: Vec<f64>,
}

impl NoisyHistogram {
    /// Requires at least two bins and finite values.
    pub fn new(values: Vec<f64>) -> Result<Self, MechanismError> {
        if values.len() < 2 {
            return Err(MechanismError::InvalidK(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MechanismError::NonFiniteOutcome { index, value });
        }
        Ok(NoisyHistogram { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }
}

/// Noisy counts clipped at zero and rounded: the published release. The sum
/// is unconstrained (noise moves mass in and out).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SanitizedHistogram {
    counts: Vec<u64>,
}

impl SanitizedHistogram {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Released distribution; `None` when every sanitized count is zero.
    pub fn normalize(&self) -> Option<Vec<f64>> {
        normalize(&self.counts)
    }
}

/// Count class memberships: `counts[j]` = number of labels equal to `j+1`.
pub fn histogram(d: &Dataset) -> Histogram {
    let mut counts = vec![0u64; d.k()];
    for &label in d.labels() {
        counts[(label - 1) as usize] += 1;
    }
    Histogram { counts }
}

/// Add `Lap(b)` noise to each count, then sanitize: clip at zero and round
/// half away from zero. Both the raw noisy values and the sanitized counts
/// are returned so verification can inspect the pre-rounding outcome.
pub fn privatize(
    h: &Histogram,
    b: NoiseScale,
    s: &mut RandomStream,
) -> (NoisyHistogram, SanitizedHistogram) {
    let noisy = NoisyHistogram {
        values: h.counts().iter().map(|&c| c as f64 + laplace_sample(s, b)).collect(),
    };
    let sanitized = sanitize(&noisy);
    (noisy, sanitized)
}

/// Post-process raw noisy counts: clip at zero, then round half away from
/// zero. Clipping first makes every value nonnegative, so `round` followed
/// by the integer cast is lossless.
pub fn sanitize(y: &NoisyHistogram) -> SanitizedHistogram {
    SanitizedHistogram { counts: y.values().iter().map(|&v| v.max(0.0).round() as u64).collect() }
}

/// Empirical distribution of nonnegative counts; `None` when the total mass
/// is zero (a degenerate release carrying no information).
pub fn normalize(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let total = total as f64;
    Some(counts.iter().map(|&c| c as f64 / total).collect())
}

/// Total variation distance `0.5 * sum_j |p_j - q_j|` between two
/// distributions of equal length, each summing to 1 within 1e-9.
pub fn tvd(p: &[f64], q: &[f64]) -> Result<f64, MechanismError> {
    if p.len() != q.len() {
        return Err(MechanismError::LengthMismatch { left: p.len(), right: q.len() });
    }
    for dist in [p, q] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MechanismError::NotNormalized { sum });
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `n` i.i.d. labels uniform on `1..=k`, deterministic in (seed, path).
pub fn gen_uniform_dataset(
    n: usize,
    k: usize,
    s: &mut RandomStream,
) -> Result<Dataset, MechanismError> {
    if k < 2 || k > u32::MAX as usize {
        return Err(MechanismError::InvalidK(k));
    }
    if n == 0 {
        return Err(MechanismError::EmptyDataset);
    }
    let labels = (0..n)
        .map(|_| {
            // Fixed-point multiply maps the 64-bit draw onto 1..=k; the bias
            // of k/2^64 is immaterial.
            ((s.next_u64() as u128 * k as u128) >> 64) as u32 + 1
        })
        .collect();
    Ok(Dataset { labels, k })
}
