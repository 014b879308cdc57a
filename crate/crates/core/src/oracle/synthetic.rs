//! In-process oracles with known structure, used as ground truth for the estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChoiceDistribution, ChoiceSpec, FieldView, Oracle, OracleError, Query};

/// Grid the additive weights are snapped to. Every partial sum of grid values
/// in [-2, 2] is exactly representable, so marginals come out bit-exact.
const WEIGHT_GRID: f64 = 1.0 / (1u64 << 40) as f64;

fn snap(w: f64) -> f64 {
    (w / WEIGHT_GRID).round() * WEIGHT_GRID
}

fn digest_f64s(values: impl IntoIterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn check_fields<'a>(query: &Query<'a>, expected: usize) -> Result<Option<FieldView<'a>>, OracleError> {
    match query.fields {
        Some(view) if view.values.len() != expected || view.reference.len() != expected => {
            Err(OracleError::FieldCountMismatch {
                expected,
                got: view.values.len(),
            })
        }
        other => Ok(other),
    }
}

/// `P(target) = c₀ + Σ cᵢ·presentᵢ`, where a field is present when its value
/// differs from the reference. A bare prompt has no fields present.
#[derive(Debug, Clone)]
pub struct AdditiveOracle {
    base: f64,
    weights: Vec<f64>,
}

impl AdditiveOracle {
    pub fn new(base: f64, weights: Vec<f64>) -> Result<Self, OracleError> {
        if !base.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(OracleError::InvalidConfig("non-finite additive weight".into()));
        }
        let base = snap(base);
        let weights: Vec<f64> = weights.into_iter().map(snap).collect();
        let high = base + weights.iter().filter(|w| **w > 0.0).sum::<f64>();
        let low = base + weights.iter().filter(|w| **w < 0.0).sum::<f64>();
        if low < 0.0 || high > 1.0 {
            return Err(OracleError::WeightRangeViolation { low, high });
        }
        Ok(AdditiveOracle { base, weights })
    }

    /// Base after snapping to the weight grid.
    pub fn base(&self) -> f64 {
        self.base
    }

    /// Weights after snapping to the weight grid.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn target_probability(&self, view: Option<FieldView<'_>>) -> f64 {
        let mut p = self.base;
        if let Some(view) = view {
            for (i, w) in self.weights.iter().enumerate() {
                if view.is_present(i) {
                    p += w;
                }
            }
        }
        p
    }
}

impl Oracle for AdditiveOracle {
    fn identity(&self) -> String {
        format!(
            "synthetic:additive:{}",
            digest_f64s(std::iter::once(self.base).chain(self.weights.iter().copied()))
        )
    }

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        let view = check_fields(query, self.weights.len())?;
        ChoiceDistribution::from_target_probability(spec, self.target_probability(view))
    }
}

/// `P(target) = σ(b + Σ wᵢ·presentᵢ)` with bias and weights drawn from the seed.
#[derive(Debug, Clone)]
pub struct LogisticOracle {
    seed: u64,
    bias: f64,
}

const LOGISTIC_BIAS_STREAM: u64 = u64::MAX;

impl LogisticOracle {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(LOGISTIC_BIAS_STREAM);
        let bias = rng.random_range(-1.0..1.0);
        LogisticOracle { seed, bias }
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Coefficient of field `index` (1-based), in [-2, 2).
    pub fn weight(&self, index: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng.random_range(-2.0..2.0)
    }
}

impl Oracle for LogisticOracle {
    fn identity(&self) -> String {
        format!("synthetic:logistic:{}", self.seed)
    }

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        let mut logit = self.bias;
        if let Some(view) = query.fields {
            for i in 0..view.values.len() {
                if view.is_present(i) {
                    logit += self.weight(i + 1);
                }
            }
        }
        let p = 1.0 / (1.0 + (-logit).exp());
        ChoiceDistribution::from_target_probability(spec, p)
    }
}

/// Nonlinear value functions for stress-testing estimators.
#[derive(Debug, Clone)]
pub enum TabularOracle {
    /// Pseudo-random `P(target)` in [0.2, 0.8), keyed by hash of (seed, prompt text).
    Seeded { seed: u64 },
    /// Explicit `P(target)` per presence bitmask; bit `i-1` is field `i`.
    Table { field_count: usize, values: Vec<f64> },
}

impl TabularOracle {
    pub fn seeded(seed: u64) -> Self {
        TabularOracle::Seeded { seed }
    }

    pub fn table(values: Vec<f64>) -> Result<Self, OracleError> {
        if values.is_empty() || !values.len().is_power_of_two() {
            return Err(OracleError::InvalidConfig(format!(
                "value table length {} is not a power of two",
                values.len()
            )));
        }
        let field_count = values.len().trailing_zeros() as usize;
        if field_count > 24 {
            return Err(OracleError::InvalidConfig("value table too large".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OracleError::InvalidConfig(format!(
                "table probability {v} outside [0, 1]"
            )));
        }
        Ok(TabularOracle::Table { field_count, values })
    }

    fn seeded_probability(seed: u64, prompt: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(prompt.as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let unit = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
        0.2 + 0.6 * unit
    }
}

impl Oracle for TabularOracle {
    fn identity(&self) -> String {
        match self {
            TabularOracle::Seeded { seed } => format!("synthetic:tabular:{seed}"),
            TabularOracle::Table { values, .. } => {
                format!("synthetic:tabular:table:{}", digest_f64s(values.iter().copied()))
            }
        }
    }

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        let p = match self {
            TabularOracle::Seeded { seed } => Self::seeded_probability(*seed, query.prompt),
            TabularOracle::Table { field_count, values } => {
                let mask = match check_fields(query, *field_count)? {
                    Some(view) => (0..*field_count)
                        .filter(|&i| view.is_present(i))
                        .fold(0usize, |m, i| m | (1 << i)),
                    None => 0,
                };
                values[mask]
            }
        };
        ChoiceDistribution::from_target_probability(spec, p)
    }
}
