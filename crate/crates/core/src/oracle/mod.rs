//! Probability oracles: prompt text in, distribution over a fixed choice set out.
//!
//! Every backend implements [`Oracle`]. Synthetic oracles additionally look at
//! the structured field view carried by a [`Query`]; remote oracles only see
//! the prompt text.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod cache;
pub mod config;
pub mod remote;
pub mod synthetic;

pub use cache::{cache_key, cached_evaluate, cached_evaluate_keyed, CacheError, CacheStats, CallRecord, ResponseCache};
pub use config::{parse_model_flag, OracleConfig};
pub use remote::{RemoteConfig, RemoteOracle};
pub use synthetic::{AdditiveOracle, LogisticOracle, TabularOracle};

/// Tolerance for a distribution's total mass.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid choice spec: {0}")]
    InvalidChoiceSpec(String),
    #[error("oracle unreachable after {attempts} attempt(s): {reason}")]
    OracleUnreachable { attempts: u32, reason: String },
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("non-finite probability for label `{label}`")]
    NonFiniteProbability { label: String },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("synthetic weights leave [0, 1]: attainable range is [{low}, {high}]")]
    WeightRangeViolation { low: f64, high: f64 },
    #[error("oracle expects {expected} fields, query carries {got}")]
    FieldCountMismatch { expected: usize, got: usize },
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Choice labels offered to the model and the label whose probability is attributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawChoiceSpec", into = "RawChoiceSpec")]
pub struct ChoiceSpec {
    labels: Vec<String>,
    target: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChoiceSpec {
    labels: Vec<String>,
    target: String,
}

impl TryFrom<RawChoiceSpec> for ChoiceSpec {
    type Error = OracleError;
    fn try_from(raw: RawChoiceSpec) -> Result<Self, Self::Error> {
        ChoiceSpec::new(raw.labels, raw.target)
    }
}

impl From<ChoiceSpec> for RawChoiceSpec {
    fn from(spec: ChoiceSpec) -> Self {
        RawChoiceSpec {
            labels: spec.labels,
            target: spec.target,
        }
    }
}

impl ChoiceSpec {
    pub fn new<S: Into<String>>(labels: Vec<String>, target: S) -> Result<Self, OracleError> {
        let target = target.into();
        if labels.is_empty() {
            return Err(OracleError::InvalidChoiceSpec("no labels".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(OracleError::InvalidChoiceSpec("empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(OracleError::InvalidChoiceSpec(format!("duplicate label `{l}`")));
            }
        }
        if !seen.contains(target.as_str()) {
            return Err(OracleError::InvalidChoiceSpec(format!(
                "target `{target}` is not one of the labels"
            )));
        }
        Ok(ChoiceSpec { labels, target })
    }

    /// `["A", "B"]` targeting `A`.
    pub fn binary_ab() -> Self {
        ChoiceSpec::new(vec!["A".into(), "B".into()], "A").unwrap()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn target(&self) -> &str {
        &self.target
    }
}

/// Probabilities over the labels of a [`ChoiceSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChoiceDistribution {
    probs: BTreeMap<String, f64>,
}

impl ChoiceDistribution {
    /// Validates coverage, range and normalization against `spec`.
    pub fn new(spec: &ChoiceSpec, probs: BTreeMap<String, f64>) -> Result<Self, OracleError> {
        for (label, &p) in &probs {
            if !p.is_finite() {
                return Err(OracleError::NonFiniteProbability {
                    label: label.clone(),
                });
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(OracleError::InvalidDistribution(format!(
                    "probability {p} for `{label}` outside [0, 1]"
                )));
            }
        }
        if probs.len() != spec.labels().len()
            || spec.labels().iter().any(|l| !probs.contains_key(l))
        {
            return Err(OracleError::InvalidDistribution(
                "labels do not match the choice spec".into(),
            ));
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(OracleError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(ChoiceDistribution { probs })
    }

    /// `target_prob` on the target; the remainder split evenly over the other labels.
    pub fn from_target_probability(spec: &ChoiceSpec, target_prob: f64) -> Result<Self, OracleError> {
        if !target_prob.is_finite() {
            return Err(OracleError::NonFiniteProbability {
                label: spec.target().to_string(),
            });
        }
        let others = spec.labels().len() - 1;
        let probs = if others == 0 {
            spec.labels().iter().map(|l| (l.clone(), 1.0)).collect()
        } else {
            let rest = (1.0 - target_prob) / others as f64;
            spec.labels()
                .iter()
                .map(|l| {
                    let p = if l == spec.target() { target_prob } else { rest };
                    (l.clone(), p)
                })
                .collect()
        };
        ChoiceDistribution::new(spec, probs)
    }

    /// Normalizes nonnegative scores over the spec's labels.
    pub fn from_scores(spec: &ChoiceSpec, scores: &BTreeMap<String, f64>) -> Result<Self, OracleError> {
        let total: f64 = spec
            .labels()
            .iter()
            .map(|l| scores.get(l).copied().unwrap_or(0.0))
            .sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(OracleError::MalformedResponse(
                "no probability mass on any choice label".into(),
            ));
        }
        let probs = spec
            .labels()
            .iter()
            .map(|l| (l.clone(), scores.get(l).copied().unwrap_or(0.0) / total))
            .collect();
        ChoiceDistribution::new(spec, probs)
    }

    pub fn probs(&self) -> &BTreeMap<String, f64> {
        &self.probs
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.probs.get(label).copied()
    }
}

/// Probability of the spec's target label.
pub fn choice_probability(dist: &ChoiceDistribution, spec: &ChoiceSpec) -> f64 {
    dist.get(spec.target()).unwrap_or(0.0)
}

/// Field values a prompt was rendered from, alongside the reference values.
#[derive(Debug, Clone, Copy)]
pub struct FieldView<'a> {
    pub values: &'a [String],
    pub reference: &'a [String],
}

impl FieldView<'_> {
    /// Field `i` (0-based) is present when its value differs from the reference.
    pub fn is_present(&self, i: usize) -> bool {
        self.values[i] != self.reference[i]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub prompt: &'a str,
    pub fields: Option<FieldView<'a>>,
}

impl<'a> Query<'a> {
    pub fn text(prompt: &'a str) -> Self {
        Query { prompt, fields: None }
    }
}

pub trait Oracle: Send + Sync {
    /// Stable identity string; part of every cache key.
    fn identity(&self) -> String;

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for std::sync::Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        (**self).evaluate(query, spec)
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        (**self).evaluate(query, spec)
    }
}

/// Evaluates a bare prompt.
pub fn evaluate(
    oracle: &dyn Oracle,
    prompt: &str,
    spec: &ChoiceSpec,
) -> Result<ChoiceDistribution, OracleError> {
    oracle.evaluate(&Query::text(prompt), spec)
}

/// Wraps an oracle and counts the calls that reach it.
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(query, spec)
    }
}
