//! Coalition value function and Shapley estimators.
//!
//! The game: players are template fields, a coalition renders its members
//! with their prompt values and everything else with the reference values,
//! and `v(S) = f(z(x, r, S)) - f(r)` where `f` is the oracle's probability of
//! the target label.
//!
//! Fields whose prompt value equals their reference value cannot change the
//! rendered prompt, so they are null players by construction. Both engines
//! skip them and report `φ = 0`; the player count `N` used for weights,
//! `exact_limit` and call accounting is the number of remaining fields.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{
    cache_key, cached_evaluate_keyed, choice_probability, ChoiceSpec, FieldView, Oracle, OracleError, Query,
    ResponseCache,
};
use crate::template::{compose, Coalition, PromptTemplate, PromptVector, ReferenceVector, TemplateError};

/// Efficiency tolerance for both engines.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-12;

/// Iterations evaluated concurrently before folding into the running mean.
const MC_BLOCK: u64 = 512;

#[derive(Debug, Error)]
pub enum ShapleyError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("oracle failed on coalition {coalition:?}: {source}")]
    Oracle {
        coalition: Vec<usize>,
        #[source]
        source: OracleError,
    },
    #[error("oracle returned a non-finite probability on coalition {coalition:?}")]
    NonFinite { coalition: Vec<usize> },
    #[error(
        "exact Shapley over {players} players needs 2^{players} oracle calls; limit is {limit} players"
    )]
    TooManyFields { players: usize, limit: usize },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error("shapley weight undefined for coalition size {size} with {players} players")]
    DomainError { size: usize, players: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub iterations: u64,
    pub seed: u64,
    pub parallelism: usize,
    pub exact_limit: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            iterations: 3000,
            seed: 0,
            parallelism: 1,
            exact_limit: 12,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), ShapleyError> {
        if self.iterations == 0 {
            return Err(ShapleyError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(ShapleyError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.exact_limit > 30 {
            return Err(ShapleyError::InvalidConfig("exact_limit above 30 is not supported".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, ShapleyError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| ShapleyError::InvalidConfig(e.to_string()))
    }
}

/// Signed per-field attributions with the baseline they are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    /// Field names, in field order.
    pub fields: Vec<String>,
    pub phi: Vec<f64>,
    pub phi0: f64,
    pub f_x: f64,
    pub method: Method,
    pub iterations: Option<u64>,
    pub seed: Option<u64>,
    pub oracle_calls: u64,
    /// Per-field standard error of the Monte Carlo mean (T ≥ 2 only).
    pub std_errors: Option<Vec<f64>>,
}

/// `|Σφᵢ − (f(x) − φ₀)|`.
pub fn efficiency_residual(a: &AttributionVector) -> f64 {
    (a.phi.iter().sum::<f64>() - (a.f_x - a.phi0)).abs()
}

/// `s!(N−s−1)!/N!`, computed as `1 / (N · C(N−1, s))`.
pub fn shapley_weight(size: usize, players: usize) -> Result<f64, ShapleyError> {
    if players == 0 || size >= players {
        return Err(ShapleyError::DomainError { size, players });
    }
    let m = players - 1;
    let k = size.min(m - size);
    let mut binom = 1.0f64;
    for j in 1..=k {
        binom = binom * (m - k + j) as f64 / j as f64;
    }
    Ok(1.0 / (players as f64 * binom))
}

/// Everything needed to evaluate `v(S)` for one prompt.
pub struct ValueFunctionBinding {
    template: PromptTemplate,
    x: PromptVector,
    r: ReferenceVector,
    oracle: Arc<dyn Oracle>,
    identity: String,
    cache: Option<Arc<ResponseCache>>,
    spec: ChoiceSpec,
    f_r: f64,
    calls: AtomicU64,
    call_set: Mutex<BTreeSet<String>>,
}

impl std::fmt::Debug for ValueFunctionBinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValueFunctionBinding")
            .field("fields", &self.template.field_count())
            .field("oracle", &self.identity)
            .field("f_r", &self.f_r)
            .finish()
    }
}

impl ValueFunctionBinding {
    /// Validates coverage and evaluates `f(r)` once.
    pub fn new(
        template: PromptTemplate,
        x: PromptVector,
        r: ReferenceVector,
        oracle: Arc<dyn Oracle>,
        spec: ChoiceSpec,
        cache: Option<Arc<ResponseCache>>,
    ) -> Result<Self, ShapleyError> {
        let n = template.field_count();
        for len in [x.len(), r.len()] {
            if len != n {
                return Err(TemplateError::CoverageMismatch { expected: n, got: len }.into());
            }
        }
        let mut binding = ValueFunctionBinding {
            template,
            x,
            r,
            identity: oracle.identity(),
            oracle,
            cache,
            spec,
            f_r: 0.0,
            calls: AtomicU64::new(0),
            call_set: Mutex::new(BTreeSet::new()),
        };
        let reference = binding.r.values().to_vec();
        binding.f_r = binding.probability(&reference, &[])?;
        Ok(binding)
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn prompt(&self) -> &PromptVector {
        &self.x
    }

    pub fn reference(&self) -> &ReferenceVector {
        &self.r
    }

    pub fn spec(&self) -> &ChoiceSpec {
        &self.spec
    }

    pub fn oracle(&self) -> &Arc<dyn Oracle> {
        &self.oracle
    }

    pub fn field_names(&self) -> Vec<String> {
        self.template.fields().iter().map(|f| f.name.clone()).collect()
    }

    /// `f(r)`.
    pub fn baseline(&self) -> f64 {
        self.f_r
    }

    /// Queries issued so far, cache hits included.
    pub fn oracle_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Cache keys of every distinct prompt evaluated through this binding.
    pub fn call_set(&self) -> BTreeSet<String> {
        self.call_set.lock().unwrap().clone()
    }

    /// Fields whose prompt value differs from the reference value.
    pub fn players(&self) -> Vec<usize> {
        (1..=self.template.field_count())
            .filter(|&i| self.x.get(i) != self.r.get(i))
            .collect()
    }

    /// Raw `f` for a composite assignment. `coalition` is for error context only.
    fn probability(&self, values: &[String], coalition: &[usize]) -> Result<f64, ShapleyError> {
        let prompt = self.template.render_values(values)?;
        let query = Query {
            prompt: &prompt,
            fields: Some(FieldView {
                values,
                reference: self.r.values(),
            }),
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        let wrap = |source| ShapleyError::Oracle {
            coalition: coalition.to_vec(),
            source,
        };
        let key = cache_key(&prompt, &self.spec, &self.identity);
        let dist = match &self.cache {
            Some(cache) => {
                cached_evaluate_keyed(cache, self.oracle.as_ref(), &self.identity, key.clone(), &query, &self.spec)
            }
            None => self.oracle.evaluate(&query, &self.spec),
        }
        .map_err(wrap)?;
        self.call_set.lock().unwrap().insert(key);
        let p = choice_probability(&dist, &self.spec);
        if !p.is_finite() {
            return Err(ShapleyError::NonFinite {
                coalition: coalition.to_vec(),
            });
        }
        Ok(p)
    }

    /// `f(z(x, r, S))`.
    pub fn f(&self, s: &Coalition) -> Result<f64, ShapleyError> {
        let z = compose(&self.x, &self.r, s)?;
        let members: Vec<usize> = s.members().collect();
        self.probability(z.values(), &members)
    }

    fn f_mask(&self, players: &[usize], mask: u64) -> Result<f64, ShapleyError> {
        if mask == 0 {
            return Ok(self.f_r);
        }
        let mut values = self.r.values().to_vec();
        let mut members = Vec::new();
        for (bit, &idx) in players.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                values[idx - 1] = self.x.values()[idx - 1].clone();
                members.push(idx);
            }
        }
        self.probability(&values, &members)
    }
}

/// `v(S) = f(z(x, r, S)) − f(r)`.
pub fn coalition_value(binding: &ValueFunctionBinding, s: &Coalition) -> Result<f64, ShapleyError> {
    if s.is_empty() {
        return Ok(0.0);
    }
    Ok(binding.f(s)? - binding.f_r)
}

/// Subset-weighted sum over all coalitions of the non-null players.
pub fn exact_shapley(
    binding: &ValueFunctionBinding,
    config: &EstimatorConfig,
) -> Result<AttributionVector, ShapleyError> {
    config.validate()?;
    let calls_before = binding.oracle_calls();
    let players = binding.players();
    let n = players.len();
    if n > config.exact_limit {
        return Err(ShapleyError::TooManyFields {
            players: n,
            limit: config.exact_limit,
        });
    }
    let size = 1u64 << n;
    let values: Vec<f64> = config.pool()?.install(|| {
        (0..size)
            .into_par_iter()
            .map(|mask| binding.f_mask(&players, mask))
            .collect::<Result<_, _>>()
    })?;

    let weights: Vec<f64> = (0..n.max(1))
        .map(|s| shapley_weight(s, n.max(1)))
        .collect::<Result<_, _>>()?;
    let mut phi = vec![0.0; binding.template.field_count()];
    for (k, &idx) in players.iter().enumerate() {
        let bit = 1u64 << k;
        let mut acc = 0.0;
        for mask in (0..size).filter(|m| m & bit == 0) {
            let w = weights[mask.count_ones() as usize];
            acc += w * (values[(mask | bit) as usize] - values[mask as usize]);
        }
        phi[idx - 1] = acc;
    }
    // +1 for the f(r) evaluated when the binding was built
    let calls = binding.oracle_calls() - calls_before + 1;
    Ok(AttributionVector {
        fields: binding.field_names(),
        phi,
        phi0: binding.f_r,
        f_x: values[(size - 1) as usize],
        method: Method::Exact,
        iterations: None,
        seed: None,
        oracle_calls: calls,
        std_errors: None,
    })
}

/// Marginals of one random permutation, in `players` order, plus `f(x)`.
fn permutation_marginals(
    binding: &ValueFunctionBinding,
    players: &[usize],
    seed: u64,
    t: u64,
) -> Result<(Vec<f64>, f64), ShapleyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    let mut order: Vec<usize> = (0..players.len()).collect();
    order.shuffle(&mut rng);

    let mut values = binding.r.values().to_vec();
    let mut members = Vec::with_capacity(players.len());
    let mut marginals = vec![0.0; players.len()];
    let mut v1 = binding.f_r;
    for k in order {
        let idx = players[k];
        values[idx - 1] = binding.x.values()[idx - 1].clone();
        members.push(idx);
        let v2 = binding.probability(&values, &members)?;
        marginals[k] = v2 - v1;
        v1 = v2;
    }
    Ok((marginals, v1))
}

/// Monte Carlo permutation sampling with a running-mean update.
///
/// Iteration `t` draws its permutation from a ChaCha stream keyed by
/// `(seed, t)`, so blocks of iterations can be evaluated concurrently; the
/// running mean is then folded strictly in `t` order, which keeps results
/// bit-identical for any `parallelism`.
pub fn mc_shapley(
    binding: &ValueFunctionBinding,
    config: &EstimatorConfig,
) -> Result<AttributionVector, ShapleyError> {
    config.validate()?;
    let calls_before = binding.oracle_calls();
    let players = binding.players();
    let n = players.len();
    let total = config.iterations;
    let pool = config.pool()?;

    let mut estimate = vec![0.0; n];
    // Welford accumulators for the standard errors
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut f_x = binding.f_r;

    if n > 0 {
        let mut start = 1;
        while start <= total {
            let end = (start + MC_BLOCK - 1).min(total);
            let block: Vec<(Vec<f64>, f64)> = pool.install(|| {
                (start..=end)
                    .into_par_iter()
                    .map(|t| permutation_marginals(binding, &players, config.seed, t))
                    .collect::<Result<_, _>>()
            })?;
            for (offset, (marginals, last)) in block.into_iter().enumerate() {
                let t = start + offset as u64;
                if t == 1 {
                    f_x = last;
                }
                let tf = t as f64;
                for k in 0..n {
                    let phi = marginals[k];
                    estimate[k] = phi / tf + (tf - 1.0) * estimate[k] / tf;
                    let delta = phi - mean[k];
                    mean[k] += delta / tf;
                    m2[k] += delta * (phi - mean[k]);
                }
            }
            start = end + 1;
        }
    }

    let field_count = binding.template.field_count();
    let mut phi = vec![0.0; field_count];
    let mut std_errors = (total >= 2).then(|| vec![0.0; field_count]);
    for (k, &idx) in players.iter().enumerate() {
        phi[idx - 1] = estimate[k];
        if let Some(se) = std_errors.as_mut() {
            let var = m2[k] / (total - 1) as f64;
            se[idx - 1] = (var / total as f64).sqrt();
        }
    }
    let calls = binding.oracle_calls() - calls_before + 1;
    Ok(AttributionVector {
        fields: binding.field_names(),
        phi,
        phi0: binding.f_r,
        f_x,
        method: Method::MonteCarlo,
        iterations: Some(total),
        seed: Some(config.seed),
        oracle_calls: calls,
        std_errors,
    })
}
