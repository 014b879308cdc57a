//! Client for OpenAI-compatible `/completions` endpoints.
//!
//! The primary path asks for top-k log-probabilities of the first generated
//! token, collects the mass on tokens that spell each choice label, and
//! renormalizes over the choice set. Endpoints that return no log-probabilities
//! are queried repeatedly for one constrained token instead, and the empirical
//! label frequencies are used.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChoiceDistribution, ChoiceSpec, Oracle, OracleError, Query};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PROMPTSHAP_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// Base URL (`…/v1`) or the full `…/completions` URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub top_logprobs: u32,
    /// Samples drawn per prompt when the endpoint returns no log-probabilities.
    pub fallback_samples: u32,
    /// Label → token id, used for `logit_bias` in the fallback path.
    pub label_token_ids: BTreeMap<String, u32>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_concurrent: usize,
    /// Minimum spacing between request starts.
    pub min_interval_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: API_KEY_ENV.to_string(),
            top_logprobs: 20,
            fallback_samples: 5,
            label_token_ids: BTreeMap::new(),
            max_retries: 3,
            backoff_ms: 250,
            timeout_ms: 60_000,
            max_concurrent: 4,
            min_interval_ms: 0,
        }
    }
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            ..RemoteConfig::default()
        }
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/completions") {
            base.to_string()
        } else {
            format!("{base}/completions")
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteOracle {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    gate: Gate,
    next_slot: Mutex<Instant>,
    logprobs_unavailable: AtomicBool,
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Result<Self, OracleError> {
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(OracleError::InvalidConfig(
                "remote oracle needs an endpoint and a model".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| OracleError::InvalidConfig(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(RemoteOracle {
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_concurrent.max(1),
            },
            client,
            api_key,
            next_slot: Mutex::new(Instant::now()),
            logprobs_unavailable: AtomicBool::new(false),
            config,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// True once the endpoint has answered without log-probabilities.
    pub fn using_fallback(&self) -> bool {
        self.logprobs_unavailable.load(Ordering::Relaxed)
    }

    fn wait_for_slot(&self) {
        if self.config.min_interval_ms == 0 {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + Duration::from_millis(self.config.min_interval_ms);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn post(&self, body: &Value) -> Result<Value, OracleError> {
        let url = self.config.completions_url();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.gate.acquire();
                self.wait_for_slot();
                let mut req = self.client.post(&url).json(body);
                if let Some(key) = &self.api_key {
                    req = req.bearer_auth(key);
                }
                req.send()
            };
            let retryable_reason = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| {
                            OracleError::MalformedResponse(format!("response is not JSON: {e}"))
                        });
                    }
                    let reason = format!("HTTP {status} from {url}");
                    if status.as_u16() == 429 || status.is_server_error() {
                        reason
                    } else {
                        return Err(OracleError::OracleUnreachable { attempts, reason });
                    }
                }
                Err(e) => format!("request to {url} failed: {e}"),
            };
            if attempts > self.config.max_retries {
                return Err(OracleError::OracleUnreachable {
                    attempts,
                    reason: retryable_reason,
                });
            }
            let backoff = self.config.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
            log::warn!("{retryable_reason}; retrying in {backoff} ms");
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }

    fn logprob_request(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": self.config.top_logprobs,
        })
    }

    fn sampling_request(&self, prompt: &str, spec: &ChoiceSpec) -> Value {
        // one sample is the greedy answer; several are draws at temperature 1
        let temperature = if self.config.fallback_samples > 1 { 1 } else { 0 };
        let mut body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": temperature,
        });
        let bias: serde_json::Map<String, Value> = spec
            .labels()
            .iter()
            .filter_map(|l| self.config.label_token_ids.get(l))
            .map(|id| (id.to_string(), json!(100)))
            .collect();
        if !bias.is_empty() {
            body["logit_bias"] = Value::Object(bias);
        }
        body
    }

    fn evaluate_sampled(&self, prompt: &str, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        let body = self.sampling_request(prompt, spec);
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..self.config.fallback_samples.max(1) {
            let resp = self.post(&body)?;
            for text in choice_texts(&resp)? {
                if let Some(label) = match_label(&text, spec) {
                    *counts.entry(label.to_string()).or_default() += 1.0;
                }
            }
        }
        ChoiceDistribution::from_scores(spec, &counts)
    }
}

fn choice_texts(resp: &Value) -> Result<Vec<String>, OracleError> {
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| OracleError::MalformedResponse("response has no choices".into()))?;
    Ok(choices
        .iter()
        .filter_map(|c| c.get("text").and_then(Value::as_str).map(str::to_string))
        .collect())
}

/// Maps a generated token to a choice label: exact match after trimming, or
/// an unambiguous prefix of exactly one label.
pub fn match_label<'s>(token: &str, spec: &'s ChoiceSpec) -> Option<&'s str> {
    let t = token.trim();
    if t.is_empty() {
        return None;
    }
    if let Some(l) = spec.labels().iter().find(|l| l.as_str() == t) {
        return Some(l);
    }
    let mut prefixed = spec.labels().iter().filter(|l| l.starts_with(t));
    match (prefixed.next(), prefixed.next()) {
        (Some(l), None) => Some(l),
        _ => None,
    }
}

/// First-position `token → logprob` pairs, or `None` when the response carries no logprobs.
fn first_position_logprobs(resp: &Value) -> Result<Option<Vec<(String, f64)>>, OracleError> {
    let choice = resp
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| OracleError::MalformedResponse("response has no choices".into()))?;
    let top = match choice
        .get("logprobs")
        .filter(|v| !v.is_null())
        .and_then(|lp| lp.get("top_logprobs"))
        .and_then(Value::as_array)
        .and_then(|positions| positions.first())
    {
        Some(top) => top,
        None => return Ok(None),
    };
    let mut pairs = Vec::new();
    match top {
        Value::Object(map) => {
            for (token, lp) in map {
                pairs.push((token.clone(), logprob_value(lp)?));
            }
        }
        // chat-style: [{"token": .., "logprob": ..}, ..]
        Value::Array(entries) => {
            for entry in entries {
                let token = entry.get("token").and_then(Value::as_str).ok_or_else(|| {
                    OracleError::MalformedResponse("top_logprobs entry without token".into())
                })?;
                let lp = entry.get("logprob").ok_or_else(|| {
                    OracleError::MalformedResponse("top_logprobs entry without logprob".into())
                })?;
                pairs.push((token.to_string(), logprob_value(lp)?));
            }
        }
        Value::Null => return Ok(None),
        _ => {
            return Err(OracleError::MalformedResponse(
                "unrecognized top_logprobs layout".into(),
            ))
        }
    }
    Ok(Some(pairs))
}

fn logprob_value(v: &Value) -> Result<f64, OracleError> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| OracleError::MalformedResponse("logprob out of range".into())),
        // Some servers encode -inf as null.
        Value::Null => Ok(f64::NEG_INFINITY),
        _ => Err(OracleError::MalformedResponse("logprob is not a number".into())),
    }
}

/// Sums the probability of every token that spells a label, then renormalizes
/// over the choice set. Mass on other tokens is discarded.
pub fn distribution_from_logprobs(
    pairs: &[(String, f64)],
    spec: &ChoiceSpec,
) -> Result<ChoiceDistribution, OracleError> {
    let mut per_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (token, lp) in pairs {
        if lp.is_nan() || *lp == f64::INFINITY {
            return Err(OracleError::NonFiniteProbability { label: token.clone() });
        }
        if let Some(label) = match_label(token, spec) {
            per_label.entry(label.to_string()).or_default().push(*lp);
        }
    }
    let max = per_label
        .values()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(OracleError::MalformedResponse(
            "no choice label among the returned top tokens".into(),
        ));
    }
    // scale by exp(-max) so the largest label score is 1
    let scores: BTreeMap<String, f64> = per_label
        .into_iter()
        .map(|(l, lps)| (l, lps.iter().map(|lp| (lp - max).exp()).sum()))
        .collect();
    ChoiceDistribution::from_scores(spec, &scores)
}

impl Oracle for RemoteOracle {
    fn identity(&self) -> String {
        format!("remote:{}:{}", self.config.completions_url(), self.config.model)
    }

    fn evaluate(&self, query: &Query<'_>, spec: &ChoiceSpec) -> Result<ChoiceDistribution, OracleError> {
        if !self.using_fallback() {
            let resp = self.post(&self.logprob_request(query.prompt))?;
            match first_position_logprobs(&resp)? {
                Some(pairs) => return distribution_from_logprobs(&pairs, spec),
                None => {
                    log::warn!(
                        "{} returned no logprobs; falling back to constrained sampling",
                        self.config.completions_url()
                    );
                    self.logprobs_unavailable.store(true, Ordering::Relaxed);
                }
            }
        }
        self.evaluate_sampled(query.prompt, spec)
    }
}
