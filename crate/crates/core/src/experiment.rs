//! End-to-end experiment pipelines driven by a JSON config.
//!
//! Three kinds are supported:
//!
//! * `attribution`: attribute the base prompt only.
//! * `framing`: attribute a base and a framed variant that fills an injected
//!   slot, then compare them with the injected field excluded from the cosine.
//! * `perturbation`: attribute the base and every reworded variant and report
//!   the change in target probability for each.
//!
//! Paths inside a config resolve relative to the config file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{compare_attributions, normalize_abs, token_noise_share, Comparison, NoiseBreakdown, Side};
use crate::oracle::{
    cache_key, cached_evaluate, choice_probability, ChoiceDistribution, ChoiceSpec, FieldView, Oracle,
    OracleConfig, OracleError, Query, ResponseCache,
};
use crate::report::{AttributionReport, SCHEMA_VERSION};
use crate::shapley::{exact_shapley, mc_shapley, EstimatorConfig, ShapleyError, ValueFunctionBinding};
use crate::template::{
    field_info_classes, parse_template, PromptTemplate, PromptVector, ReferenceVector, TemplateError,
    DEFAULT_REFERENCE_TOKEN,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Template {
        stage: String,
        #[source]
        source: TemplateError,
    },
    #[error("{stage}: {source}")]
    Oracle {
        stage: String,
        #[source]
        source: OracleError,
    },
    #[error("{stage}: {source}")]
    Estimation {
        stage: String,
        #[source]
        source: ShapleyError,
    },
    #[error("{stage}: {source}")]
    Analysis {
        stage: String,
        #[source]
        source: crate::analysis::AnalysisError,
    },
}

impl ExperimentError {
    /// True when the failure originated at the oracle, directly or inside an estimator.
    pub fn is_oracle_failure(&self) -> bool {
        matches!(
            self,
            ExperimentError::Oracle { .. }
                | ExperimentError::Estimation {
                    source: ShapleyError::Oracle { .. },
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Attribution,
    Framing,
    Perturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    #[default]
    Mc,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSection {
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(flatten)]
    pub config: EstimatorConfig,
}

/// A values file path or an inline name → value map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValuesSource {
    Path(String),
    Inline(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    /// Merged over the base values.
    #[serde(default)]
    pub values: Option<ValuesSource>,
    /// Replacement template; fields are aligned with the base by name.
    #[serde(default)]
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Fields dropped from every cosine similarity.
    #[serde(default)]
    pub cosine_exclude: Vec<String>,
    /// Fields allowed to exist on only one side of a comparison.
    #[serde(default)]
    pub injected_fields: Vec<String>,
    /// The slot filled by the framed variant (framing experiments).
    #[serde(default)]
    pub framed_field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub description: Option<String>,
    pub template: String,
    pub values: ValuesSource,
    /// Applied to the base values before any variant.
    #[serde(default)]
    pub value_overrides: BTreeMap<String, String>,
    #[serde(default = "default_reference_token")]
    pub reference_token: String,
    /// Per-field reference values, by name.
    #[serde(default)]
    pub reference_overrides: BTreeMap<String, String>,
    pub choice: ChoiceSpec,
    pub oracle: OracleConfig,
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    /// Optional cache file, relative to the config.
    #[serde(default)]
    pub cache: Option<String>,
}

fn default_reference_token() -> String {
    DEFAULT_REFERENCE_TOKEN.to_string()
}

/// SHA-256 of the compact JSON with sorted keys.
pub fn canonical_hash(value: &serde_json::Value) -> String {
    // serde_json's default map is a BTreeMap, so keys come out sorted
    let canonical = serde_json::to_string(value).expect("JSON value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub config_hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, base_dir)
    }

    pub fn from_json_str(text: &str, base_dir: PathBuf) -> Result<Self, ExperimentError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Self::from_value(value, base_dir)
    }

    pub fn from_value(value: serde_json::Value, base_dir: PathBuf) -> Result<Self, ExperimentError> {
        let config_hash = canonical_hash(&value);
        let config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(LoadedConfig {
            config,
            base_dir,
            config_hash,
        })
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn read(&self, p: &str) -> Result<String, ExperimentError> {
        let path = self.resolve(p);
        std::fs::read_to_string(&path).map_err(|source| ExperimentError::Io { path, source })
    }

    fn load_values(&self, source: &ValuesSource) -> Result<BTreeMap<String, String>, ExperimentError> {
        match source {
            ValuesSource::Inline(map) => Ok(map.clone()),
            ValuesSource::Path(p) => {
                let text = self.read(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| ExperimentError::Config(format!("values file {p}: {e}")))
            }
        }
    }

    fn load_template(&self, p: &str) -> Result<PromptTemplate, ExperimentError> {
        parse_template(&self.read(p)?).map_err(|source| ExperimentError::Template {
            stage: format!("template {p}"),
            source,
        })
    }

    /// Resolves the base and every variant to a template and complete values.
    pub fn resolve_variants(&self) -> Result<Vec<ResolvedVariant>, ExperimentError> {
        let cfg = &self.config;
        let base_template = self.load_template(&cfg.template)?;
        let mut base_values = self.load_values(&cfg.values)?;
        base_values.extend(cfg.value_overrides.clone());

        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut specs = vec![(BASE_VARIANT.to_string(), None, None)];
        for v in &cfg.variants {
            specs.push((v.name.clone(), v.template.clone(), v.values.clone()));
        }
        for (name, template_path, values) in specs {
            if !seen.insert(name.clone()) {
                return Err(ExperimentError::Config(format!("duplicate variant name `{name}`")));
            }
            let template = match &template_path {
                Some(p) => self.load_template(p)?,
                None => base_template.clone(),
            };
            let mut named: BTreeMap<String, String> = base_values
                .iter()
                .filter(|(k, _)| template.index_of(k).is_some())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if let Some(src) = &values {
                named.extend(self.load_values(src)?);
            }
            let stage = format!("variant `{name}`");
            let x = PromptVector::from_named(&template, &named).map_err(|source| ExperimentError::Template {
                stage: stage.clone(),
                source,
            })?;
            let overrides: BTreeMap<String, String> = cfg
                .reference_overrides
                .iter()
                .filter(|(k, _)| template.index_of(k).is_some())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if name == BASE_VARIANT {
                if let Some(unknown) = cfg.reference_overrides.keys().find(|k| template.index_of(k).is_none()) {
                    return Err(ExperimentError::Template {
                        stage: "reference overrides".into(),
                        source: TemplateError::UnknownField(unknown.clone()),
                    });
                }
            }
            let r = ReferenceVector::with_overrides(&template, &cfg.reference_token, &overrides)
                .map_err(|source| ExperimentError::Template { stage, source })?;
            out.push(ResolvedVariant { name, template, x, r });
        }
        Ok(out)
    }
}

pub const BASE_VARIANT: &str = "base";

#[derive(Debug, Clone)]
pub struct ResolvedVariant {
    pub name: String,
    pub template: PromptTemplate,
    pub x: PromptVector,
    pub r: ReferenceVector,
}

/// Digest of the set of cache keys a variant's numbers were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallSetSummary {
    pub distinct_prompts: u64,
    /// SHA-256 over the sorted keys, one per line.
    pub digest: String,
    pub prompt_key: String,
    pub reference_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantReport {
    pub name: String,
    pub rendered_prompt: String,
    pub reference_prompt: String,
    pub distribution: ChoiceDistribution,
    pub target_probability: f64,
    pub attribution: AttributionReport,
    pub noise: NoiseBreakdown,
    pub players: usize,
    pub call_set: CallSetSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbabilityShift {
    pub variant: String,
    pub base_probability: f64,
    pub variant_probability: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramingHeadline {
    pub framed_field: String,
    pub framed_phi: f64,
    pub shift: ProbabilityShift,
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub oracle: String,
    pub choice: ChoiceSpec,
    pub reference_token: String,
    pub method: MethodChoice,
    pub seed: u64,
    pub iterations: u64,
    pub notes: Vec<String>,
    pub variants: Vec<VariantReport>,
    pub comparisons: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<ProbabilityShift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing: Option<FramingHeadline>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, crate::report::ReportError> {
        let r: ExperimentReport =
            serde_json::from_str(text).map_err(|e| crate::report::ReportError::Schema(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(crate::report::ReportError::Version(r.schema_version));
        }
        Ok(r)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn summary(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {:?} ({})", self.kind, &self.config_hash[..12]);
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        for v in &self.variants {
            let _ = writeln!(out, "\n== variant `{}` ==", v.name);
            let _ = writeln!(out, "{}", v.rendered_prompt.trim_end());
            out.push('\n');
            out.push_str(&v.attribution.summary());
        }
        for c in &self.comparisons {
            out.push('\n');
            out.push_str(&crate::report::comparison_summary(c));
        }
        for s in &self.shifts {
            let _ = writeln!(
                out,
                "\nP({}) {} -> {}: {} -> {} ({:+})",
                self.choice.target(),
                BASE_VARIANT,
                s.variant,
                s.base_probability,
                s.variant_probability,
                s.delta
            );
        }
        if let Some(f) = &self.framing {
            let _ = writeln!(out, "\nframed field {}: phi = {}", f.framed_field, f.framed_phi);
        }
        out
    }
}

/// Provenance that is not byte-stable; written next to the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSidecar {
    pub wall_time_secs: f64,
    pub finished_at_unix: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

pub struct Experiment {
    loaded: LoadedConfig,
    oracle_override: Option<Arc<dyn Oracle>>,
    cache_override: Option<Arc<ResponseCache>>,
}

impl Experiment {
    pub fn new(loaded: LoadedConfig) -> Self {
        Experiment {
            loaded,
            oracle_override: None,
            cache_override: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        LoadedConfig::load(path).map(Experiment::new)
    }

    /// Replaces the configured oracle (for instrumentation).
    pub fn with_oracle(mut self, oracle: Arc<dyn Oracle>) -> Self {
        self.oracle_override = Some(oracle);
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache_override = Some(cache);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    pub fn loaded(&self) -> &LoadedConfig {
        &self.loaded
    }

    fn validate_kind(&self, variants: &[ResolvedVariant]) -> Result<(), ExperimentError> {
        let cfg = &self.loaded.config;
        match cfg.kind {
            ExperimentKind::Attribution => {}
            ExperimentKind::Framing => {
                if variants.len() != 2 {
                    return Err(ExperimentError::Config(
                        "a framing experiment needs exactly one framed variant".into(),
                    ));
                }
                let field = cfg.analysis.framed_field.as_deref().ok_or_else(|| {
                    ExperimentError::Config("framing experiment without analysis.framed_field".into())
                })?;
                let framed = &variants[1];
                if framed.template.index_of(field).is_none() {
                    return Err(ExperimentError::Config(format!(
                        "framed field `{field}` is not in the framed variant's template"
                    )));
                }
            }
            ExperimentKind::Perturbation => {
                if variants.len() < 2 {
                    return Err(ExperimentError::Config(
                        "a perturbation experiment needs at least one variant".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Runs the pipeline selected by the config's `kind`.
    pub fn run(&self) -> Result<(ExperimentReport, RunSidecar), ExperimentError> {
        let started = std::time::Instant::now();
        let cfg = &self.loaded.config;
        cfg.estimator
            .config
            .validate()
            .map_err(|source| ExperimentError::Estimation {
                stage: "estimator config".into(),
                source,
            })?;
        let variants = self.loaded.resolve_variants()?;
        self.validate_kind(&variants)?;
        let base_template = &variants[0].template;

        let oracle: Arc<dyn Oracle> = match &self.oracle_override {
            Some(o) => o.clone(),
            None => cfg.oracle.build(base_template).map_err(|source| ExperimentError::Oracle {
                stage: "building oracle".into(),
                source,
            })?,
        };
        let cache = match (&self.cache_override, &cfg.cache) {
            (Some(c), _) => c.clone(),
            (None, Some(p)) => Arc::new(ResponseCache::open(self.loaded.resolve(p)).map_err(|e| {
                ExperimentError::Oracle {
                    stage: "opening cache".into(),
                    source: e.into(),
                }
            })?),
            (None, None) => Arc::new(ResponseCache::in_memory()),
        };

        let injected: BTreeSet<String> = cfg.analysis.injected_fields.iter().cloned().collect();
        let mut reports = Vec::new();
        for v in &variants {
            reports.push(self.run_variant(v, &oracle, &cache, &injected)?);
        }

        let mut notes = Vec::new();
        let slot_note = variants.iter().any(|v| {
            v.template
                .fields()
                .iter()
                .any(|f| injected.contains(&f.name) && v.x.get(f.index) == v.r.get(f.index))
        });
        if slot_note {
            notes.push(
                "injected slots left unfilled carry the reference token, so they are null players".into(),
            );
        }
        let label_fields: Vec<String> = base_template
            .fields()
            .iter()
            .filter(|f| {
                let value = variants[0].x.get(f.index).unwrap_or_default();
                cfg.choice.labels().iter().any(|l| l == value) && value != variants[0].r.get(f.index).unwrap_or_default()
            })
            .map(|f| f.name.clone())
            .collect();
        if !label_fields.is_empty() {
            notes.push(format!(
                "label fields {} are blanked in some coalitions; the choice set stays fixed",
                label_fields.join(", ")
            ));
        }

        let excluded: BTreeSet<String> = cfg.analysis.cosine_exclude.iter().cloned().collect();
        let mut comparisons = Vec::new();
        let mut shifts = Vec::new();
        if cfg.kind != ExperimentKind::Attribution {
            let base = &reports[0];
            let base_attr = base.attribution.attribution();
            let base_norm = normalize_abs(&base_attr);
            for other in &reports[1..] {
                let attr = other.attribution.attribution();
                let norm = normalize_abs(&attr);
                let comparison = compare_attributions(
                    Side {
                        name: &base.name,
                        attribution: &base_attr,
                        normalized: &base_norm,
                    },
                    Side {
                        name: &other.name,
                        attribution: &attr,
                        normalized: &norm,
                    },
                    &injected,
                    &excluded,
                )
                .map_err(|source| ExperimentError::Analysis {
                    stage: format!("comparing `{}` with `{}`", base.name, other.name),
                    source,
                })?;
                comparisons.push(comparison);
                shifts.push(ProbabilityShift {
                    variant: other.name.clone(),
                    base_probability: base.target_probability,
                    variant_probability: other.target_probability,
                    delta: other.target_probability - base.target_probability,
                });
            }
        }

        let framing = if cfg.kind == ExperimentKind::Framing {
            let field = cfg.analysis.framed_field.clone().unwrap_or_default();
            let framed = &reports[1];
            let phi = framed
                .attribution
                .fields
                .iter()
                .find(|f| f.name == field)
                .map(|f| f.phi_signed)
                .unwrap_or(0.0);
            Some(FramingHeadline {
                framed_field: field,
                framed_phi: phi,
                shift: shifts[0].clone(),
                cosine: comparisons[0].cosine,
            })
        } else {
            None
        };

        let report = ExperimentReport {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            config_hash: self.loaded.config_hash.clone(),
            oracle: oracle.identity(),
            choice: cfg.choice.clone(),
            reference_token: cfg.reference_token.clone(),
            method: cfg.estimator.method,
            seed: cfg.estimator.config.seed,
            iterations: cfg.estimator.config.iterations,
            notes,
            variants: reports,
            comparisons,
            shifts,
            framing,
        };
        let stats = cache.stats();
        let sidecar = RunSidecar {
            wall_time_secs: started.elapsed().as_secs_f64(),
            finished_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            cache_hits: stats.hits,
            cache_misses: stats.misses,
        };
        Ok((report, sidecar))
    }

    fn run_variant(
        &self,
        v: &ResolvedVariant,
        oracle: &Arc<dyn Oracle>,
        cache: &Arc<ResponseCache>,
        injected: &BTreeSet<String>,
    ) -> Result<VariantReport, ExperimentError> {
        let cfg = &self.loaded.config;
        let stage = format!("variant `{}`", v.name);
        let est = |source| ExperimentError::Estimation {
            stage: stage.clone(),
            source,
        };
        let binding = ValueFunctionBinding::new(
            v.template.clone(),
            v.x.clone(),
            v.r.clone(),
            oracle.clone(),
            cfg.choice.clone(),
            Some(cache.clone()),
        )
        .map_err(est)?;
        let attribution = match cfg.estimator.method {
            MethodChoice::Mc => mc_shapley(&binding, &cfg.estimator.config),
            MethodChoice::Exact => exact_shapley(&binding, &cfg.estimator.config),
        }
        .map_err(est)?;

        let tmpl = |source| ExperimentError::Template {
            stage: stage.clone(),
            source,
        };
        let rendered_prompt = v.template.render(&v.x).map_err(tmpl)?;
        let reference_prompt = v.template.render_values(v.r.values()).map_err(tmpl)?;
        let query = Query {
            prompt: &rendered_prompt,
            fields: Some(FieldView {
                values: v.x.values(),
                reference: v.r.values(),
            }),
        };
        let distribution =
            cached_evaluate(cache, oracle.as_ref(), &query, &cfg.choice).map_err(|source| ExperimentError::Oracle {
                stage: stage.clone(),
                source,
            })?;
        let target_probability = choice_probability(&distribution, &cfg.choice);

        let identity = oracle.identity();
        let keys = binding.call_set();
        let mut h = Sha256::new();
        for k in &keys {
            h.update(k.as_bytes());
            h.update(b"\n");
        }
        let call_set = CallSetSummary {
            distinct_prompts: keys.len() as u64,
            digest: hex::encode(h.finalize()),
            prompt_key: cache_key(&rendered_prompt, &cfg.choice, &identity),
            reference_key: cache_key(&reference_prompt, &cfg.choice, &identity),
        };

        let report = AttributionReport::build(&v.template, &attribution, &identity, &cfg.choice, injected);
        let noise = token_noise_share(&normalize_abs(&attribution), &field_info_classes(&v.template));
        Ok(VariantReport {
            name: v.name.clone(),
            rendered_prompt,
            reference_prompt,
            distribution,
            target_probability,
            attribution: report,
            noise,
            players: binding.players().len(),
            call_set,
        })
    }
}

/// Runs an `attribution` config.
pub fn run_attribution_experiment(exp: &Experiment) -> Result<ExperimentReport, ExperimentError> {
    expect_kind(exp, ExperimentKind::Attribution)?;
    exp.run().map(|(r, _)| r)
}

/// Runs a `framing` config.
pub fn run_framing_experiment(exp: &Experiment) -> Result<ExperimentReport, ExperimentError> {
    expect_kind(exp, ExperimentKind::Framing)?;
    exp.run().map(|(r, _)| r)
}

/// Runs a `perturbation` config.
pub fn run_perturbation_comparison(exp: &Experiment) -> Result<ExperimentReport, ExperimentError> {
    expect_kind(exp, ExperimentKind::Perturbation)?;
    exp.run().map(|(r, _)| r)
}

fn expect_kind(exp: &Experiment, kind: ExperimentKind) -> Result<(), ExperimentError> {
    if exp.config().kind != kind {
        return Err(ExperimentError::Config(format!(
            "expected a {kind:?} config, got {:?}",
            exp.config().kind
        )));
    }
    Ok(())
}
