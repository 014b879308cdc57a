//! Machine-readable attribution reports and the plain-text / plot-data renderings.
//!
//! JSON output is deterministic: struct fields serialize in declaration order,
//! maps are sorted, and reals use the shortest round-trip decimal form.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    format_percent, normalize_abs, token_noise_share, Comparison, NoiseBreakdown, NormalizedAttribution,
    RelativeDelta,
};
use crate::oracle::ChoiceSpec;
use crate::shapley::{efficiency_residual, AttributionVector, Method};
use crate::template::{field_info_classes, InfoClass, PromptTemplate};

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of `--format csv`; bumps with [`SCHEMA_VERSION`].
pub const CSV_HEADER: &str = "index,name,info_class,phi_signed,weight_normalized,std_error";

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub index: usize,
    pub name: String,
    pub info_class: InfoClass,
    pub phi_signed: f64,
    pub weight_normalized: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub injected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSummary {
    pub high_share: f64,
    pub low_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionReport {
    pub schema_version: u32,
    pub template_hash: String,
    pub oracle: String,
    pub labels: Vec<String>,
    pub target: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub phi0: f64,
    pub f_x: f64,
    pub efficiency_residual: f64,
    pub oracle_calls: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub degenerate: bool,
    pub fields: Vec<FieldEntry>,
    pub noise: NoiseSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<Vec<Comparison>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report does not match the schema: {0}")]
    Schema(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AttributionReport {
    pub fn build(
        template: &PromptTemplate,
        attribution: &AttributionVector,
        oracle_identity: &str,
        spec: &ChoiceSpec,
        injected: &BTreeSet<String>,
    ) -> Self {
        let normalized = normalize_abs(attribution);
        let noise = token_noise_share(&normalized, &field_info_classes(template));
        let fields = template
            .fields()
            .iter()
            .map(|f| FieldEntry {
                index: f.index,
                name: f.name.clone(),
                info_class: f.info_class,
                phi_signed: attribution.phi[f.index - 1],
                weight_normalized: normalized.weights[f.index - 1],
                std_error: attribution.std_errors.as_ref().map(|se| se[f.index - 1]),
                injected: injected.contains(&f.name),
            })
            .collect();
        AttributionReport {
            schema_version: SCHEMA_VERSION,
            template_hash: template.content_hash(),
            oracle: oracle_identity.to_string(),
            labels: spec.labels().to_vec(),
            target: spec.target().to_string(),
            method: attribution.method,
            iterations: attribution.iterations,
            seed: attribution.seed,
            phi0: attribution.phi0,
            f_x: attribution.f_x,
            efficiency_residual: efficiency_residual(attribution),
            oracle_calls: attribution.oracle_calls,
            degenerate: normalized.degenerate,
            fields,
            noise: NoiseSummary {
                high_share: noise.high_info_share,
                low_share: noise.low_info_share,
            },
            comparisons: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses and checks a report; unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let report: AttributionReport =
            serde_json::from_str(text).map_err(|e| ReportError::Schema(e.to_string()))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(ReportError::Version(report.schema_version));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Reconstructs the attribution vector carried by the report.
    pub fn attribution(&self) -> AttributionVector {
        AttributionVector {
            fields: self.fields.iter().map(|f| f.name.clone()).collect(),
            phi: self.fields.iter().map(|f| f.phi_signed).collect(),
            phi0: self.phi0,
            f_x: self.f_x,
            method: self.method,
            iterations: self.iterations,
            seed: self.seed,
            oracle_calls: self.oracle_calls,
            std_errors: self
                .fields
                .iter()
                .map(|f| f.std_error)
                .collect::<Option<Vec<_>>>(),
        }
    }

    pub fn normalized(&self) -> NormalizedAttribution {
        NormalizedAttribution {
            names: self.fields.iter().map(|f| f.name.clone()).collect(),
            weights: self.fields.iter().map(|f| f.weight_normalized).collect(),
            degenerate: self.degenerate,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for f in &self.fields {
            let se = f.std_error.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                f.index,
                f.name,
                f.info_class.as_str(),
                f.phi_signed,
                f.weight_normalized,
                se
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "oracle:      {}", self.oracle);
        let _ = writeln!(out, "target:      {} of {:?}", self.target, self.labels);
        let _ = writeln!(
            out,
            "method:      {}{}",
            self.method.as_str(),
            match (self.iterations, self.seed) {
                (Some(t), Some(s)) => format!(" (T={t}, seed={s})"),
                _ => String::new(),
            }
        );
        let _ = writeln!(out, "f(x):        {}", self.f_x);
        let _ = writeln!(out, "baseline:    {}", self.phi0);
        let _ = writeln!(out, "residual:    {:e}", self.efficiency_residual);
        let _ = writeln!(out, "oracle calls {}", self.oracle_calls);
        let _ = writeln!(
            out,
            "token noise: {} of attribution on low-information fields",
            format_percent(self.noise.low_share)
        );
        if self.degenerate {
            let _ = writeln!(out, "warning: every attribution is zero; weights are uniform");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>4}  {:<24} {:>5} {:>12} {:>9}", "#", "field", "class", "phi", "weight");
        for f in &self.fields {
            let _ = writeln!(
                out,
                "{:>4}  {:<24} {:>5} {:>12.6} {:>9}",
                f.index,
                f.name,
                f.info_class.as_str(),
                f.phi_signed,
                format_percent(f.weight_normalized)
            );
        }
        if let Some(comparisons) = &self.comparisons {
            for c in comparisons {
                out.push('\n');
                out.push_str(&comparison_summary(c));
            }
        }
        out
    }
}

pub fn comparison_summary(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} -> {}", c.before, c.after);
    let _ = writeln!(out, "  probability shift: {:+}", c.probability_shift);
    match c.cosine {
        Some(cos) => {
            let _ = writeln!(out, "  cosine similarity: {}", crate::analysis::round_half_even(cos, 4));
        }
        None => {
            let _ = writeln!(out, "  cosine similarity: undefined (zero vector)");
        }
    }
    for d in &c.deltas {
        if d.absolute_delta == 0.0 {
            continue;
        }
        let rel = match d.relative_delta {
            RelativeDelta::Value(v) => format_percent(v),
            RelativeDelta::New => "new".to_string(),
        };
        let _ = writeln!(
            out,
            "  {:<24} {:>9} -> {:>9} ({})",
            d.name,
            format_percent(d.weight_before),
            format_percent(d.weight_after),
            rel
        );
    }
    for a in &c.additions {
        let _ = writeln!(out, "  + {:<22} {:>9} (phi {})", a.name, format_percent(a.weight), a.phi);
    }
    for r in &c.removals {
        let _ = writeln!(out, "  - {:<22} {:>9} (phi {})", r.name, format_percent(r.weight), r.phi);
    }
    out
}

/// Tab-separated plot inputs derived from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `field<TAB>weight`, one row per field in index order.
    pub weights: String,
    /// `class<TAB>field<TAB>weight`, grouped high, low, injected.
    pub grouped: String,
    /// Present only when the report carries comparisons.
    pub comparison: Option<String>,
}

pub fn plot_data(report: &AttributionReport) -> PlotData {
    let mut weights = String::from("field\tweight\n");
    for f in &report.fields {
        let _ = writeln!(weights, "{}\t{}", f.name, f.weight_normalized);
    }
    let class_of = |f: &FieldEntry| {
        if f.injected {
            "injected"
        } else {
            f.info_class.as_str()
        }
    };
    let mut grouped = String::from("class\tfield\tweight\n");
    for class in ["high", "low", "injected"] {
        for f in report.fields.iter().filter(|f| class_of(f) == class) {
            let _ = writeln!(grouped, "{class}\t{}\t{}", f.name, f.weight_normalized);
        }
    }
    let comparison = report.comparisons.as_ref().filter(|c| !c.is_empty()).map(|cs| {
        let mut out = String::from("before\tafter\tfield\tweight_before\tweight_after\n");
        for c in cs {
            for d in &c.deltas {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    c.before, c.after, d.name, d.weight_before, d.weight_after
                );
            }
            for a in &c.additions {
                let _ = writeln!(out, "{}\t{}\t{}\t\t{}", c.before, c.after, a.name, a.weight);
            }
        }
        out
    });
    PlotData {
        weights,
        grouped,
        comparison,
    }
}

/// Writes `<prefix>.tsv`, `<prefix>.grouped.tsv` and, with comparisons,
/// `<prefix>.comparison.tsv`. Returns the paths written.
pub fn emit_plot_data(report: &AttributionReport, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let data = plot_data(report);
    let with_suffix = |suffix: &str| {
        let mut name = prefix.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    };
    let mut files = vec![
        (with_suffix(".tsv"), data.weights),
        (with_suffix(".grouped.tsv"), data.grouped),
    ];
    if let Some(c) = data.comparison {
        files.push((with_suffix(".comparison.tsv"), c));
    }
    let mut written = Vec::new();
    for (path, body) in files {
        std::fs::write(&path, body).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Noise breakdown recomputed from a report's fields.
pub fn noise_of(report: &AttributionReport) -> NoiseBreakdown {
    let classes = report.fields.iter().map(|f| (f.index, f.info_class)).collect();
    token_noise_share(&report.normalized(), &classes)
}
