use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AdditiveOracle, LogisticOracle, Oracle, OracleError, RemoteConfig, RemoteOracle, TabularOracle};
use crate::template::PromptTemplate;

/// Which oracle to run, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleConfig {
    Remote(RemoteConfig),
    SyntheticAdditive(AdditiveSpec),
    SyntheticLogistic { seed: u64 },
    SyntheticTabular(TabularSpec),
}

/// Additive weights keyed by field name; unnamed fields get `default_weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveSpec {
    pub base: f64,
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub default_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
}

impl AdditiveSpec {
    pub fn build(&self, template: &PromptTemplate) -> Result<AdditiveOracle, OracleError> {
        for name in self.weights.keys() {
            if template.index_of(name).is_none() {
                return Err(OracleError::InvalidConfig(format!(
                    "additive weight for unknown field `{name}`"
                )));
            }
        }
        let weights = template
            .fields()
            .iter()
            .map(|f| self.weights.get(&f.name).copied().unwrap_or(self.default_weight))
            .collect();
        AdditiveOracle::new(self.base, weights)
    }
}

impl OracleConfig {
    pub fn build(&self, template: &PromptTemplate) -> Result<Arc<dyn Oracle>, OracleError> {
        Ok(match self {
            OracleConfig::Remote(cfg) => Arc::new(RemoteOracle::new(cfg.clone())?),
            OracleConfig::SyntheticAdditive(spec) => Arc::new(spec.build(template)?),
            OracleConfig::SyntheticLogistic { seed } => Arc::new(LogisticOracle::new(*seed)),
            OracleConfig::SyntheticTabular(TabularSpec { seed, table }) => match (seed, table) {
                (Some(seed), None) => Arc::new(TabularOracle::seeded(*seed)),
                (None, Some(table)) => {
                    let oracle = TabularOracle::table(table.clone())?;
                    if let TabularOracle::Table { field_count, .. } = &oracle {
                        if *field_count != template.field_count() {
                            return Err(OracleError::InvalidConfig(format!(
                                "value table covers {field_count} fields, template has {}",
                                template.field_count()
                            )));
                        }
                    }
                    Arc::new(oracle)
                }
                _ => {
                    return Err(OracleError::InvalidConfig(
                        "synthetic-tabular needs exactly one of `seed` or `table`".into(),
                    ))
                }
            },
        })
    }

    /// Builds an oracle that does not need a template (bare-prompt probing).
    pub fn build_untemplated(&self) -> Result<Arc<dyn Oracle>, OracleError> {
        Ok(match self {
            OracleConfig::Remote(cfg) => Arc::new(RemoteOracle::new(cfg.clone())?),
            OracleConfig::SyntheticAdditive(spec) => {
                if spec.weights.is_empty() {
                    Arc::new(AdditiveOracle::new(spec.base, Vec::new())?)
                } else {
                    return Err(OracleError::InvalidConfig(
                        "named additive weights need a template".into(),
                    ));
                }
            }
            OracleConfig::SyntheticLogistic { seed } => Arc::new(LogisticOracle::new(*seed)),
            OracleConfig::SyntheticTabular(TabularSpec { seed: Some(seed), table: None }) => {
                Arc::new(TabularOracle::seeded(*seed))
            }
            OracleConfig::SyntheticTabular(_) => {
                return Err(OracleError::InvalidConfig(
                    "an explicit value table needs a template".into(),
                ))
            }
        })
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OracleError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OracleError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| OracleError::InvalidConfig(format!("cannot parse {}: {e}", path.display())))
}

/// Parses `--model` values:
/// `synthetic:additive:FILE`, `synthetic:logistic:SEED`,
/// `synthetic:tabular:SEED` (or `synthetic:tabular:FILE` holding a value table),
/// `remote:URL:MODEL`.
pub fn parse_model_flag(flag: &str) -> Result<OracleConfig, OracleError> {
    let bad = || OracleError::InvalidConfig(format!("unrecognized --model value `{flag}`"));
    if let Some(rest) = flag.strip_prefix("remote:") {
        let (url, model) = rest.rsplit_once(':').ok_or_else(bad)?;
        if url.is_empty() || model.is_empty() || model.contains('/') {
            return Err(bad());
        }
        return Ok(OracleConfig::Remote(RemoteConfig::new(url, model)));
    }
    let rest = flag.strip_prefix("synthetic:").ok_or_else(bad)?;
    let (kind, arg) = rest.split_once(':').ok_or_else(bad)?;
    match kind {
        "additive" => Ok(OracleConfig::SyntheticAdditive(read_json(Path::new(arg))?)),
        "logistic" => Ok(OracleConfig::SyntheticLogistic {
            seed: arg.parse().map_err(|_| bad())?,
        }),
        "tabular" => match arg.parse::<u64>() {
            Ok(seed) => Ok(OracleConfig::SyntheticTabular(TabularSpec {
                seed: Some(seed),
                table: None,
            })),
            Err(_) => Ok(OracleConfig::SyntheticTabular(read_json(Path::new(arg))?)),
        },
        _ => Err(bad()),
    }
}
