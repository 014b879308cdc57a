//! Normalized importance profiles, token-noise shares and variant comparisons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shapley::AttributionVector;
use crate::template::InfoClass;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("field sets differ: only in first {only_first:?}, only in second {only_second:?}")]
    FieldMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },
    #[error("cannot take the cosine of a zero vector")]
    ZeroNormVector,
    #[error("length mismatch: {names} names for {weights} weights")]
    LengthMismatch { names: usize, weights: usize },
}

/// `|φᵢ| / Σ|φⱼ|` per field, keyed by field name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAttribution {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    /// Set when every φ was zero; `weights` is then uniform.
    pub degenerate: bool,
}

impl NormalizedAttribution {
    pub fn weight_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.weights[i])
    }

    fn by_name(&self) -> BTreeMap<&str, f64> {
        self.names.iter().map(String::as_str).zip(self.weights.iter().copied()).collect()
    }
}

pub fn normalize_abs(a: &AttributionVector) -> NormalizedAttribution {
    let total: f64 = a.phi.iter().map(|p| p.abs()).sum();
    let n = a.phi.len();
    if total == 0.0 || !total.is_finite() {
        if n > 0 {
            log::warn!("all attributions are zero; reporting uniform weights");
        }
        return NormalizedAttribution {
            names: a.fields.clone(),
            weights: vec![1.0 / n.max(1) as f64; n],
            degenerate: true,
        };
    }
    NormalizedAttribution {
        names: a.fields.clone(),
        weights: a.phi.iter().map(|p| p.abs() / total).collect(),
        degenerate: false,
    }
}

/// Cosine of two profiles aligned by field name, after dropping `excluded`.
pub fn cosine_similarity(
    v1: &NormalizedAttribution,
    v2: &NormalizedAttribution,
    excluded: &BTreeSet<String>,
) -> Result<f64, AnalysisError> {
    let a: BTreeMap<&str, f64> = v1
        .by_name()
        .into_iter()
        .filter(|(k, _)| !excluded.contains(*k))
        .collect();
    let b: BTreeMap<&str, f64> = v2
        .by_name()
        .into_iter()
        .filter(|(k, _)| !excluded.contains(*k))
        .collect();
    let only_first: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).map(|k| k.to_string()).collect();
    let only_second: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).map(|k| k.to_string()).collect();
    if !only_first.is_empty() || !only_second.is_empty() {
        return Err(AnalysisError::FieldMismatch {
            only_first,
            only_second,
        });
    }
    let dot: f64 = a.iter().map(|(k, x)| x * b[k]).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(AnalysisError::ZeroNormVector);
    }
    Ok(dot / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedField {
    pub index: usize,
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBreakdown {
    pub high_info_share: f64,
    pub low_info_share: f64,
    pub high_ranked: Vec<RankedField>,
    pub low_ranked: Vec<RankedField>,
}

/// Splits normalized weight between high- and low-information fields.
/// Rankings are by descending weight, ties by field index.
pub fn token_noise_share(
    n: &NormalizedAttribution,
    classes: &BTreeMap<usize, InfoClass>,
) -> NoiseBreakdown {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for (i, (name, &weight)) in n.names.iter().zip(&n.weights).enumerate() {
        let index = i + 1;
        let entry = RankedField {
            index,
            name: name.clone(),
            weight,
        };
        match classes.get(&index).copied().unwrap_or(InfoClass::LowInformation) {
            InfoClass::HighInformation => high.push(entry),
            InfoClass::LowInformation => low.push(entry),
        }
    }
    let rank = |v: &mut Vec<RankedField>| {
        v.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)))
    };
    rank(&mut high);
    rank(&mut low);
    let high_info_share: f64 = high.iter().map(|f| f.weight).sum();
    let low_info_share: f64 = low.iter().map(|f| f.weight).sum();
    NoiseBreakdown {
        high_info_share,
        low_info_share,
        high_ranked: high,
        low_ranked: low,
    }
}

/// Relative change of a normalized weight; undefined when the baseline is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeDelta {
    Value(f64),
    New,
}

pub fn relative_delta(before: f64, after: f64) -> RelativeDelta {
    if before == 0.0 {
        RelativeDelta::New
    } else {
        RelativeDelta::Value((after - before) / before)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDelta {
    pub name: String,
    pub phi_before: f64,
    pub phi_after: f64,
    pub weight_before: f64,
    pub weight_after: f64,
    pub absolute_delta: f64,
    pub relative_delta: RelativeDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedField {
    pub name: String,
    pub phi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub before: String,
    pub after: String,
    /// `f(x)` after minus `f(x)` before.
    pub probability_shift: f64,
    pub deltas: Vec<FieldDelta>,
    pub additions: Vec<AddedField>,
    pub removals: Vec<AddedField>,
    /// Over the common fields minus exclusions; `None` when a side has zero norm.
    pub cosine: Option<f64>,
    pub cosine_excluded: Vec<String>,
}

/// One side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct Side<'a> {
    pub name: &'a str,
    pub attribution: &'a AttributionVector,
    pub normalized: &'a NormalizedAttribution,
}

/// Field-by-field comparison of two attribution runs, aligned by field name.
/// Fields present on only one side must be listed in `injected`.
pub fn compare_attributions(
    before: Side<'_>,
    after: Side<'_>,
    injected: &BTreeSet<String>,
    excluded: &BTreeSet<String>,
) -> Result<Comparison, AnalysisError> {
    for side in [&before, &after] {
        if side.attribution.fields.len() != side.attribution.phi.len() {
            return Err(AnalysisError::LengthMismatch {
                names: side.attribution.fields.len(),
                weights: side.attribution.phi.len(),
            });
        }
    }
    let phi_of = |s: &Side<'_>| -> BTreeMap<String, f64> {
        s.attribution.fields.iter().cloned().zip(s.attribution.phi.iter().copied()).collect()
    };
    let (pb, pa) = (phi_of(&before), phi_of(&after));
    let (wb, wa) = (before.normalized.by_name(), after.normalized.by_name());

    let only_before: Vec<String> = pb.keys().filter(|k| !pa.contains_key(*k)).cloned().collect();
    let only_after: Vec<String> = pa.keys().filter(|k| !pb.contains_key(*k)).cloned().collect();
    let undeclared_before: Vec<String> = only_before.iter().filter(|k| !injected.contains(*k)).cloned().collect();
    let undeclared_after: Vec<String> = only_after.iter().filter(|k| !injected.contains(*k)).cloned().collect();
    if !undeclared_before.is_empty() || !undeclared_after.is_empty() {
        return Err(AnalysisError::FieldMismatch {
            only_first: undeclared_before,
            only_second: undeclared_after,
        });
    }

    // keep the `after` side's field order
    let deltas = after
        .attribution
        .fields
        .iter()
        .filter(|k| pb.contains_key(*k))
        .map(|k| {
            let (w0, w1) = (wb[k.as_str()], wa[k.as_str()]);
            FieldDelta {
                name: k.clone(),
                phi_before: pb[k],
                phi_after: pa[k],
                weight_before: w0,
                weight_after: w1,
                absolute_delta: w1 - w0,
                relative_delta: relative_delta(w0, w1),
            }
        })
        .collect();
    let added = |names: &[String], phi: &BTreeMap<String, f64>, w: &BTreeMap<&str, f64>| {
        names
            .iter()
            .map(|k| AddedField {
                name: k.clone(),
                phi: phi[k],
                weight: w[k.as_str()],
            })
            .collect::<Vec<_>>()
    };

    let mut cosine_excluded: BTreeSet<String> = excluded.clone();
    cosine_excluded.extend(injected.iter().cloned());
    cosine_excluded.extend(only_before.iter().cloned());
    cosine_excluded.extend(only_after.iter().cloned());
    let cosine = match cosine_similarity(before.normalized, after.normalized, &cosine_excluded) {
        Ok(c) => Some(c),
        Err(AnalysisError::ZeroNormVector) => None,
        Err(e) => return Err(e),
    };

    Ok(Comparison {
        before: before.name.to_string(),
        after: after.name.to_string(),
        probability_shift: after.attribution.f_x - before.attribution.f_x,
        deltas,
        additions: added(&only_after, &pa, &wa),
        removals: added(&only_before, &pb, &wb),
        cosine,
        cosine_excluded: cosine_excluded.into_iter().collect(),
    })
}

/// Percentage with two decimals, ties rounded to even (e.g. `0.642857` → `"64.29%"`).
pub fn format_percent(fraction: f64) -> String {
    format!("{}%", round_half_even(fraction * 100.0, 2))
}

/// Decimal rounding with ties to even, applied to the shortest decimal form of `x`.
pub fn round_half_even(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    // `{:e}` gives the shortest round-trip digits, so ties are decided on the
    // decimal value the user sees rather than its binary expansion.
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i64 = exp.parse().unwrap();
    let digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    // digits[0] has weight 10^exp; keep positions down to 10^-decimals
    let keep = exp + 1 + decimals as i64;
    let mut kept: Vec<u8> = if keep <= 0 {
        Vec::new()
    } else {
        digits.iter().copied().take(keep as usize).collect()
    };
    while (kept.len() as i64) < keep {
        kept.push(0);
    }
    let rest: Vec<u8> = if keep <= 0 {
        let mut r = vec![0u8; (-keep) as usize];
        r.extend(&digits);
        r
    } else {
        digits.iter().copied().skip(keep as usize).collect()
    };
    let round_up = match rest.first() {
        Some(&d) if d > 5 => true,
        Some(&5) => rest[1..].iter().any(|&d| d != 0) || kept.last().is_some_and(|d| d % 2 == 1),
        _ => false,
    };
    if round_up {
        let mut i = kept.len();
        loop {
            if i == 0 {
                kept.insert(0, 1);
                break;
            }
            i -= 1;
            if kept[i] == 9 {
                kept[i] = 0;
            } else {
                kept[i] += 1;
                break;
            }
        }
    }
    while kept.len() < decimals + 1 {
        kept.insert(0, 0);
    }
    let split = kept.len() - decimals;
    let int: String = kept[..split].iter().map(|d| (b'0' + d) as char).collect();
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac: String = kept[split..].iter().map(|d| (b'0' + d) as char).collect();
    let negative = x < 0.0 && kept.iter().any(|&d| d != 0);
    let sign = if negative { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}
