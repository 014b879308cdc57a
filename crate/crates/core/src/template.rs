//! Prompt templates with flat `{{ name }}` substitution.
//!
//! A template is an ordered list of literal and field segments. Fields are
//! numbered `1..=I` in document order; those numbers are the player indices
//! used everywhere else in the crate.
//!
//! Rendering is plain substitution with one whitespace rule: a field whose
//! value is the empty string swallows the single space that immediately
//! follows it. Optional slots (for example an injected `only`) can then be
//! left empty without producing a double space.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default reference value for absent fields.
pub const DEFAULT_REFERENCE_TOKEN: &str = "_";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbalanced braces: `{{{{` at byte {offset} has no closing `}}}}`")]
    UnbalancedBraces { offset: usize },
    #[error("invalid field name `{name}` at byte {offset}")]
    InvalidFieldName { name: String, offset: usize },
    #[error("duplicate field name `{0}`")]
    DuplicateFieldName(String),
    #[error("template contains no fields")]
    EmptyTemplate,
    #[error("no value for field `{0}`")]
    MissingFieldValue(String),
    #[error("value given for unknown field `{0}`")]
    UnknownField(String),
    #[error("assignment covers {got} fields, template has {expected}")]
    CoverageMismatch { expected: usize, got: usize },
    #[error("coalition member {index} outside field range 1..={field_count}")]
    CoalitionOutOfRange { index: usize, field_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum InfoClass {
    #[serde(rename = "high")]
    HighInformation,
    #[serde(rename = "low")]
    LowInformation,
}

impl InfoClass {
    /// Dunder names (`__like_this__`) carry decision-relevant content.
    pub fn of_name(name: &str) -> Self {
        if name.len() > 4 && name.starts_with("__") && name.ends_with("__") {
            InfoClass::HighInformation
        } else {
            InfoClass::LowInformation
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InfoClass::HighInformation => "high",
            InfoClass::LowInformation => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDescriptor {
    pub index: usize,
    pub name: String,
    pub info_class: InfoClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateSegment {
    Literal(String),
    /// `marker` is the source text of the marker, kept for byte-exact round trips.
    Field {
        descriptor: FieldDescriptor,
        marker: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<TemplateSegment>,
    fields: Vec<FieldDescriptor>,
}

fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses template text into segments.
pub fn parse_template(source: &str) -> Result<PromptTemplate, TemplateError> {
    let mut segments = Vec::new();
    let mut fields: Vec<FieldDescriptor> = Vec::new();
    let mut seen = HashSet::new();
    let mut rest = source;
    let mut offset = 0;

    while let Some(open) = rest.find("{{") {
        if open > 0 {
            segments.push(TemplateSegment::Literal(rest[..open].to_string()));
        }
        let after_open = &rest[open + 2..];
        let close = after_open
            .find("}}")
            .ok_or(TemplateError::UnbalancedBraces { offset: offset + open })?;
        let inner = &after_open[..close];
        let name = inner.trim();
        if !is_valid_name(name) {
            return Err(TemplateError::InvalidFieldName {
                name: name.to_string(),
                offset: offset + open,
            });
        }
        if !seen.insert(name.to_string()) {
            return Err(TemplateError::DuplicateFieldName(name.to_string()));
        }
        let descriptor = FieldDescriptor {
            index: fields.len() + 1,
            name: name.to_string(),
            info_class: InfoClass::of_name(name),
        };
        fields.push(descriptor.clone());
        let marker_len = 2 + close + 2;
        segments.push(TemplateSegment::Field {
            descriptor,
            marker: rest[open..open + marker_len].to_string(),
        });
        rest = &rest[open + marker_len..];
        offset += open + marker_len;
    }
    if !rest.is_empty() {
        segments.push(TemplateSegment::Literal(rest.to_string()));
    }
    if fields.is_empty() {
        return Err(TemplateError::EmptyTemplate);
    }
    Ok(PromptTemplate { segments, fields })
}

impl PromptTemplate {
    pub fn segments(&self) -> &[TemplateSegment] {
        &self.segments
    }

    pub fn fields(&self) -> &[FieldDescriptor] {
        &self.fields
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, index: usize) -> Option<&FieldDescriptor> {
        index.checked_sub(1).and_then(|i| self.fields.get(i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.index)
    }

    /// Reproduces the source text byte for byte.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                TemplateSegment::Literal(text) => out.push_str(text),
                TemplateSegment::Field { marker, .. } => out.push_str(marker),
            }
        }
        out
    }

    /// Hex SHA-256 of the source text.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_source().as_bytes()))
    }

    /// Substitutes `values` (indexed by field order) into the template.
    pub fn render_values(&self, values: &[String]) -> Result<String, TemplateError> {
        if values.len() != self.fields.len() {
            return Err(TemplateError::CoverageMismatch {
                expected: self.fields.len(),
                got: values.len(),
            });
        }
        let mut out = String::new();
        let mut swallow_space = false;
        for seg in &self.segments {
            match seg {
                TemplateSegment::Literal(text) => {
                    let text = if swallow_space {
                        text.strip_prefix(' ').unwrap_or(text)
                    } else {
                        text
                    };
                    out.push_str(text);
                    swallow_space = false;
                }
                TemplateSegment::Field { descriptor, .. } => {
                    let value = &values[descriptor.index - 1];
                    out.push_str(value);
                    swallow_space = value.is_empty();
                }
            }
        }
        Ok(out)
    }

    pub fn render(&self, assignment: &PromptVector) -> Result<String, TemplateError> {
        self.render_values(assignment.values())
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

/// Maps every field index to its information class.
pub fn field_info_classes(template: &PromptTemplate) -> BTreeMap<usize, InfoClass> {
    template
        .fields()
        .iter()
        .map(|f| (f.index, f.info_class))
        .collect()
}

fn resolve_named(
    template: &PromptTemplate,
    named: &BTreeMap<String, String>,
) -> Result<Vec<String>, TemplateError> {
    for name in named.keys() {
        if template.index_of(name).is_none() {
            return Err(TemplateError::UnknownField(name.clone()));
        }
    }
    template
        .fields()
        .iter()
        .map(|f| {
            named
                .get(&f.name)
                .cloned()
                .ok_or_else(|| TemplateError::MissingFieldValue(f.name.clone()))
        })
        .collect()
}

/// The field values of a concrete prompt, indexed by field order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptVector(Vec<String>);

impl PromptVector {
    pub fn new(values: Vec<String>) -> Self {
        PromptVector(values)
    }

    /// Resolves a name → value map against the template; every field must be covered.
    pub fn from_named(
        template: &PromptTemplate,
        named: &BTreeMap<String, String>,
    ) -> Result<Self, TemplateError> {
        resolve_named(template, named).map(PromptVector)
    }

    pub fn values(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based access.
    pub fn get(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.0.get(i)).map(String::as_str)
    }

    pub fn to_named(&self, template: &PromptTemplate) -> BTreeMap<String, String> {
        template
            .fields()
            .iter()
            .zip(&self.0)
            .map(|(f, v)| (f.name.clone(), v.clone()))
            .collect()
    }
}

/// Values substituted for fields outside a coalition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReferenceVector(Vec<String>);

impl ReferenceVector {
    pub fn uniform(template: &PromptTemplate, token: &str) -> Self {
        ReferenceVector(vec![token.to_string(); template.field_count()])
    }

    /// Uniform `token`, with per-field overrides by name.
    pub fn with_overrides(
        template: &PromptTemplate,
        token: &str,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self, TemplateError> {
        let mut values = vec![token.to_string(); template.field_count()];
        for (name, value) in overrides {
            let index = template
                .index_of(name)
                .ok_or_else(|| TemplateError::UnknownField(name.clone()))?;
            values[index - 1] = value.clone();
        }
        Ok(ReferenceVector(values))
    }

    pub fn new(values: Vec<String>) -> Self {
        ReferenceVector(values)
    }

    pub fn values(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.0.get(i)).map(String::as_str)
    }

    pub fn as_prompt_vector(&self) -> PromptVector {
        PromptVector(self.0.clone())
    }
}

/// A set of field indices drawn from `1..=field_count`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coalition {
    field_count: usize,
    words: Vec<u64>,
}

impl Coalition {
    pub fn empty(field_count: usize) -> Self {
        Coalition {
            field_count,
            words: vec![0; field_count.div_ceil(64).max(1)],
        }
    }

    pub fn full(field_count: usize) -> Self {
        let mut c = Coalition::empty(field_count);
        for i in 1..=field_count {
            c.set(i);
        }
        c
    }

    pub fn from_members<I>(field_count: usize, members: I) -> Result<Self, TemplateError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut c = Coalition::empty(field_count);
        for m in members {
            c.insert(m)?;
        }
        Ok(c)
    }

    fn set(&mut self, index: usize) {
        let bit = index - 1;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn insert(&mut self, index: usize) -> Result<(), TemplateError> {
        if index == 0 || index > self.field_count {
            return Err(TemplateError::CoalitionOutOfRange {
                index,
                field_count: self.field_count,
            });
        }
        self.set(index);
        Ok(())
    }

    pub fn remove(&mut self, index: usize) {
        if index >= 1 && index <= self.field_count {
            let bit = index - 1;
            self.words[bit / 64] &= !(1 << (bit % 64));
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        if index == 0 || index > self.field_count {
            return false;
        }
        let bit = index - 1;
        self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn field_count(&self) -> usize {
        self.field_count
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.field_count).filter(|&i| self.contains(i))
    }
}

/// Builds the composite input: `x` on coalition members, `r` elsewhere.
pub fn compose(
    x: &PromptVector,
    r: &ReferenceVector,
    s: &Coalition,
) -> Result<PromptVector, TemplateError> {
    if x.len() != r.len() {
        return Err(TemplateError::CoverageMismatch {
            expected: x.len(),
            got: r.len(),
        });
    }
    if s.field_count() > x.len() {
        if let Some(index) = s.members().find(|&i| i > x.len()) {
            return Err(TemplateError::CoalitionOutOfRange {
                index,
                field_count: x.len(),
            });
        }
    }
    let values = x
        .values()
        .iter()
        .zip(r.values())
        .enumerate()
        .map(|(i, (xv, rv))| if s.contains(i + 1) { xv.clone() } else { rv.clone() })
        .collect();
    Ok(PromptVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[&str]) -> PromptVector {
        PromptVector::new(values.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn parses_dunder_field_between_literals() {
        let t = parse_template("Costs {{ __v18_price_A__ }},").unwrap();
        assert_eq!(t.segments().len(), 3);
        assert_eq!(t.segments()[0], TemplateSegment::Literal("Costs ".into()));
        match &t.segments()[1] {
            TemplateSegment::Field { descriptor, .. } => {
                assert_eq!(descriptor.index, 1);
                assert_eq!(descriptor.name, "__v18_price_A__");
                assert_eq!(descriptor.info_class, InfoClass::HighInformation);
            }
            other => panic!("expected field, got {other:?}"),
        }
        assert_eq!(t.segments()[2], TemplateSegment::Literal(",".into()));
    }

    #[test]
    fn minimal_template() {
        let t = parse_template("{{ a }}").unwrap();
        assert_eq!(t.segments().len(), 1);
        assert_eq!(t.field_count(), 1);
        assert_eq!(t.fields()[0].info_class, InfoClass::LowInformation);
        assert_eq!(t.render(&pv(&["x"])).unwrap(), "x");
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_template("{{ a }} and {{ a }}"),
            Err(TemplateError::DuplicateFieldName("a".into()))
        );
        assert_eq!(
            parse_template("x {{ a"),
            Err(TemplateError::UnbalancedBraces { offset: 2 })
        );
        assert_eq!(parse_template("no fields"), Err(TemplateError::EmptyTemplate));
        assert_eq!(parse_template(""), Err(TemplateError::EmptyTemplate));
        assert!(matches!(
            parse_template("{{ 1abc }}"),
            Err(TemplateError::InvalidFieldName { .. })
        ));
        assert!(matches!(
            parse_template("{{ a.b }}"),
            Err(TemplateError::InvalidFieldName { .. })
        ));
    }

    #[test]
    fn marker_spacing_round_trips() {
        let src = "{{a}} x {{  b\t}}\n}} tail";
        let t = parse_template(src).unwrap();
        assert_eq!(t.to_source(), src);
        assert_eq!(t.fields()[1].name, "b");
    }

    #[test]
    fn empty_value_swallows_following_space() {
        let t = parse_template("is {{ only }} {{ tt }} hours").unwrap();
        assert_eq!(t.render(&pv(&["", "7"])).unwrap(), "is 7 hours");
        assert_eq!(t.render(&pv(&["only", "7"])).unwrap(), "is only 7 hours");
        assert_eq!(t.render(&pv(&["_", "_"])).unwrap(), "is _ _ hours");
    }

    #[test]
    fn named_resolution() {
        let t = parse_template("{{ a }} {{ b }}").unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), "1".to_string());
        assert_eq!(
            PromptVector::from_named(&t, &m),
            Err(TemplateError::MissingFieldValue("b".into()))
        );
        m.insert("b".to_string(), "2".to_string());
        m.insert("c".to_string(), "3".to_string());
        assert_eq!(
            PromptVector::from_named(&t, &m),
            Err(TemplateError::UnknownField("c".into()))
        );
        m.remove("c");
        let x = PromptVector::from_named(&t, &m).unwrap();
        assert_eq!(x.to_named(&t), m);
    }

    #[test]
    fn compose_examples() {
        let x = pv(&["$400", "7"]);
        let r = ReferenceVector::new(vec!["_".into(), "_".into()]);
        let empty = Coalition::empty(2);
        let full = Coalition::full(2);
        assert_eq!(compose(&x, &r, &empty).unwrap(), r.as_prompt_vector());
        assert_eq!(compose(&x, &r, &full).unwrap(), x);
        let s = Coalition::from_members(2, [1]).unwrap();
        assert_eq!(compose(&x, &r, &s).unwrap(), pv(&["$400", "_"]));
        assert!(matches!(
            Coalition::from_members(2, [3]),
            Err(TemplateError::CoalitionOutOfRange { index: 3, .. })
        ));
        let wide = Coalition::from_members(3, [3]).unwrap();
        assert!(matches!(
            compose(&x, &r, &wide),
            Err(TemplateError::CoalitionOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn coalition_beyond_64_fields() {
        let mut c = Coalition::empty(130);
        c.insert(1).unwrap();
        c.insert(64).unwrap();
        c.insert(65).unwrap();
        c.insert(130).unwrap();
        assert_eq!(c.members().collect::<Vec<_>>(), vec![1, 64, 65, 130]);
        c.remove(64);
        assert_eq!(c.len(), 3);
        assert_eq!(Coalition::full(130).len(), 130);
    }

    #[test]
    fn info_classes() {
        let t = parse_template("{{ v1_The }} {{ __v18_price_A__ }} {{ ____ }}").unwrap();
        let classes = field_info_classes(&t);
        assert_eq!(classes[&1], InfoClass::LowInformation);
        assert_eq!(classes[&2], InfoClass::HighInformation);
        assert_eq!(classes[&3], InfoClass::LowInformation);
        let plain = parse_template("{{ a }} {{ b }}").unwrap();
        assert!(field_info_classes(&plain)
            .values()
            .all(|c| *c == InfoClass::LowInformation));
    }

    #[test]
    fn reference_overrides() {
        let t = parse_template("{{ a }} {{ b }}").unwrap();
        let mut o = BTreeMap::new();
        o.insert("b".to_string(), "B".to_string());
        let r = ReferenceVector::with_overrides(&t, "_", &o).unwrap();
        assert_eq!(r.values(), &["_".to_string(), "B".to_string()]);
        o.insert("zz".to_string(), "".to_string());
        assert!(ReferenceVector::with_overrides(&t, "_", &o).is_err());
    }
}
