//! Measurement points, samples and the schema registry.
//!
//! A measurement point (MP) is a named tuple of typed metrics that an
//! instrumented application can emit at one instant. Applications declare
//! their MPs once during a setup phase; at run time they inject value tuples
//! which get timestamped and handed to the stream machinery.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::time::Micros;

/// The closed set of metric types a schema field can have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricType {
    Int64,
    Float64,
    Text,
}

impl MetricType {
    pub fn name(self) -> &'static str {
        match self {
            MetricType::Int64 => "int64",
            MetricType::Float64 => "float64",
            MetricType::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<MetricType> {
        match s {
            "int64" => Some(MetricType::Int64),
            "float64" => Some(MetricType::Float64),
            "text" => Some(MetricType::Text),
            _ => None,
        }
    }
}

/// One injected metric value.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Int64(i64),
    Float64(f64),
    Text(String),
}

impl MetricValue {
    pub fn metric_type(&self) -> MetricType {
        match self {
            MetricValue::Int64(_) => MetricType::Int64,
            MetricValue::Float64(_) => MetricType::Float64,
            MetricValue::Text(_) => MetricType::Text,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetricValue::Int64(v) => Some(*v as f64),
            MetricValue::Float64(v) => Some(*v),
            MetricValue::Text(_) => None,
        }
    }
}

impl From<i64> for MetricValue {
    fn from(v: i64) -> Self {
        MetricValue::Int64(v)
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Float64(v)
    }
}

impl From<&str> for MetricValue {
    fn from(v: &str) -> Self {
        MetricValue::Text(String::from(v))
    }
}

/// Index of a measurement point within one application, assigned in
/// registration order starting at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MpIndex(pub u16);

/// A declared measurement point: a named, ordered tuple of typed fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MpSchema {
    pub name: String,
    pub fields: Vec<(String, MetricType)>,
    pub index: MpIndex,
}

impl MpSchema {
    pub fn field_type(&self, field: &str) -> Option<MetricType> {
        self.fields
            .iter()
            .find(|(n, _)| n == field)
            .map(|(_, t)| *t)
    }
}

/// One timestamped injection of values for an MP.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub mp: MpIndex,
    /// Seconds since client start, microsecond resolution, non-decreasing
    /// per MP within one client.
    pub client_ts: Micros,
    pub values: Vec<MetricValue>,
}

/// Identity a client presents to the collection server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientIdentity {
    pub experiment_id: String,
    pub node_id: String,
    pub app_name: String,
    /// Absolute wall-clock microseconds (client clock) at client start.
    pub start_time: Micros,
}

impl ClientIdentity {
    pub fn validate(&self) -> Result<(), MeasureError> {
        if self.experiment_id.is_empty() {
            return Err(MeasureError::EmptyExperimentId);
        }
        if self.start_time.0 <= 0 {
            return Err(MeasureError::InvalidStartTime);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeasureError {
    DuplicateMpName(String),
    EmptyFieldList,
    MalformedIdentifier(String),
    DuplicateFieldName(String),
    UnknownMpName(String),
    ArityMismatch { expected: usize, got: usize },
    TypeMismatch { field: String, expected: MetricType, got: MetricType },
    EmptyExperimentId,
    InvalidStartTime,
}

impl fmt::Display for MeasureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureError::DuplicateMpName(n) => write!(f, "measurement point '{n}' already defined"),
            MeasureError::EmptyFieldList => write!(f, "measurement point needs at least one field"),
            MeasureError::MalformedIdentifier(n) => write!(f, "malformed identifier '{n}'"),
            MeasureError::DuplicateFieldName(n) => write!(f, "duplicate field name '{n}'"),
            MeasureError::UnknownMpName(n) => write!(f, "unknown measurement point '{n}'"),
            MeasureError::ArityMismatch { expected, got } => {
                write!(f, "expected {expected} values, got {got}")
            }
            MeasureError::TypeMismatch { field, expected, got } => write!(
                f,
                "field '{field}' expects {} but got {}",
                expected.name(),
                got.name()
            ),
            MeasureError::EmptyExperimentId => write!(f, "experiment id must not be empty"),
            MeasureError::InvalidStartTime => write!(f, "start time must be positive"),
        }
    }
}

impl core::error::Error for MeasureError {}

/// `[a-z][a-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Registry of the MPs one application has defined. Definition happens in a
/// single setup phase before any injection.
#[derive(Debug, Default, Clone)]
pub struct MpRegistry {
    schemas: Vec<MpSchema>,
}

impl MpRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Define a measurement point, assigning it the next free index.
    pub fn define_mp(
        &mut self,
        name: &str,
        fields: &[(&str, MetricType)],
    ) -> Result<MpSchema, MeasureError> {
        if !is_identifier(name) {
            return Err(MeasureError::MalformedIdentifier(String::from(name)));
        }
        if fields.is_empty() {
            return Err(MeasureError::EmptyFieldList);
        }
        if self.schemas.iter().any(|s| s.name == name) {
            return Err(MeasureError::DuplicateMpName(String::from(name)));
        }
        let mut seen: Vec<&str> = Vec::with_capacity(fields.len());
        for (field, _) in fields {
            if !is_identifier(field) {
                return Err(MeasureError::MalformedIdentifier(String::from(*field)));
            }
            if seen.contains(field) {
                return Err(MeasureError::DuplicateFieldName(String::from(*field)));
            }
            seen.push(field);
        }
        let schema = MpSchema {
            name: String::from(name),
            fields: fields
                .iter()
                .map(|(n, t)| (String::from(*n), *t))
                .collect(),
            index: MpIndex(self.schemas.len() as u16),
        };
        self.schemas.push(schema.clone());
        Ok(schema)
    }

    pub fn by_name(&self, name: &str) -> Option<&MpSchema> {
        self.schemas.iter().find(|s| s.name == name)
    }

    pub fn by_index(&self, index: MpIndex) -> Option<&MpSchema> {
        self.schemas.get(index.0 as usize)
    }

    pub fn schemas(&self) -> &[MpSchema] {
        &self.schemas
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    /// Resolve a set of MP names to indices, the selection step behind
    /// run configuration `enable` lines.
    pub fn enabled_mps<'a, I>(&self, names: I) -> Result<Vec<MpIndex>, MeasureError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = Vec::new();
        for name in names {
            let schema = self
                .by_name(name)
                .ok_or_else(|| MeasureError::UnknownMpName(String::from(name)))?;
            if !out.contains(&schema.index) {
                out.push(schema.index);
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Check a value tuple against a schema. Arity and type errors are
/// programming errors and reported synchronously to the injecting caller.
pub fn check_values(schema: &MpSchema, values: &[MetricValue]) -> Result<(), MeasureError> {
    if values.len() != schema.fields.len() {
        return Err(MeasureError::ArityMismatch {
            expected: schema.fields.len(),
            got: values.len(),
        });
    }
    for ((name, expected), value) in schema.fields.iter().zip(values) {
        let got = value.metric_type();
        if got != *expected {
            return Err(MeasureError::TypeMismatch {
                field: name.clone(),
                expected: *expected,
                got,
            });
        }
    }
    Ok(())
}
