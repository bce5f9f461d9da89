use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::TopicPath;

/// Simulation time in integer milliseconds since scenario start.
pub type Millis = u64;

/// Declared type of a topic's scalar payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Real,
    Bool,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Bool(bool),
    Text(String),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Real(_) => ValueKind::Real,
            Value::Bool(_) => ValueKind::Bool,
            Value::Text(_) => ValueKind::Text,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Real(v) => v.is_finite(),
            _ => true,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

/// Ordered from best to worst so `max` picks the degraded flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Quality {
    Good,
    Stale,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub topic: TopicPath,
    pub time: Millis,
    /// `None` only for topics that were never published.
    pub value: Option<Value>,
    pub quality: Quality,
    pub source: Arc<str>,
}

impl Sample {
    pub fn new(topic: TopicPath, time: Millis, value: impl Into<Value>, source: &Arc<str>) -> Self {
        Sample {
            topic,
            time,
            value: Some(value.into()),
            quality: Quality::Good,
            source: Arc::clone(source),
        }
    }

    pub fn with_quality(mut self, quality: Quality) -> Self {
        self.quality = quality;
        self
    }

    pub fn real(&self) -> Option<f64> {
        self.value.as_ref().and_then(Value::as_real)
    }

    pub fn time_s(&self) -> f64 {
        self.time as f64 / 1000.0
    }
}
