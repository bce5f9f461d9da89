use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BusError;

/// Slash-separated signal address, e.g. `grid/node1/phase1/voltage_mag`.
///
/// Segments are non-empty runs of ASCII letters, digits and `_`. The rendered
/// form is stored behind an `Arc` so samples can be cloned cheaply on every poll.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicPath(Arc<str>);

impl TopicPath {
    pub fn parse(path: &str) -> Result<Self, BusError> {
        if path.is_empty() {
            return Err(BusError::InvalidTopic(path.to_string()));
        }
        for segment in path.split('/') {
            if !is_token(segment) {
                return Err(BusError::InvalidTopic(path.to_string()));
            }
        }
        Ok(TopicPath(Arc::from(path)))
    }

    /// Joins already-validated segments.
    pub fn from_segments<I, S>(segments: I) -> Result<Self, BusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let joined = segments
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect::<Vec<_>>()
            .join("/");
        Self::parse(&joined)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

/// Participant names and topic segments share the same token alphabet.
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl fmt::Display for TopicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TopicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TopicPath({})", self.0)
    }
}

impl FromStr for TopicPath {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl AsRef<str> for TopicPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Serialize for TopicPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TopicPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        TopicPath::parse(&s).map_err(serde::de::Error::custom)
    }
}
