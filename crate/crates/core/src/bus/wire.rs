//! Line-delimited JSON records for out-of-process participants and trace logs.
//!
//! One record per line:
//! `{"topic":..,"time_ms":..,"kind":"real|bool|text","value":..,"quality":"GOOD|STALE|INVALID","source":..}`.
//! `value` is `null` only for never-published topics.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Bus, BusError, Millis, ParticipantHandle, Quality, Sample, TopicPath, Value, ValueKind};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: value does not match kind {kind:?}")]
    Value { line: usize, kind: ValueKind },
    #[error("line {line}: {source}")]
    Bus {
        line: usize,
        #[source]
        source: BusError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    pub topic: TopicPath,
    pub time_ms: Millis,
    pub kind: ValueKind,
    pub value: serde_json::Value,
    pub quality: Quality,
    pub source: String,
}

impl WireRecord {
    pub fn from_sample(sample: &Sample, kind: ValueKind) -> Self {
        let value = match &sample.value {
            None => serde_json::Value::Null,
            Some(Value::Real(v)) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Some(Value::Bool(b)) => serde_json::Value::Bool(*b),
            Some(Value::Text(t)) => serde_json::Value::String(t.clone()),
        };
        WireRecord {
            topic: sample.topic.clone(),
            time_ms: sample.time,
            kind,
            value,
            quality: sample.quality,
            source: sample.source.to_string(),
        }
    }

    /// Serialized record including the trailing newline.
    pub fn to_line(&self) -> String {
        // Serializing a plain struct of strings and numbers cannot fail.
        let mut line = serde_json::to_string(self).expect("wire record serializes");
        line.push('\n');
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Converts back into a sample, checking `value` against `kind`.
    pub fn to_sample(&self) -> Option<Sample> {
        let value = match (&self.kind, &self.value) {
            (_, serde_json::Value::Null) => None,
            (ValueKind::Real, serde_json::Value::Number(n)) => Some(Value::Real(n.as_f64()?)),
            (ValueKind::Bool, serde_json::Value::Bool(b)) => Some(Value::Bool(*b)),
            (ValueKind::Text, serde_json::Value::String(s)) => Some(Value::Text(s.clone())),
            _ => return None,
        };
        Some(Sample {
            topic: self.topic.clone(),
            time: self.time_ms,
            value,
            quality: self.quality,
            source: Arc::from(self.source.as_str()),
        })
    }
}

/// Input layer: publishes every record read from `input` through `h`.
/// Blank lines are skipped. Returns the number of accepted records.
pub fn ingest<R: BufRead>(bus: &Bus, h: &ParticipantHandle, input: R) -> Result<usize, WireError> {
    let mut accepted = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = WireRecord::parse_line(&line).map_err(|source| WireError::Json {
            line: lineno,
            source,
        })?;
        let sample = record.to_sample().ok_or(WireError::Value {
            line: lineno,
            kind: record.kind,
        })?;
        bus.publish(h, sample)
            .map_err(|source| WireError::Bus { line: lineno, source })?;
        accepted += 1;
    }
    Ok(accepted)
}

/// Output layer: writes the current snapshot of `h`'s subscriptions.
pub fn export<W: Write>(
    bus: &Bus,
    h: &ParticipantHandle,
    now: Millis,
    staleness_limit: Millis,
    mut out: W,
) -> Result<usize, WireError> {
    let snapshot = bus.poll(h, now, staleness_limit);
    for (topic, sample) in snapshot.iter() {
        let kind = bus.kind_of(topic).unwrap_or(ValueKind::Real);
        out.write_all(WireRecord::from_sample(sample, kind).to_line().as_bytes())?;
    }
    Ok(snapshot.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{create_bus, BusConfig, ParticipantRegistration};
    use proptest::prelude::*;

    fn tp(s: &str) -> TopicPath {
        TopicPath::parse(s).unwrap()
    }

    #[test]
    fn external_participant_round_trip() {
        let bus = create_bus(
            BusConfig::new()
                .declare(tp("ext/power_w"), ValueKind::Real)
                .declare(tp("ext/ok"), ValueKind::Bool)
                .declare(tp("grid/v"), ValueKind::Real),
        )
        .unwrap();
        let ext = bus
            .register(
                ParticipantRegistration::new("ext", 1000)
                    .publish(tp("ext/power_w"))
                    .publish(tp("ext/ok"))
                    .subscribe(tp("grid/v")),
            )
            .unwrap();
        let input = concat!(
            r#"{"topic":"ext/power_w","time_ms":0,"kind":"real","value":7200.0,"quality":"GOOD","source":"ext"}"#,
            "\n\n",
            r#"{"topic":"ext/ok","time_ms":0,"kind":"bool","value":true,"quality":"GOOD","source":"ext"}"#,
            "\n"
        );
        assert_eq!(ingest(&bus, &ext, input.as_bytes()).unwrap(), 2);
        assert_eq!(bus.snapshot(&tp("ext/power_w")).unwrap().real(), Some(7200.0));

        let mut out = Vec::new();
        export(&bus, &ext, 0, 1000, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.trim_end(),
            r#"{"topic":"grid/v","time_ms":0,"kind":"real","value":null,"quality":"INVALID","source":""}"#
        );
    }

    #[test]
    fn ingest_reports_offending_line() {
        let bus = create_bus(BusConfig::new().declare(tp("ext/p"), ValueKind::Real)).unwrap();
        let ext = bus
            .register(ParticipantRegistration::new("ext", 1000).publish(tp("ext/p")))
            .unwrap();
        let input = concat!(
            r#"{"topic":"ext/p","time_ms":5,"kind":"real","value":1.0,"quality":"GOOD","source":"ext"}"#,
            "\n",
            r#"{"topic":"ext/p","time_ms":4,"kind":"real","value":1.0,"quality":"GOOD","source":"ext"}"#,
            "\n"
        );
        match ingest(&bus, &ext, input.as_bytes()) {
            Err(WireError::Bus { line: 2, source: BusError::TimeRegression { .. } }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bad_kind = r#"{"topic":"ext/p","time_ms":9,"kind":"real","value":"x","quality":"GOOD","source":"ext"}"#;
        assert!(matches!(
            ingest(&bus, &ext, bad_kind.as_bytes()),
            Err(WireError::Value { line: 1, .. })
        ));
        assert!(matches!(
            ingest(&bus, &ext, "{not json".as_bytes()),
            Err(WireError::Json { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn real_records_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO, t in 0u64..1u64 << 40) {
            let src: Arc<str> = Arc::from("p");
            let s = Sample::new(tp("a/b"), t, v, &src).with_quality(Quality::Stale);
            let line = WireRecord::from_sample(&s, ValueKind::Real).to_line();
            let back = WireRecord::parse_line(&line).unwrap().to_sample().unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
