//! Topic-addressed signal bus with last-value-cache semantics.
//!
//! Every participant registers the topics it reads (its input blocks) and the
//! topics it writes (its output blocks). Publishes replace the cached value of a
//! topic; polls return the latest cached sample, downgraded to
//! [`Quality::Stale`] once it is older than the caller's staleness limit. There
//! is no queueing: a fast reader of a slow topic sees the held value until the
//! next publish, which is what lets participants with unrelated step sizes be
//! coupled deterministically.

mod sample;
mod topic;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

pub use sample::{Millis, Quality, Sample, Value, ValueKind};
pub use topic::{is_token, TopicPath};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("invalid topic path {0:?}")]
    InvalidTopic(String),
    #[error("invalid participant name {0:?}")]
    InvalidName(String),
    #[error("topic {0} declared more than once")]
    DuplicateTopic(TopicPath),
    #[error("topic {0} is not declared on this bus")]
    UnknownTopic(TopicPath),
    #[error("participant name {0:?} already registered")]
    DuplicateParticipant(String),
    #[error("topic {topic} already has publisher {owner:?}")]
    PublisherConflict { topic: TopicPath, owner: String },
    #[error("participant {participant:?} both subscribes to and publishes {topic}")]
    OverlappingTopic { participant: String, topic: TopicPath },
    #[error("participant {participant:?} does not own topic {topic}")]
    NotOwner { participant: String, topic: TopicPath },
    #[error("participant {participant:?} is not subscribed to {topic}")]
    NotSubscribed { participant: String, topic: TopicPath },
    #[error("sample source {source_name:?} does not match handle {participant:?}")]
    SourceMismatch { participant: String, source_name: String },
    #[error("non-finite value on {topic}; sample dropped as INVALID")]
    NonFinite { topic: TopicPath },
    #[error("sample on {topic} carries no value")]
    MissingValue { topic: TopicPath },
    #[error("topic {topic} expects {expected:?}, got {got:?}")]
    KindMismatch {
        topic: TopicPath,
        expected: ValueKind,
        got: ValueKind,
    },
    #[error("time regression on {topic}: {time} ms after {last} ms")]
    TimeRegression {
        topic: TopicPath,
        last: Millis,
        time: Millis,
    },
}

/// Topic declarations a bus is created from.
#[derive(Debug, Clone, Default)]
pub struct BusConfig {
    topics: Vec<(TopicPath, ValueKind)>,
}

impl BusConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(mut self, topic: TopicPath, kind: ValueKind) -> Self {
        self.topics.push((topic, kind));
        self
    }

    pub fn push(&mut self, topic: TopicPath, kind: ValueKind) {
        self.topics.push((topic, kind));
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ParticipantRegistration {
    pub name: String,
    pub subscriptions: Vec<TopicPath>,
    pub publications: Vec<TopicPath>,
    pub step_ms: Millis,
}

impl ParticipantRegistration {
    pub fn new(name: impl Into<String>, step_ms: Millis) -> Self {
        ParticipantRegistration {
            name: name.into(),
            subscriptions: Vec::new(),
            publications: Vec::new(),
            step_ms,
        }
    }

    pub fn subscribe(mut self, topic: TopicPath) -> Self {
        self.subscriptions.push(topic);
        self
    }

    pub fn publish(mut self, topic: TopicPath) -> Self {
        self.publications.push(topic);
        self
    }
}

/// Capability issued by [`Bus::register`]. Deliberately not `Clone`: one
/// logical task drives each handle.
#[derive(Debug)]
pub struct ParticipantHandle {
    name: Arc<str>,
    step_ms: Millis,
    subscriptions: Vec<(TopicPath, usize)>,
    publications: HashMap<TopicPath, usize>,
}

impl ParticipantHandle {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &Arc<str> {
        &self.name
    }

    pub fn step_ms(&self) -> Millis {
        self.step_ms
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &TopicPath> {
        self.subscriptions.iter().map(|(t, _)| t)
    }

    pub fn owns(&self, topic: &TopicPath) -> bool {
        self.publications.contains_key(topic)
    }

    /// A GOOD sample on `topic` stamped with this participant as source.
    pub fn sample(&self, topic: &TopicPath, time: Millis, value: impl Into<Value>) -> Sample {
        Sample::new(topic.clone(), time, value, &self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub time: Millis,
}

/// Latest sample of every subscribed topic, keyed by path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot(BTreeMap<TopicPath, Sample>);

impl Snapshot {
    pub fn get(&self, topic: &TopicPath) -> Option<&Sample> {
        self.0.get(topic)
    }

    pub fn get_str(&self, topic: &str) -> Option<&Sample> {
        let t = TopicPath::parse(topic).ok()?;
        self.0.get(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TopicPath, &Sample)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct TopicSlot {
    path: TopicPath,
    kind: ValueKind,
    publisher: Option<Arc<str>>,
    last: Option<Sample>,
}

struct BusState {
    slots: Vec<TopicSlot>,
    index: HashMap<TopicPath, usize>,
    participants: BTreeSet<String>,
    trace: Option<TraceSink>,
}

struct TraceSink {
    out: Box<dyn Write + Send>,
    error: Option<std::io::Error>,
}

/// The in-process bus. `Sync`: all state sits behind one lock, which makes
/// every publish atomic per topic and keeps the trace log in acceptance order.
pub struct Bus {
    state: Mutex<BusState>,
}

/// Creates a bus from topic declarations.
pub fn create_bus(config: BusConfig) -> Result<Bus, BusError> {
    let mut slots = Vec::with_capacity(config.topics.len());
    let mut index = HashMap::with_capacity(config.topics.len());
    for (path, kind) in config.topics {
        if index.contains_key(&path) {
            return Err(BusError::DuplicateTopic(path));
        }
        index.insert(path.clone(), slots.len());
        slots.push(TopicSlot {
            path,
            kind,
            publisher: None,
            last: None,
        });
    }
    Ok(Bus {
        state: Mutex::new(BusState {
            slots,
            index,
            participants: BTreeSet::new(),
            trace: None,
        }),
    })
}

impl Bus {
    pub fn topic_count(&self) -> usize {
        self.state.lock().slots.len()
    }

    pub fn participant_count(&self) -> usize {
        self.state.lock().participants.len()
    }

    pub fn kind_of(&self, topic: &TopicPath) -> Option<ValueKind> {
        let state = self.state.lock();
        state.index.get(topic).map(|&i| state.slots[i].kind)
    }

    /// Attaches an append-only trace log; every accepted publish is written to
    /// it as one wire record.
    pub fn set_trace(&self, out: Box<dyn Write + Send>) {
        self.state.lock().trace = Some(TraceSink { out, error: None });
    }

    /// Detaches and flushes the trace log, surfacing the first write error.
    pub fn finish_trace(&self) -> std::io::Result<()> {
        let sink = self.state.lock().trace.take();
        match sink {
            None => Ok(()),
            Some(mut sink) => {
                if let Some(e) = sink.error.take() {
                    return Err(e);
                }
                sink.out.flush()
            }
        }
    }

    pub fn register(&self, reg: ParticipantRegistration) -> Result<ParticipantHandle, BusError> {
        if !is_token(&reg.name) {
            return Err(BusError::InvalidName(reg.name));
        }
        let mut state = self.state.lock();
        if state.participants.contains(&reg.name) {
            return Err(BusError::DuplicateParticipant(reg.name));
        }

        let mut subscriptions = Vec::with_capacity(reg.subscriptions.len());
        for topic in &reg.subscriptions {
            let idx = *state
                .index
                .get(topic)
                .ok_or_else(|| BusError::UnknownTopic(topic.clone()))?;
            if !subscriptions.iter().any(|(t, _)| t == topic) {
                subscriptions.push((topic.clone(), idx));
            }
        }

        let mut publications = HashMap::with_capacity(reg.publications.len());
        for topic in &reg.publications {
            let idx = *state
                .index
                .get(topic)
                .ok_or_else(|| BusError::UnknownTopic(topic.clone()))?;
            if subscriptions.iter().any(|(t, _)| t == topic) {
                return Err(BusError::OverlappingTopic {
                    participant: reg.name.clone(),
                    topic: topic.clone(),
                });
            }
            if let Some(owner) = &state.slots[idx].publisher {
                return Err(BusError::PublisherConflict {
                    topic: topic.clone(),
                    owner: owner.to_string(),
                });
            }
            publications.insert(topic.clone(), idx);
        }

        let name: Arc<str> = Arc::from(reg.name.as_str());
        for &idx in publications.values() {
            state.slots[idx].publisher = Some(Arc::clone(&name));
        }
        state.participants.insert(reg.name);

        Ok(ParticipantHandle {
            name,
            step_ms: reg.step_ms,
            subscriptions,
            publications,
        })
    }

    pub fn publish(&self, h: &ParticipantHandle, sample: Sample) -> Result<Ack, BusError> {
        if *sample.source != *h.name {
            return Err(BusError::SourceMismatch {
                participant: h.name.to_string(),
                source_name: sample.source.to_string(),
            });
        }
        let idx = *h
            .publications
            .get(&sample.topic)
            .ok_or_else(|| BusError::NotOwner {
                participant: h.name.to_string(),
                topic: sample.topic.clone(),
            })?;
        let value = sample.value.as_ref().ok_or_else(|| BusError::MissingValue {
            topic: sample.topic.clone(),
        })?;
        if !value.is_finite() {
            return Err(BusError::NonFinite {
                topic: sample.topic.clone(),
            });
        }

        let mut state = self.state.lock();
        let state = &mut *state;
        let slot = &mut state.slots[idx];
        if value.kind() != slot.kind {
            return Err(BusError::KindMismatch {
                topic: sample.topic.clone(),
                expected: slot.kind,
                got: value.kind(),
            });
        }
        if let Some(last) = &slot.last {
            if sample.time < last.time {
                return Err(BusError::TimeRegression {
                    topic: sample.topic.clone(),
                    last: last.time,
                    time: sample.time,
                });
            }
        }

        if let Some(sink) = state.trace.as_mut() {
            if sink.error.is_none() {
                let line = wire::WireRecord::from_sample(&sample, slot.kind).to_line();
                if let Err(e) = sink.out.write_all(line.as_bytes()) {
                    sink.error = Some(e);
                }
            }
        }

        let ack = Ack { time: sample.time };
        slot.last = Some(sample);
        Ok(ack)
    }

    /// Latest sample of every subscription of `h`, with age-based quality.
    pub fn poll(&self, h: &ParticipantHandle, now: Millis, staleness_limit: Millis) -> Snapshot {
        let state = self.state.lock();
        let map = h
            .subscriptions
            .iter()
            .map(|(topic, idx)| {
                (
                    topic.clone(),
                    observe(&state.slots[*idx], now, staleness_limit),
                )
            })
            .collect();
        Snapshot(map)
    }

    /// Single-topic variant of [`Bus::poll`].
    pub fn poll_topic(
        &self,
        h: &ParticipantHandle,
        topic: &TopicPath,
        now: Millis,
        staleness_limit: Millis,
    ) -> Result<Sample, BusError> {
        let idx = h
            .subscriptions
            .iter()
            .find(|(t, _)| t == topic)
            .map(|(_, i)| *i)
            .ok_or_else(|| BusError::NotSubscribed {
                participant: h.name.to_string(),
                topic: topic.clone(),
            })?;
        let state = self.state.lock();
        Ok(observe(&state.slots[idx], now, staleness_limit))
    }

    /// Raw cache read, bypassing subscriptions. Used by recorders and tests.
    pub fn snapshot(&self, topic: &TopicPath) -> Option<Sample> {
        let state = self.state.lock();
        state
            .index
            .get(topic)
            .and_then(|&i| state.slots[i].last.clone())
    }
}

fn observe(slot: &TopicSlot, now: Millis, staleness_limit: Millis) -> Sample {
    match &slot.last {
        Some(sample) => {
            let mut s = sample.clone();
            if now.saturating_sub(s.time) > staleness_limit {
                s.quality = s.quality.max(Quality::Stale);
            }
            s
        }
        None => Sample {
            topic: slot.path.clone(),
            time: 0,
            value: None,
            quality: Quality::Invalid,
            source: Arc::from(""),
        },
    }
}
