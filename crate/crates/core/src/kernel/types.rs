use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Duration, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

/// Global event sequence number. The first event in a store has seq 1.
pub type Seq = u64;

/// Property map carried by every item.
pub type Props = BTreeMap<String, Value>;

/// Opaque, never-reused identifier of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(Uuid);

impl ItemId {
    pub fn from_uuid(uuid: Uuid) -> Self {
        ItemId(uuid)
    }

    pub fn as_uuid(&self) -> &Uuid {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.hyphenated().fmt(f)
    }
}

impl FromStr for ItemId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(ItemId)
    }
}

/// 1-based version of an item's definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionNumber(u32);

impl VersionNumber {
    pub const FIRST: VersionNumber = VersionNumber(1);

    /// Returns `None` for zero.
    pub fn new(v: u32) -> Option<Self> {
        (v > 0).then_some(VersionNumber(v))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn next(self) -> Self {
        VersionNumber(self.0 + 1)
    }
}

impl fmt::Display for VersionNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(String);

impl ActorId {
    pub fn new(id: impl Into<String>) -> Self {
        ActorId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A user acting on the store. Only the id is persisted with events.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActorRef {
    pub id: ActorId,
    pub display_name: String,
}

impl ActorRef {
    /// Panics on an empty id; use [`ActorRef::try_new`] for untrusted input.
    pub fn new(id: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self::try_new(id, display_name).expect("actor id must not be empty")
    }

    pub fn try_new(id: impl Into<String>, display_name: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return None;
        }
        Some(ActorRef {
            id: ActorId(id),
            display_name: display_name.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemKind {
    Description,
    Instance,
}

/// Typed change record carried by every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Payload {
    Created {
        kind: ItemKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        described_by: Option<ItemId>,
        props: Props,
        /// Version-1 content; `null` when the item carries no versioned definition.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<String>,
    },
    PropertySet {
        key: String,
        value: Value,
    },
    VersionAdded {
        version: VersionNumber,
        content: Value,
    },
    OutcomeAttached {
        outcome: Value,
    },
    Annotated {
        text: String,
    },
    PermissionGranted {
        grantee: ActorId,
    },
    StateTransition {
        #[serde(default)]
        from: Option<String>,
        to: String,
    },
}

impl Payload {
    pub fn name(&self) -> &'static str {
        match self {
            Payload::Created { .. } => "Created",
            Payload::PropertySet { .. } => "PropertySet",
            Payload::VersionAdded { .. } => "VersionAdded",
            Payload::OutcomeAttached { .. } => "OutcomeAttached",
            Payload::Annotated { .. } => "Annotated",
            Payload::PermissionGranted { .. } => "PermissionGranted",
            Payload::StateTransition { .. } => "StateTransition",
        }
    }
}

/// One immutable entry of the store log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: Seq,
    pub item: ItemId,
    pub actor: ActorId,
    pub at: DateTime<Utc>,
    pub reason: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub seq: Seq,
    pub actor: ActorId,
    pub at: DateTime<Utc>,
    pub text: String,
}

/// Item creation request.
#[derive(Debug, Clone)]
pub struct NewItem {
    pub kind: ItemKind,
    pub described_by: Option<ItemId>,
    pub props: Props,
    pub content: Option<Value>,
    pub state: Option<String>,
}

impl NewItem {
    pub fn description(props: Props) -> Self {
        NewItem {
            kind: ItemKind::Description,
            described_by: None,
            props,
            content: None,
            state: None,
        }
    }

    pub fn instance(described_by: ItemId, props: Props) -> Self {
        NewItem {
            kind: ItemKind::Instance,
            described_by: Some(described_by),
            props,
            content: None,
            state: None,
        }
    }

    pub fn with_content(mut self, content: Value) -> Self {
        self.content = Some(content);
        self
    }

    pub fn with_state(mut self, state: impl Into<String>) -> Self {
        self.state = Some(state.into());
        self
    }
}

/// Snapshot of an item, produced by folding its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemState {
    pub id: ItemId,
    pub kind: ItemKind,
    pub described_by: Option<ItemId>,
    pub current_version: VersionNumber,
    pub created_at: DateTime<Utc>,
    pub created_by: ActorId,
    pub created_seq: Seq,
    pub last_seq: Seq,
    pub props: Props,
    /// `versions[v - 1]` is the content written for version `v`.
    pub versions: Vec<Value>,
    pub state: Option<String>,
    pub annotations: Vec<Annotation>,
    pub grants: BTreeSet<ActorId>,
    pub outcomes: Vec<Value>,
    pub event_count: usize,
}

impl ItemState {
    pub fn prop(&self, key: &str) -> Option<&Value> {
        self.props.get(key)
    }

    pub fn prop_str(&self, key: &str) -> Option<&str> {
        self.props.get(key).and_then(Value::as_str)
    }

    pub fn version(&self, v: VersionNumber) -> Option<&Value> {
        self.versions.get(v.get() as usize - 1)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock advancing by a fixed step on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    start: DateTime<Utc>,
    step: Duration,
    ticks: AtomicU64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        SteppingClock {
            start,
            step,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + self.step * n as i32
    }
}

/// Source of fresh 128-bit identifiers.
#[derive(Debug)]
pub enum IdSource {
    Random,
    Seeded(Box<ChaCha8Rng>),
}

impl IdSource {
    pub fn seeded(seed: u64) -> Self {
        IdSource::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn next_uuid(&mut self) -> Uuid {
        match self {
            IdSource::Random => Uuid::new_v4(),
            IdSource::Seeded(rng) => {
                let mut bytes = [0u8; 16];
                rng.fill_bytes(&mut bytes);
                uuid::Builder::from_random_bytes(bytes).into_uuid()
            }
        }
    }
}
