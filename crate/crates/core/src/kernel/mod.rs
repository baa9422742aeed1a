//! Append-only, description-driven item store.
//!
//! Every domain object is an item and every change to an item is an [`Event`]
//! appended to a single log. The in-memory [`StoreState`] is a fold of that
//! log and can always be rebuilt with [`Kernel::replay`].
//!
//! Writes are serialized: a [`Txn`] holds the store lock, assigns contiguous
//! seq numbers and flushes its records before the lock is released, so
//! readers only ever observe flushed state.

mod log;
mod state;
mod types;

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

pub use self::log::{decode as decode_record, encode as encode_record, read_all as read_log};
pub use self::state::{StoreState, PROP_PARENT, PROP_REFS, PROP_TYPE};
pub use self::types::*;
use crate::error::{Error, Result};

type Listener = Box<dyn Fn(&Event) + Send + Sync>;

enum LogSink {
    File {
        path: PathBuf,
        writer: BufWriter<File>,
        bytes: u64,
        fsync: bool,
    },
    Memory(Vec<u8>),
}

impl LogSink {
    fn append(&mut self, lines: &[String]) -> Result<()> {
        match self {
            LogSink::File {
                writer,
                bytes,
                fsync,
                ..
            } => {
                for line in lines {
                    writer.write_all(line.as_bytes())?;
                    *bytes += line.len() as u64;
                }
                writer.flush()?;
                if *fsync {
                    writer.get_ref().sync_data()?;
                }
            }
            LogSink::Memory(buf) => {
                for line in lines {
                    buf.extend_from_slice(line.as_bytes());
                }
            }
        }
        Ok(())
    }

    fn len(&self) -> u64 {
        match self {
            LogSink::File { bytes, .. } => *bytes,
            LogSink::Memory(buf) => buf.len() as u64,
        }
    }
}

struct Inner {
    state: StoreState,
    sink: LogSink,
}

/// Options for constructing a [`Kernel`].
pub struct KernelOptions {
    pub log_path: Option<PathBuf>,
    pub fsync: bool,
    pub ids: IdSource,
    pub clock: Arc<dyn Clock>,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            log_path: None,
            fsync: false,
            ids: IdSource::Random,
            clock: Arc::new(SystemClock),
        }
    }
}

impl KernelOptions {
    pub fn log_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }

    pub fn seeded_ids(mut self, seed: u64) -> Self {
        self.ids = IdSource::seeded(seed);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Opens the store, replaying any existing log at `log_path`.
    pub fn open(self) -> Result<Kernel> {
        let (state, sink) = match &self.log_path {
            None => (StoreState::default(), LogSink::Memory(Vec::new())),
            Some(path) => {
                let state = if path.exists() {
                    fold(read_log(BufReader::new(File::open(path)?))?)
                } else {
                    StoreState::default()
                };
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                let bytes = file.metadata()?.len();
                let sink = LogSink::File {
                    path: path.clone(),
                    writer: BufWriter::new(file),
                    bytes,
                    fsync: self.fsync,
                };
                (state, sink)
            }
        };
        Ok(Kernel {
            inner: RwLock::new(Inner { state, sink }),
            ids: Mutex::new(self.ids),
            clock: self.clock,
            listeners: RwLock::new(Vec::new()),
        })
    }
}

fn fold(events: Vec<Event>) -> StoreState {
    let mut state = StoreState::default();
    for e in events {
        state.apply(e);
    }
    state
}

pub struct Kernel {
    inner: RwLock<Inner>,
    ids: Mutex<IdSource>,
    clock: Arc<dyn Clock>,
    listeners: RwLock<Vec<Listener>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("Kernel")
            .field("items", &inner.state.item_count())
            .field("last_seq", &inner.state.last_seq())
            .finish()
    }
}

impl Kernel {
    pub fn in_memory() -> Kernel {
        KernelOptions::default()
            .open()
            .expect("in-memory store cannot fail")
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Kernel> {
        KernelOptions::default()
            .log_path(path.as_ref().to_path_buf())
            .open()
    }

    /// Rebuilds an in-memory store from a log stream written by this module.
    pub fn replay(mut log: impl std::io::Read) -> Result<Kernel> {
        let mut bytes = Vec::new();
        log.read_to_end(&mut bytes)?;
        let state = fold(read_log(bytes.as_slice())?);
        Ok(Kernel {
            inner: RwLock::new(Inner {
                state,
                sink: LogSink::Memory(bytes),
            }),
            ids: Mutex::new(IdSource::Random),
            clock: Arc::new(SystemClock),
            listeners: RwLock::new(Vec::new()),
        })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn fresh_uuid(&self) -> uuid::Uuid {
        self.ids.lock().next_uuid()
    }

    /// Registers a callback invoked with every committed event, after the
    /// write lock has been released.
    pub fn subscribe(&self, f: impl Fn(&Event) + Send + Sync + 'static) {
        self.listeners.write().push(Box::new(f));
    }

    /// Runs `f` as one write transaction. Events appended by `f` receive
    /// contiguous seq numbers and are flushed together; they stay in the log
    /// even when `f` returns an error after appending.
    pub fn transact<T>(&self, f: impl FnOnce(&mut Txn<'_>) -> Result<T>) -> Result<T> {
        let mut guard = self.inner.write();
        let mut txn = Txn {
            state: &mut guard.state,
            kernel: self,
            pending: Vec::new(),
        };
        let out = f(&mut txn);
        let pending = std::mem::take(&mut txn.pending);
        if !pending.is_empty() {
            let lines: Vec<String> = pending.iter().map(encode_record).collect();
            guard.sink.append(&lines)?;
        }
        drop(guard);
        if !pending.is_empty() {
            let listeners = self.listeners.read();
            for e in &pending {
                for l in listeners.iter() {
                    l(e);
                }
            }
        }
        out
    }

    /// Runs `f` against a consistent snapshot of the flushed state.
    pub fn read<T>(&self, f: impl FnOnce(&StoreState) -> T) -> T {
        f(&self.inner.read().state)
    }

    pub fn create_item(
        &self,
        kind: ItemKind,
        described_by: Option<ItemId>,
        props: Props,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<ItemId> {
        let new = NewItem {
            kind,
            described_by,
            props,
            content: None,
            state: None,
        };
        self.transact(|tx| tx.create_item(new, actor, reason))
    }

    pub fn record_event(
        &self,
        item: ItemId,
        payload: Payload,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<Seq> {
        self.transact(|tx| tx.record_event(item, payload, actor, reason))
    }

    /// Current snapshot, or the fold of all events with seq <= `as_of`.
    pub fn get_state(&self, item: ItemId, as_of: Option<Seq>) -> Result<ItemState> {
        self.read(|s| match as_of {
            None => s.item(&item).cloned().ok_or(Error::UnknownItem(item)),
            Some(seq) => s.state_as_of(&item, seq),
        })
    }

    pub fn history(&self, item: ItemId) -> Result<Vec<Event>> {
        self.read(|s| {
            let events: Vec<Event> = s.item_events(&item).cloned().collect();
            if events.is_empty() {
                Err(Error::UnknownItem(item))
            } else {
                Ok(events)
            }
        })
    }

    pub fn last_seq(&self) -> Seq {
        self.read(|s| s.last_seq())
    }

    pub fn item_count(&self) -> usize {
        self.read(|s| s.item_count())
    }

    pub fn digest(&self) -> String {
        self.read(|s| s.digest())
    }

    /// Byte length of the persisted log.
    pub fn log_len(&self) -> u64 {
        self.inner.read().sink.len()
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        match &self.inner.read().sink {
            LogSink::File { path, .. } => Some(path.clone()),
            LogSink::Memory(_) => None,
        }
    }

    /// The full log as written, for stores of either kind.
    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        match &self.inner.read().sink {
            LogSink::File { path, .. } => Ok(std::fs::read(path)?),
            LogSink::Memory(buf) => Ok(buf.clone()),
        }
    }

    /// Forces the log to stable storage.
    pub fn sync(&self) -> Result<()> {
        let mut inner = self.inner.write();
        if let LogSink::File { writer, .. } = &mut inner.sink {
            writer.flush()?;
            writer.get_ref().sync_all()?;
        }
        Ok(())
    }
}

/// A write transaction; see [`Kernel::transact`].
pub struct Txn<'a> {
    state: &'a mut StoreState,
    kernel: &'a Kernel,
    pending: Vec<Event>,
}

impl Txn<'_> {
    pub fn state(&self) -> &StoreState {
        self.state
    }

    pub fn now(&self) -> chrono::DateTime<chrono::Utc> {
        self.kernel.clock.now()
    }

    pub fn fresh_uuid(&self) -> uuid::Uuid {
        self.kernel.fresh_uuid()
    }

    pub fn create_item(&mut self, new: NewItem, actor: &ActorRef, reason: &str) -> Result<ItemId> {
        let id = loop {
            let id = ItemId::from_uuid(self.kernel.fresh_uuid());
            if !self.state.contains(&id) {
                break id;
            }
        };
        let payload = Payload::Created {
            kind: new.kind,
            described_by: new.described_by,
            props: new.props,
            content: new.content,
            state: new.state,
        };
        self.append(id, payload, actor, reason)?;
        Ok(id)
    }

    pub fn record_event(
        &mut self,
        item: ItemId,
        payload: Payload,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<Seq> {
        if matches!(payload, Payload::Created { .. }) {
            return Err(Error::IllegalTransition(
                "Created events are only written by create_item".into(),
            ));
        }
        self.append(item, payload, actor, reason)
    }

    fn append(
        &mut self,
        item: ItemId,
        payload: Payload,
        actor: &ActorRef,
        reason: &str,
    ) -> Result<Seq> {
        self.state.check(&item, &payload)?;
        let event = Event {
            seq: self.state.last_seq() + 1,
            item,
            actor: actor.id.clone(),
            at: self.kernel.clock.now(),
            reason: reason.to_owned(),
            payload,
        };
        let seq = event.seq;
        self.pending.push(event.clone());
        self.state.apply(event);
        Ok(seq)
    }
}
