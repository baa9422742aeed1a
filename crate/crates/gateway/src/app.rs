//! Shared service state: the store, the domain registry, the orchestrator
//! and the token registry.

use std::collections::HashMap;
use std::sync::Arc;

use provbase::config::Config;
use provbase::kernel::{ActorRef, Event, Kernel, KernelOptions};
use provbase::model::Registry;
use provbase::orchestrator::{executor_from_config, Executor, Orchestrator, OrchestratorSettings};
use tokio::sync::broadcast;

use crate::error::{GatewayError, Result};

/// Actor used when the configuration lists no users.
pub const LOCAL_USER: &str = "local";

const EVENT_BUFFER: usize = 4096;

pub struct App {
    pub config: Config,
    pub kernel: Arc<Kernel>,
    pub registry: Registry,
    pub orchestrator: Orchestrator,
    by_token: HashMap<String, ActorRef>,
    by_id: HashMap<String, ActorRef>,
    events: broadcast::Sender<Event>,
}

impl App {
    /// Opens the configured store, replaying its log, with the configured executor.
    pub fn open(config: Config) -> Result<Arc<App>> {
        let mut opts = KernelOptions {
            fsync: config.store.fsync,
            ..Default::default()
        };
        if let Some(path) = &config.store.log_path {
            opts = opts.log_path(path);
        }
        let kernel = Arc::new(opts.open()?);
        let executor = executor_from_config(&config.exec, kernel.clock().clone());
        Ok(Self::new(config, kernel, executor))
    }

    pub fn new(config: Config, kernel: Arc<Kernel>, executor: Arc<dyn Executor>) -> Arc<App> {
        let mut users: Vec<(String, ActorRef)> = config
            .auth
            .users
            .iter()
            .map(|u| {
                let name = if u.name.is_empty() { &u.id } else { &u.name };
                (u.token.clone(), ActorRef::new(&u.id, name))
            })
            .collect();
        if users.is_empty() {
            users.push((LOCAL_USER.into(), ActorRef::new(LOCAL_USER, "Local user")));
        }
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let tx = events.clone();
        kernel.subscribe(move |e| {
            let _ = tx.send(e.clone());
        });
        let orchestrator = Orchestrator::new(
            kernel.clone(),
            executor,
            OrchestratorSettings::from(&config),
        );
        Arc::new(App {
            registry: Registry::new(kernel.clone()),
            by_id: users
                .iter()
                .map(|(_, a)| (a.id.as_str().to_owned(), a.clone()))
                .collect(),
            by_token: users.into_iter().collect(),
            config,
            kernel,
            orchestrator,
            events,
        })
    }

    pub fn authenticate(&self, token: &str) -> Option<&ActorRef> {
        self.by_token.get(token)
    }

    pub fn actor(&self, id: &str) -> Result<ActorRef> {
        self.by_id
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownActor(id.to_owned()))
    }

    /// Token of a configured user, for in-process clients.
    pub fn token_of(&self, id: &str) -> Option<&str> {
        self.by_token
            .iter()
            .find(|(_, a)| a.id.as_str() == id)
            .map(|(t, _)| t.as_str())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    /// Flushes the log.
    pub fn shutdown(&self) -> Result<()> {
        Ok(self.kernel.sync()?)
    }
}
