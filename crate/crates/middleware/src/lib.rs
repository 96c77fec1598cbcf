//! The service between the gateway and its clients: it filters and stores
//! readings, answers queries, relays appliance commands and runs automation
//! rules. Motes are known to it only by their virtual IPv4 addresses.

mod api;
pub mod filter;
pub mod rules;
pub mod store;

use std::future::Future;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use futures::future::BoxFuture;
use meshgate_core::addrmap::AddressMapConfig;
use meshgate_core::config::Config;
use meshgate_core::gateway::{GatewayStatus, StatusSnapshot};
use meshgate_core::reading::SensorReading;
use thiserror::Error;
use tokio::sync::broadcast;

pub use api::router;
pub use filter::{Filter, Rejection};
pub use rules::{Firing, RuleEngine};
pub use store::{Aggregate, Inserted, ReadingStore};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// A clock moved by its owner, e.g. a simulation.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(ms: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(ms)))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandAck {
    pub ack: u8,
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
}

/// Delivers `[appliance_id, value]` to the command port of a mote's virtual
/// IPv4 address and waits for its one-byte reply.
pub trait CommandTransport: Send + Sync {
    fn send(&self, mote: Ipv4Addr, appliance_id: u8, value: u8) -> BoxFuture<'static, Result<CommandAck, CommandError>>;
}

pub trait GatewayStatusSource: Send + Sync {
    fn status(&self) -> Option<StatusSnapshot>;
}

impl GatewayStatusSource for GatewayStatus {
    fn status(&self) -> Option<StatusSnapshot> {
        Some(self.snapshot())
    }
}

/// No gateway attached.
pub struct NoGateway;

impl GatewayStatusSource for NoGateway {
    fn status(&self) -> Option<StatusSnapshot> {
        None
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<ReadingStore>>,
    pub filter: Filter,
    pub clock: Arc<dyn Clock>,
    pub commands: Arc<dyn CommandTransport>,
    pub gateway: Arc<dyn GatewayStatusSource>,
    pub addrmap: AddressMapConfig,
    pub link_stale_ms: u64,
    pub retention_s: u64,
    pub events: broadcast::Sender<SensorReading>,
}

impl AppState {
    pub fn new(
        cfg: &Config,
        store: ReadingStore,
        clock: Arc<dyn Clock>,
        commands: Arc<dyn CommandTransport>,
        gateway: Arc<dyn GatewayStatusSource>,
    ) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            filter: Filter::from_config(&cfg.middleware),
            clock,
            commands,
            gateway,
            addrmap: cfg.addrmap,
            link_stale_ms: cfg.middleware.link_stale_ms,
            retention_s: cfg.middleware.retention_s,
            events: broadcast::channel(1024).0,
        }
    }
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// One evaluation cycle: prune past retention, evaluate rules, and send an
/// off command per firing.
pub async fn rule_cycle(state: &AppState, engine: &Mutex<RuleEngine>) -> Vec<(Firing, Result<CommandAck, CommandError>)> {
    let firings = {
        let cutoff = state.clock.now_ms().saturating_sub(state.retention_s * 1000);
        let mut store = state.store.write().expect("store lock poisoned");
        if let Err(e) = store.prune(cutoff) {
            tracing::warn!("retention pruning failed: {e}");
        }
        engine.lock().expect("rule engine poisoned").evaluate(&store)
    };
    let mut out = Vec::new();
    for f in firings {
        let target = state.addrmap.mote_virtual4(f.mote_id);
        let result = state.commands.send(target, f.appliance_id, 0).await;
        match &result {
            Ok(a) if a.ack == meshgate_core::mote::ACK => {
                tracing::info!(mote = f.mote_id, appliance = f.appliance_id, "rule switched appliance off")
            }
            other => {
                tracing::warn!(mote = f.mote_id, appliance = f.appliance_id, "rule command failed: {other:?}");
                engine.lock().expect("rule engine poisoned").failed(f.rule);
            }
        }
        out.push((f, result));
    }
    out
}

/// Runs [`rule_cycle`] every `interval` until the task is aborted.
pub fn spawn_rules(state: AppState, engine: RuleEngine, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let engine = Mutex::new(engine);
        let mut tick = tokio::time::interval(interval);
        loop {
            tick.tick().await;
            rule_cycle(&state, &engine).await;
        }
    })
}
