//! A simulated mesh paced against the wall clock, so the middleware and its
//! clients can talk to it while it runs.

use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures::future::BoxFuture;
use meshgate_core::addrmap::AddressMapConfig;
use meshgate_core::gateway::StatusSnapshot;
use meshgate_core::sim::{CommandOutcome, World};
use meshgate_core::SimDuration;
use meshgate_middleware::{CommandAck, CommandError, CommandTransport, GatewayStatusSource, ManualClock};
use tokio::sync::oneshot;

struct Request {
    mote_id: u16,
    appliance_id: u8,
    value: u8,
    reply: oneshot::Sender<Result<CommandAck, CommandError>>,
}

/// Latest gateway status, refreshed by the simulation thread.
#[derive(Clone, Default)]
pub struct SharedStatus(Arc<Mutex<Option<StatusSnapshot>>>);

impl GatewayStatusSource for SharedStatus {
    fn status(&self) -> Option<StatusSnapshot> {
        self.0.lock().expect("status poisoned").clone()
    }
}

/// Sends commands into the running simulation through its external client.
#[derive(Clone)]
pub struct SimCommands {
    tx: mpsc::Sender<Request>,
    addrmap: AddressMapConfig,
}

impl CommandTransport for SimCommands {
    fn send(&self, mote: Ipv4Addr, appliance_id: u8, value: u8) -> BoxFuture<'static, Result<CommandAck, CommandError>> {
        let id = self.addrmap.virtual4_to_mote6(mote).and_then(|a| self.addrmap.mote_id(a));
        let (reply, rx) = oneshot::channel();
        let sent = id
            .map_err(|e| CommandError::Transport(e.to_string()))
            .and_then(|mote_id| {
                self.tx
                    .send(Request { mote_id, appliance_id, value, reply })
                    .map_err(|_| CommandError::Transport("simulation stopped".into()))
            });
        Box::pin(async move {
            sent?;
            rx.await.map_err(|_| CommandError::Transport("simulation stopped".into()))?
        })
    }
}

pub struct LiveSim {
    tx: mpsc::Sender<Request>,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<World>,
    addrmap: AddressMapConfig,
}

impl LiveSim {
    /// Runs `world` at `speed` simulated seconds per wall second, keeping
    /// `clock` at the simulated wall time and `status` current.
    pub fn spawn(mut world: World, speed: f64, clock: ManualClock, status: SharedStatus) -> LiveSim {
        let (tx, rx) = mpsc::channel::<Request>();
        let stop = Arc::new(AtomicBool::new(false));
        let addrmap = world.config().addrmap;
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            let epoch = world.config().epoch_ms;
            let origin = world.now();
            let started = Instant::now();
            let mut waiting = std::collections::BTreeMap::new();
            while !flag.load(Ordering::SeqCst) {
                while let Ok(r) = rx.try_recv() {
                    let id = world.command(r.mote_id, r.appliance_id, r.value);
                    waiting.insert(id, r.reply);
                }
                let elapsed = started.elapsed().as_secs_f64() * speed;
                let target = origin + SimDuration((elapsed * 1e6) as u64);
                world.run_until(target.min(world.end_time()));
                for done in world.take_command_results() {
                    let Some(reply) = waiting.remove(&done.id) else { continue };
                    let rtt_ms = (done.completed - done.issued).0 as f64 / 1000.0;
                    let _ = reply.send(match done.outcome {
                        CommandOutcome::Ack(ack) => Ok(CommandAck { ack, rtt_ms }),
                        CommandOutcome::Timeout => Err(CommandError::Timeout),
                        CommandOutcome::Reset => Err(CommandError::Transport("connection reset".into())),
                    });
                }
                clock.set(epoch + world.now().0 / 1000);
                *status.0.lock().expect("status poisoned") = Some(world.gateway().status().snapshot());
                std::thread::sleep(Duration::from_millis(2));
            }
            world.flush_trace();
            world
        });
        LiveSim { tx, stop, thread, addrmap }
    }

    pub fn commands(&self) -> SimCommands {
        SimCommands { tx: self.tx.clone(), addrmap: self.addrmap }
    }

    /// Stops the simulation and hands back its final state.
    pub fn stop(self) -> World {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.join().expect("simulation thread panicked")
    }
}

