//! Wall-clock driver: one OS thread owns the [`TeleopEngine`] and ticks it
//! at its `dt`. Network tasks talk to it through a latest-value slot for the
//! operator input and a mailbox drained between ticks; output goes to a
//! broadcast channel that never blocks the loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use tokio::sync::{broadcast, mpsc as tmpsc, watch};

use passafe_core::protocol::{ClientCommand, ServerEvent, ServerMessage};
use passafe_core::scenario::Scenario;

use crate::engine::{LatestValue, TeleopEngine};

/// Beyond this lag the loop stops catching up and re-anchors its schedule.
const MAX_LAG: Duration = Duration::from_millis(250);

pub struct Envelope {
    pub cmd: ClientCommand,
    /// Where to report a rejected command.
    pub reply: Option<tmpsc::UnboundedSender<ServerEvent>>,
}

/// Cloneable endpoints used by connections.
#[derive(Clone)]
pub struct ControlLink {
    pub human: Arc<LatestValue<[f64; 2]>>,
    pub commands: mpsc::Sender<Envelope>,
    pub output: broadcast::Sender<Arc<ServerMessage>>,
    pub scenario: watch::Receiver<Scenario>,
}

pub struct ControlLoop {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    link: ControlLink,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl ControlLoop {
    pub fn spawn(mut engine: TeleopEngine, capacity: usize) -> std::io::Result<Self> {
        let (output, _) = broadcast::channel(capacity.max(1));
        let (scenario_tx, scenario) = watch::channel(engine.scenario().clone());
        let (commands, inbox) = mpsc::channel::<Envelope>();
        let human = Arc::new(LatestValue::new());
        let stop = Arc::new(AtomicBool::new(false));
        let link = ControlLink {
            human: human.clone(),
            commands,
            output: output.clone(),
            scenario,
        };
        let period = Duration::from_secs_f64(engine.config().dt);
        let flag = stop.clone();
        let thread = std::thread::Builder::new().name("passafe-control".into()).spawn(move || {
            let mut anchor = Instant::now();
            let mut due = 0u32;
            while !flag.load(Ordering::Relaxed) {
                if let Some(u_h) = human.take() {
                    // Validated by the connection.
                    let _ = engine.apply(ClientCommand::SetHumanInput { u_h });
                }
                let mut changed = false;
                while let Ok(env) = inbox.try_recv() {
                    changed = true;
                    if let Err(message) = engine.apply(env.cmd) {
                        if let Some(reply) = env.reply {
                            let _ = reply.send(ServerEvent::Error { message });
                        }
                    }
                }
                if changed {
                    scenario_tx.send_if_modified(|sc| {
                        let fresh = engine.scenario();
                        let differs = sc != fresh;
                        if differs {
                            *sc = fresh.clone();
                        }
                        differs
                    });
                }
                let report = engine.tick(now_ms());
                for ev in report.events {
                    // No receivers is fine: the loop runs without clients.
                    let _ = output.send(Arc::new(ServerMessage::Event(ev)));
                }
                if let Some(f) = report.frame {
                    let _ = output.send(Arc::new(ServerMessage::Frame(f)));
                }

                due += 1;
                let target = anchor + period * due;
                let now = Instant::now();
                if target > now {
                    std::thread::sleep(target - now);
                } else if now - target > MAX_LAG {
                    anchor = now;
                    due = 0;
                }
            }
        })?;
        Ok(Self {
            stop,
            thread: Some(thread),
            link,
        })
    }

    pub fn link(&self) -> ControlLink {
        self.link.clone()
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ControlLoop {
    fn drop(&mut self) {
        self.stop();
    }
}
