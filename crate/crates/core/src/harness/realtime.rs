//! Wall-clock runner: every node is a TCP client of a real broker and the
//! tick loop is paced by `realtime.tick_ms`. Messages are consumed by one
//! loop in the order they are polled; the trace records that order.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ward_mqtt::{BrokerServer, Client, ServerConfig};

use super::config::SimConfig;
use super::world::{subscriptions, Outgoing, RunError, Transport, Ward, CLIENTS};
use crate::num::Scalar;
use crate::scenario::{Keyframe, PatientAction, ScenarioScript, Trial, TrialKind};
use crate::thermal::{BodyState, Posture};
use crate::trace::Trace;

/// How long the bus waits for further traffic before a stage is settled.
const QUIET: Duration = Duration::from_millis(1);

pub struct TcpBus {
    addr: SocketAddr,
    clients: BTreeMap<&'static str, Client>,
    sent: usize,
}

impl TcpBus {
    pub fn new(addr: SocketAddr) -> Self {
        TcpBus { addr, clients: BTreeMap::new(), sent: 0 }
    }
}

impl<T: Scalar> Transport<T> for TcpBus {
    fn reset(&mut self, ward: &Ward<T>) -> Result<(), RunError> {
        for (_, c) in std::mem::take(&mut self.clients) {
            let _ = c.disconnect();
        }
        for id in CLIENTS {
            self.clients.insert(id, Client::connect(self.addr, id)?);
        }
        for (id, filters) in subscriptions(ward.bed()) {
            let f: Vec<(&str, _)> = filters.iter().map(|(f, q)| (f.as_str(), *q)).collect();
            self.clients[id].subscribe(&f)?;
        }
        Ok(())
    }

    fn disconnect(&mut self, client: &str) -> Result<(), RunError> {
        if let Some(c) = self.clients.remove(client) {
            c.disconnect()?;
        }
        Ok(())
    }

    fn send(&mut self, ward: &mut Ward<T>, out: Outgoing, tick: u64) -> Result<(), RunError> {
        let Some(c) = self.clients.get(out.from) else { return Ok(()) };
        ward.record_publish(&out, tick);
        c.publish(&out.topic, out.payload, out.qos)?;
        self.sent += 1;
        Ok(())
    }

    fn settle(&mut self, ward: &mut Ward<T>, tick: u64) -> Result<(), RunError> {
        // nothing sent since the last settle: one pass picks up stragglers
        let mut quiet = if std::mem::take(&mut self.sent) > 0 { QUIET } else { Duration::ZERO };
        let mut last = Instant::now();
        loop {
            let mut got = vec![];
            for (id, c) in &self.clients {
                while let Some(p) = c.try_recv() {
                    got.push((*id, p));
                }
            }
            if got.is_empty() {
                if last.elapsed() >= quiet {
                    break;
                }
                std::thread::sleep(Duration::from_micros(100));
                continue;
            }
            for (id, p) in got {
                if let Some(replies) = ward.deliver(id, &p, tick)? {
                    for o in replies {
                        <Self as Transport<T>>::send(self, ward, o, tick)?;
                    }
                }
            }
            self.sent = 0;
            last = Instant::now();
            quiet = QUIET;
        }
        Ok(())
    }

    /// The TCP broker retransmits on its own clock.
    fn retry(&mut self, _ward: &mut Ward<T>, _tick: u64) -> Result<(), RunError> {
        Ok(())
    }

    fn pending(&self) -> usize {
        0
    }
}

fn pace(started: Instant, tick: u64, tick_ms: u64) {
    let due = started + Duration::from_millis((tick + 1) * tick_ms);
    if let Some(wait) = due.checked_duration_since(Instant::now()) {
        std::thread::sleep(wait);
    }
}

/// Runs a script over loopback TCP in wall-clock time.
pub fn run_realtime<T: Scalar>(script: &ScenarioScript<T>, cfg: &SimConfig<T>) -> Result<Trace, RunError> {
    cfg.validate()?;
    script.validate(&cfg.render.geometry)?;
    let server = BrokerServer::bind(
        "127.0.0.1:0",
        ServerConfig { broker: cfg.broker.broker_config(), codec: cfg.broker.codec() },
    )?;
    let mut ward = Ward::for_script(cfg, script, "realtime");
    let mut bus = TcpBus::new(server.local_addr());
    let started = Instant::now();
    let mut tick = 0;
    for (index, trial) in script.trials.iter().enumerate() {
        ward.begin_trial(index, trial.clone(), tick, false);
        Transport::<T>::reset(&mut bus, &ward)?;
        loop {
            ward.tick(&mut bus, tick)?;
            let done = ward.end_check(tick, 0)?;
            pace(started, tick, cfg.realtime.tick_ms);
            tick += 1;
            if done {
                break;
            }
        }
    }
    for (_, c) in std::mem::take(&mut bus.clients) {
        let _ = c.disconnect();
    }
    server.shutdown();
    Ok(ward.trace)
}

/// Input to a live run.
#[derive(Debug, Clone, PartialEq)]
pub enum LiveInput {
    /// Switch the body to the genuine-exit motion.
    BedExit,
    /// Switch the body to a trick approach that ends back in bed.
    Trick,
    Action(PatientAction),
}

fn kf<T: Scalar>(tick: u64, x: f64, y: f64, posture: Posture) -> Keyframe<T> {
    Keyframe { tick, body: BodyState::new(T::of(x), T::of(y), posture) }
}

/// Body motion for a live input, with ticks relative to now.
pub fn live_motion<T: Scalar>(input: &LiveInput) -> Vec<Keyframe<T>> {
    match input {
        LiveInput::BedExit => vec![
            kf(0, 1.0, 0.45, Posture::Lying),
            kf(14, 1.0, 0.5, Posture::SittingUp),
            kf(22, 1.0, 0.85, Posture::LegsOverEdge),
            kf(27, 1.0, 1.0, Posture::Standing),
            kf(38, 1.0, 1.25, Posture::OutOfBed),
        ],
        LiveInput::Trick => vec![
            kf(0, 1.0, 0.45, Posture::Lying),
            kf(14, 1.0, 0.5, Posture::SittingUp),
            kf(40, 1.0, 0.75, Posture::SittingUp),
            kf(54, 1.0, 0.75, Posture::SittingUp),
            kf(70, 1.0, 0.5, Posture::SittingUp),
            kf(84, 1.0, 0.45, Posture::Lying),
        ],
        LiveInput::Action(_) => vec![],
    }
}

/// Open-ended live session against a running broker: the patient starts
/// lying in bed and every input arrives through `inputs`. Runs until
/// `stop` is set and returns the trace.
pub fn run_live<T: Scalar>(
    cfg: &SimConfig<T>,
    addr: SocketAddr,
    seed: u64,
    inputs: Receiver<LiveInput>,
    stop: Arc<AtomicBool>,
) -> Result<Trace, RunError> {
    cfg.validate()?;
    let script = ScenarioScript::new(seed, vec![]);
    let mut ward = Ward::for_script(cfg, &script, "realtime");
    let trial = Trial::new("live", TrialKind::FetchInteraction, vec![kf(0, 1.0, 0.45, Posture::Lying)]);
    ward.begin_trial(0, trial, 0, true);
    let mut bus = TcpBus::new(addr);
    Transport::<T>::reset(&mut bus, &ward)?;
    let started = Instant::now();
    let mut tick = 0;
    while !stop.load(Ordering::Relaxed) {
        let mut actions = vec![];
        while let Ok(input) = inputs.try_recv() {
            match &input {
                LiveInput::Action(a) => actions.push(ward.live_action(a)),
                motion => ward.inject_body(tick, live_motion(motion)),
            }
        }
        ward.stage(&mut bus, actions, tick)?;
        ward.tick(&mut bus, tick)?;
        pace(started, tick, cfg.realtime.tick_ms);
        tick += 1;
    }
    for (_, c) in std::mem::take(&mut bus.clients) {
        let _ = c.disconnect();
    }
    Ok(ward.trace)
}
