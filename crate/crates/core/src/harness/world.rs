//! Node logic of a simulated ward, independent of how messages travel:
//! thermal publisher, predictor, orchestrator, temi, arm and the scripted
//! patient. A [`Transport`] moves messages between them; [`Ward::tick`]
//! drives one tick through a fixed sequence of stages.

use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use ward_mqtt::{Publish, QoS};

use super::config::SimConfig;
use crate::agents::{ArmAgent, ArmParams, Status, TemiAgent, ARM_STATUS_TOPIC, TEMI_STATUS_TOPIC};
use crate::num::Scalar;
use crate::orchestrator::{
    capture_request, on_timeout, state_payload, step, Capture, Command, Event, OrchestrationState,
    OrchestratorConfig, Phase, Transition,
};
use crate::predictor::{BedExitPipeline, ExitLabel};
use crate::rng::{seeded_rng, RngDomain};
use crate::scenario::{AgentId, Anchor, PatientAction, ScenarioError, ScenarioScript, Trial, TrialKind};
use crate::thermal::{frame_topic, render_frame, Camera, NoiseParams, ThermalFrame};
use crate::trace::{Trace, TraceKind};

pub const THERMAL: &str = "thermal";
pub const PREDICTOR: &str = "predictor";
pub const ORCHESTRATOR: &str = "orchestrator";
pub const TEMI: &str = "temi";
pub const ARM: &str = "arm";
pub const PATIENT: &str = "patient";

pub const CLIENTS: [&str; 6] = [THERMAL, PREDICTOR, ORCHESTRATOR, TEMI, ARM, PATIENT];

pub const STATE_TOPIC: &str = "orchestrator/state";
pub const TEMI_CMD_TOPIC: &str = "robot/temi/cmd";
pub const ARM_CMD_TOPIC: &str = "robot/arm/cmd";

pub fn bedexit_topic(bed: &str) -> String {
    format!("ward/{bed}/bedexit")
}

pub fn request_topic(bed: &str) -> String {
    format!("ward/{bed}/patient/request")
}

/// Filters each node subscribes to.
pub fn subscriptions(bed: &str) -> Vec<(&'static str, Vec<(String, QoS)>)> {
    let q1 = QoS::AtLeastOnce;
    vec![
        (PREDICTOR, vec![(format!("ward/{bed}/thermal/+"), QoS::AtMostOnce)]),
        (
            ORCHESTRATOR,
            vec![
                (bedexit_topic(bed), q1),
                (TEMI_STATUS_TOPIC.to_string(), q1),
                (ARM_STATUS_TOPIC.to_string(), q1),
                (request_topic(bed), q1),
            ],
        ),
        (TEMI, vec![(TEMI_CMD_TOPIC.to_string(), q1)]),
        (ARM, vec![(ARM_CMD_TOPIC.to_string(), q1)]),
    ]
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error("mqtt: {0}")]
    Mqtt(#[from] ward_mqtt::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A message a node wants published.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub from: &'static str,
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
}

/// Moves messages between nodes. Implementations record deliveries through
/// [`Ward::deliver`].
pub trait Transport<T: Scalar> {
    /// Fresh sessions and subscriptions for every node.
    fn reset(&mut self, ward: &Ward<T>) -> Result<(), RunError>;
    fn disconnect(&mut self, client: &str) -> Result<(), RunError>;
    fn send(&mut self, ward: &mut Ward<T>, out: Outgoing, tick: u64) -> Result<(), RunError>;
    /// Delivers everything in flight, including messages published in
    /// response.
    fn settle(&mut self, ward: &mut Ward<T>, tick: u64) -> Result<(), RunError>;
    /// QoS 1 redelivery step.
    fn retry(&mut self, ward: &mut Ward<T>, tick: u64) -> Result<(), RunError>;
    fn pending(&self) -> usize;
}

fn body_json(payload: &[u8]) -> Value {
    serde_json::from_slice(payload).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(payload).into_owned()))
}

fn is_bulk(topic: &str) -> bool {
    topic.contains("/thermal/")
}

fn qos_num(q: QoS) -> u8 {
    q as u8
}

struct TrialCtx<T> {
    index: usize,
    trial: Trial<T>,
    start: u64,
    /// Ticks of the body script; `None` for an open-ended live trial.
    length: Option<u64>,
    rng: ChaCha8Rng,
    prompt_at: Option<u64>,
    delivered_at: Option<u64>,
    fired: Vec<bool>,
    initial_stock: u32,
}

pub struct Ward<T: Scalar> {
    cfg: SimConfig<T>,
    orch_cfg: OrchestratorConfig,
    seed: u64,
    bed: String,
    noise: NoiseParams<T>,
    pub trace: Trace,
    ctx: Option<TrialCtx<T>>,
    pipeline: BedExitPipeline<T>,
    label: ExitLabel,
    state: OrchestrationState,
    temi: TemiAgent<T>,
    arm: ArmAgent<T>,
    crashed: Vec<AgentId>,
}

impl<T: Scalar> Ward<T> {
    pub fn new(cfg: &SimConfig<T>, seed: u64, bed: &str, noise: NoiseParams<T>, mode: &str) -> Self {
        Ward {
            orch_cfg: cfg.orchestrator(),
            seed,
            bed: bed.to_string(),
            noise,
            trace: Trace::new(seed, mode),
            ctx: None,
            pipeline: BedExitPipeline::new(cfg.predictor, cfg.render.geometry.region),
            label: ExitLabel::NoExit,
            state: OrchestrationState::default(),
            temi: TemiAgent::seeded(cfg.waypoints.clone(), cfg.temi, seed, 0),
            arm: ArmAgent::seeded(cfg.inventory.clone(), cfg.arm, seed, 0),
            crashed: vec![],
            cfg: cfg.clone(),
        }
    }

    pub fn for_script(cfg: &SimConfig<T>, script: &ScenarioScript<T>, mode: &str) -> Self {
        Ward::new(cfg, script.seed, &script.bed, script.noise, mode)
    }

    pub fn bed(&self) -> &str {
        &self.bed
    }

    pub fn config(&self) -> &SimConfig<T> {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    fn trial_id(&self) -> Option<String> {
        self.ctx.as_ref().map(|c| c.trial.id.clone())
    }

    fn local(&self, tick: u64) -> u64 {
        self.ctx.as_ref().map_or(tick, |c| tick - c.start)
    }

    fn record(&mut self, tick: u64, source: &str, kind: TraceKind, payload: Value) -> u64 {
        let trial = self.trial_id();
        self.trace.push(tick, source, kind, trial.as_deref(), payload)
    }

    fn fetch_mode(&self) -> bool {
        self.ctx.as_ref().is_some_and(|c| c.trial.kind == TrialKind::FetchInteraction)
    }

    /// Starts a trial at absolute `tick`. Every node is reset: predictor
    /// history, orchestrator state, robot positions and the arm's stock.
    pub fn begin_trial(&mut self, index: usize, trial: Trial<T>, tick: u64, open_ended: bool) {
        let f = &trial.faults;
        let mut temi = TemiAgent::seeded(self.cfg.waypoints.clone(), self.cfg.temi, self.seed, index as u64);
        temi.set_proximity_override(f.proximity_error_m);
        let arm_params = ArmParams { failure_prob: f.arm_failure_prob.unwrap_or(self.cfg.arm.failure_prob), ..self.cfg.arm };
        self.arm = ArmAgent::seeded(self.cfg.inventory.clone(), arm_params, self.seed, index as u64);
        self.temi = temi;
        self.pipeline = BedExitPipeline::new(self.cfg.predictor, self.cfg.render.geometry.region);
        self.label = ExitLabel::NoExit;
        self.state = OrchestrationState { phase_entry_tick: tick, ..Default::default() };
        self.crashed.clear();
        let length = (!open_ended).then(|| trial.script_len());
        self.ctx = Some(TrialCtx {
            index,
            fired: vec![false; trial.patient_actions.len()],
            initial_stock: self.cfg.inventory.values().sum(),
            rng: seeded_rng(self.seed, RngDomain::Thermal, index as u64),
            trial,
            start: tick,
            length,
            prompt_at: None,
            delivered_at: None,
        });
        let ctx = self.ctx.as_ref().expect("just set");
        let payload = json!({ "index": index, "kind": ctx.trial.kind, "script_len": length });
        self.record(tick, "harness", TraceKind::TrialStart, payload);
    }

    /// Replaces the body script from the current tick on (live mode).
    /// `keyframes` ticks are relative to now.
    pub fn inject_body(&mut self, tick: u64, keyframes: Vec<crate::scenario::Keyframe<T>>) {
        let local = self.local(tick);
        if let Some(ctx) = self.ctx.as_mut() {
            let now = ctx.trial.body_at(local);
            let mut k = vec![crate::scenario::Keyframe { tick: local, body: now }];
            k.extend(keyframes.into_iter().filter(|f| f.tick > 0).map(|mut f| {
                f.tick += local;
                f
            }));
            ctx.trial.keyframes.retain(|f| f.tick < local);
            ctx.trial.keyframes.extend(k);
        }
    }

    /// Crash fault due at this tick; the agent stops and its session ends.
    pub fn crash_due(&mut self, tick: u64) -> Option<AgentId> {
        let local = self.local(tick);
        let crash = self.ctx.as_ref()?.trial.faults.crash?;
        if crash.at_tick != local || self.crashed.contains(&crash.agent) {
            return None;
        }
        self.crashed.push(crash.agent);
        self.record(tick, crash.agent.client_id(), TraceKind::AgentEvent, json!({ "event": "crash" }));
        Some(crash.agent)
    }

    pub fn link_down(&self, client: &str, tick: u64) -> bool {
        let Some(ctx) = &self.ctx else { return false };
        let local = tick - ctx.start;
        ctx.trial
            .faults
            .link_outage
            .as_ref()
            .is_some_and(|o| o.client == client && o.from_tick <= local && local < o.to_tick)
    }

    pub fn record_publish(&mut self, out: &Outgoing, tick: u64) {
        let mut p = json!({ "topic": out.topic, "qos": qos_num(out.qos) });
        if is_bulk(&out.topic) {
            p["bytes"] = out.payload.len().into();
        } else {
            p["payload"] = body_json(&out.payload);
        }
        self.record(tick, out.from, TraceKind::Publish, p);
    }

    fn delivery_payload(client: &str, p: &Publish) -> Value {
        let mut v = json!({
            "client": client,
            "topic": p.topic.as_str(),
            "qos": qos_num(p.qos),
            "packet_id": p.packet_id,
            "dup": p.dup,
        });
        if is_bulk(p.topic.as_str()) {
            v["bytes"] = p.payload.len().into();
        } else {
            v["payload"] = body_json(&p.payload);
        }
        v
    }

    pub fn record_retransmit(&mut self, client: &str, p: &Publish, tick: u64) {
        let v = json!({ "client": client, "topic": p.topic.as_str(), "packet_id": p.packet_id });
        self.record(tick, "broker", TraceKind::Retransmit, v);
    }

    pub fn record_dropped(&mut self, client: &str, p: &Publish, retries: u32, tick: u64) {
        let v = json!({ "client": client, "topic": p.topic.as_str(), "packet_id": p.packet_id, "retries": retries });
        self.record(tick, "broker", TraceKind::Qos1Dropped, v);
    }

    /// Hands a message to a node. Returns `None` when an injected outage
    /// swallowed it (the caller must then not acknowledge it), otherwise
    /// whatever the node publishes in response.
    pub fn deliver(&mut self, client: &str, p: &Publish, tick: u64) -> Result<Option<Vec<Outgoing>>, RunError> {
        let payload = Self::delivery_payload(client, p);
        if self.link_down(client, tick) {
            self.record(tick, "broker", TraceKind::DeliveryLost, payload);
            return Ok(None);
        }
        self.record(tick, "broker", TraceKind::Deliver, payload);
        let out = match client {
            PREDICTOR => self.on_frame(p, tick),
            ORCHESTRATOR => self.on_orchestrator(p, tick)?,
            TEMI if !self.is_crashed(AgentId::Temi) => self.on_temi(p, tick),
            ARM if !self.is_crashed(AgentId::Arm) => self.on_arm(p, tick),
            _ => vec![],
        };
        Ok(Some(out))
    }

    fn is_crashed(&self, agent: AgentId) -> bool {
        self.crashed.contains(&agent)
    }

    fn on_frame(&mut self, p: &Publish, tick: u64) -> Vec<Outgoing> {
        let frame = match ThermalFrame::from_json(&p.payload) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("predictor dropping bad frame: {e}");
                return vec![];
            }
        };
        let mut out = vec![];
        for o in self.pipeline.push(&frame) {
            if o.prediction.label != self.label {
                self.label = o.prediction.label;
                let v = json!({ "label": o.prediction.label, "score": o.prediction.score.to_f64_lossy(), "frame_tick": o.prediction.tick });
                self.record(tick, PREDICTOR, TraceKind::Prediction, v);
            }
            if let Some(e) = o.event {
                out.push(Outgoing { from: PREDICTOR, topic: bedexit_topic(&self.bed), payload: e.to_json(), qos: QoS::AtLeastOnce });
            }
        }
        out
    }

    fn on_orchestrator(&mut self, p: &Publish, tick: u64) -> Result<Vec<Outgoing>, RunError> {
        let topic = p.topic.as_str();
        let body = body_json(&p.payload);
        let status = body.get("status").and_then(Value::as_str).unwrap_or("");
        let field = |k: &str| body.get(k).and_then(Value::as_str).unwrap_or("").to_string();
        let event = if topic == bedexit_topic(&self.bed) {
            if !self.fetch_mode() {
                self.record(tick, ORCHESTRATOR, TraceKind::AgentEvent, json!({ "event": "alarm", "bedexit": body }));
                return Ok(vec![]);
            }
            Some(Event::BedExitPredicted { tick: body["tick"].as_u64().unwrap_or(tick) })
        } else if topic == TEMI_STATUS_TOPIC {
            match status {
                "arrived" => Some(Event::TemiArrived { waypoint: field("waypoint") }),
                "heartbeat" => Some(Event::Heartbeat),
                _ => None,
            }
        } else if topic == ARM_STATUS_TOPIC {
            match status {
                "done" => Some(Event::ArmDone { item: field("item") }),
                "failed" => Some(Event::ArmFailed { item: field("item"), reason: field("reason") }),
                "heartbeat" => Some(Event::Heartbeat),
                _ => None,
            }
        } else if topic == request_topic(&self.bed) {
            let action: PatientAction = match serde_json::from_value(body.clone()) {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("unreadable patient action: {e}");
                    return Ok(vec![]);
                }
            };
            let capture = capture_request(&self.orch_cfg, &self.state, &action, tick);
            let mut v = body;
            v["phase"] = json!(self.state.phase);
            v["outcome"] = json!(match &capture {
                Capture::Accepted(_) => "accepted",
                Capture::Reprompt(_) => "reprompt",
                Capture::OutOfPhase => "out_of_phase",
            });
            if let Capture::Accepted(Event::PatientRequest(r)) = &capture {
                v["captured_item"] = json!(r.item);
            }
            self.record(tick, ORCHESTRATOR, TraceKind::PatientAction, v);
            match capture {
                Capture::Accepted(e) => Some(e),
                Capture::Reprompt(cmd) => return Ok(vec![self.command(cmd)]),
                Capture::OutOfPhase => None,
            }
        } else {
            None
        };
        match event {
            Some(e) if self.fetch_mode() => {
                let t = step(&self.orch_cfg, &self.state, &e, tick);
                self.apply(t, tick)
            }
            _ => Ok(vec![]),
        }
    }

    fn command(&self, cmd: Command) -> Outgoing {
        Outgoing { from: ORCHESTRATOR, topic: cmd.topic().to_string(), payload: cmd.to_json(), qos: QoS::AtLeastOnce }
    }

    fn apply(&mut self, t: Transition, tick: u64) -> Result<Vec<Outgoing>, RunError> {
        let mut out = vec![];
        let mut from = self.state.phase;
        for phase in t.entered(&self.state) {
            self.record(tick, ORCHESTRATOR, TraceKind::StateTransition, json!({ "from": from, "to": phase }));
            out.push(Outgoing {
                from: ORCHESTRATOR,
                topic: STATE_TOPIC.to_string(),
                payload: state_payload(phase, &t.state, tick),
                qos: QoS::AtMostOnce,
            });
            let local = self.local(tick);
            if let Some(ctx) = self.ctx.as_mut() {
                match phase {
                    Phase::AtBedsidePrompt if ctx.prompt_at.is_none() => ctx.prompt_at = Some(local),
                    Phase::Delivered if ctx.delivered_at.is_none() => ctx.delivered_at = Some(local),
                    _ => {}
                }
            }
            from = phase;
        }
        if !t.state.is_consistent() || t.state.phase_entry_tick > tick {
            return Err(RunError::Invariant(format!("inconsistent orchestrator state {:?}", t.state)));
        }
        out.extend(t.commands.iter().cloned().map(|c| self.command(c)));
        self.state = t.state;
        Ok(out)
    }

    fn status_out(from: &'static str, topic: &str, s: Status) -> Outgoing {
        let qos = if s.kind() == "heartbeat" { QoS::AtMostOnce } else { QoS::AtLeastOnce };
        Outgoing { from, topic: topic.to_string(), payload: s.to_json(), qos }
    }

    fn on_temi(&mut self, p: &Publish, tick: u64) -> Vec<Outgoing> {
        match Command::from_json(&p.payload) {
            Ok(cmd) => self.temi.handle(cmd, tick).into_iter().map(|s| Self::status_out(TEMI, TEMI_STATUS_TOPIC, s)).collect(),
            Err(e) => {
                log::warn!("temi ignoring bad command: {e}");
                vec![]
            }
        }
    }

    fn on_arm(&mut self, p: &Publish, tick: u64) -> Vec<Outgoing> {
        match Command::from_json(&p.payload) {
            Ok(Command::ArmPickPlace { item }) => {
                self.arm.handle(&item, tick).into_iter().map(|s| Self::status_out(ARM, ARM_STATUS_TOPIC, s)).collect()
            }
            other => {
                log::warn!("arm ignoring command {other:?}");
                vec![]
            }
        }
    }

    fn thermal(&mut self, tick: u64) -> Vec<Outgoing> {
        let Some(ctx) = self.ctx.as_mut() else { return vec![] };
        let local = tick - ctx.start;
        if ctx.length.is_some_and(|n| local >= n) {
            return vec![];
        }
        let body = ctx.trial.body_at(local);
        Camera::BOTH
            .map(|cam| {
                let f = render_frame(Some(&body), cam, tick, &self.cfg.render, &self.noise, &mut ctx.rng);
                Outgoing { from: THERMAL, topic: frame_topic(&self.bed, cam), payload: f.to_json(), qos: QoS::AtMostOnce }
            })
            .to_vec()
    }

    fn agents(&mut self, tick: u64) -> Vec<Outgoing> {
        let mut out = vec![];
        let beat = self.local(tick) % self.cfg.heartbeat_interval_ticks == 0;
        if !self.is_crashed(AgentId::Temi) {
            let mut s = self.temi.advance(tick);
            if beat {
                s.push(Status::heartbeat(tick));
            }
            out.extend(s.into_iter().map(|s| Self::status_out(TEMI, TEMI_STATUS_TOPIC, s)));
        }
        if !self.is_crashed(AgentId::Arm) {
            let mut s: Vec<Status> = self.arm.advance(tick).into_iter().collect();
            if beat {
                s.push(Status::heartbeat(tick));
            }
            out.extend(s.into_iter().map(|s| Self::status_out(ARM, ARM_STATUS_TOPIC, s)));
        }
        out
    }

    fn patient(&mut self, tick: u64) -> Vec<Outgoing> {
        let topic = request_topic(&self.bed);
        let Some(ctx) = self.ctx.as_mut() else { return vec![] };
        let local = tick - ctx.start;
        let mut out = vec![];
        for (a, fired) in ctx.trial.patient_actions.iter().zip(ctx.fired.iter_mut()) {
            let base = match a.after {
                Anchor::TrialStart => Some(0),
                Anchor::Prompt => ctx.prompt_at,
                Anchor::Delivered => ctx.delivered_at,
            };
            if !*fired && base.is_some_and(|b| b + a.tick <= local) {
                *fired = true;
                let payload = serde_json::to_vec(&a.action).expect("action serialization is infallible");
                out.push(Outgoing { from: PATIENT, topic: topic.clone(), payload, qos: QoS::AtLeastOnce });
            }
        }
        out
    }

    /// Publishes a patient action right away (live mode).
    pub fn live_action(&self, action: &PatientAction) -> Outgoing {
        Outgoing {
            from: PATIENT,
            topic: request_topic(&self.bed),
            payload: serde_json::to_vec(action).expect("action serialization is infallible"),
            qos: QoS::AtLeastOnce,
        }
    }

    fn timeouts(&mut self, tick: u64) -> Result<Vec<Outgoing>, RunError> {
        if !self.fetch_mode() {
            return Ok(vec![]);
        }
        let t = on_timeout(&self.orch_cfg, &self.state, tick);
        self.apply(t, tick)
    }

    fn annotations(&mut self, tick: u64) {
        let local = self.local(tick);
        let Some(ctx) = &self.ctx else { return };
        let due: Vec<Value> = ctx
            .trial
            .annotations
            .iter()
            .filter(|a| a.tick == local)
            .map(|a| {
                let mut v = json!({ "category": a.category, "note": a.note });
                if let Some(m) = a.modality {
                    v["modality"] = json!(m);
                }
                v
            })
            .collect();
        for v in due {
            self.record(tick, "observer", TraceKind::Annotation, v);
        }
    }

    fn quiescent(&self) -> bool {
        self.state.phase == Phase::Idle
            && (self.temi.is_idle() || self.is_crashed(AgentId::Temi))
            && (self.arm.is_idle() || self.is_crashed(AgentId::Arm))
    }

    /// Runs every stage of one tick.
    pub fn tick<X: Transport<T>>(&mut self, x: &mut X, tick: u64) -> Result<(), RunError> {
        if let Some(agent) = self.crash_due(tick) {
            x.disconnect(agent.client_id())?;
        }
        let thermal = self.thermal(tick);
        self.stage(x, thermal, tick)?;
        let agents = self.agents(tick);
        self.stage(x, agents, tick)?;
        let patient = self.patient(tick);
        self.stage(x, patient, tick)?;
        let timeouts = self.timeouts(tick)?;
        self.stage(x, timeouts, tick)?;
        x.retry(self, tick)?;
        x.settle(self, tick)?;
        self.annotations(tick);
        Ok(())
    }

    pub fn stage<X: Transport<T>>(&mut self, x: &mut X, out: Vec<Outgoing>, tick: u64) -> Result<(), RunError> {
        for o in out {
            x.send(self, o, tick)?;
        }
        x.settle(self, tick)
    }

    /// Whether the trial is over after `tick`: the body script has played
    /// out, the robots are back at rest and nothing awaits acknowledgement,
    /// or the tail allowance ran out. Records the trial end.
    pub fn end_check(&mut self, tick: u64, pending: usize) -> Result<bool, RunError> {
        let Some(ctx) = &self.ctx else { return Ok(true) };
        let Some(length) = ctx.length else { return Ok(false) };
        let elapsed = tick + 1 - ctx.start;
        let settled = elapsed >= length && self.quiescent() && pending == 0;
        if !settled && elapsed < length + self.cfg.trial_tail_ticks {
            return Ok(false);
        }
        let c = self.arm.counters();
        let stock: u32 = self.arm.inventory().values().sum();
        if stock + c.loaded + c.lost != ctx.initial_stock {
            return Err(RunError::Invariant(format!("arm inventory not conserved in trial {}", ctx.trial.id)));
        }
        let v = json!({
            "index": ctx.index,
            "ticks": elapsed,
            "phase": self.state.phase,
            "settled": settled,
            "items_loaded": c.loaded,
            "items_lost": c.lost,
        });
        self.record(tick, "harness", TraceKind::TrialEnd, v);
        self.ctx = None;
        Ok(true)
    }
}
