//! WebSocket bridge for the patient console. Outbound frames mirror
//! orchestrator phase broadcasts, temi speech and prompts, and bed-exit
//! events; inbound frames are patient actions fed to a live run.
//!
//! Inbound: `{"type": "action", "action": "bed_exit" | "trick" | "request" |
//! "take_item", "item"?, "modality"?, "text"?}`.
//! Outbound: `{"type": "state" | "speech" | "prompt" | "bed_exit" | "error", ..}`.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};
use ward_mqtt::{BrokerServer, Client, QoS, ServerConfig};

use super::config::SimConfig;
use super::realtime::{run_live, LiveInput};
use super::world::{bedexit_topic, RunError, STATE_TOPIC, TEMI_CMD_TOPIC};
use crate::num::Scalar;
use crate::orchestrator::Modality;
use crate::scenario::PatientAction;
use crate::trace::Trace;

pub const OUTBOUND_TYPES: [&str; 5] = ["state", "speech", "prompt", "bed_exit", "error"];

/// Parses one inbound frame.
pub fn parse_inbound(text: &str) -> Result<LiveInput, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| format!("invalid json: {e}"))?;
    if v.get("type").and_then(Value::as_str) != Some("action") {
        return Err("expected type \"action\"".into());
    }
    let s = |k: &str| v.get(k).and_then(Value::as_str);
    match s("action") {
        Some("bed_exit") => Ok(LiveInput::BedExit),
        Some("trick") => Ok(LiveInput::Trick),
        Some("take_item") => Ok(LiveInput::Action(PatientAction::TakeItem)),
        Some("request") => {
            let modality = match s("modality") {
                None | Some("touch") => Modality::Touch,
                Some("voice") => Modality::Voice,
                Some(m) => return Err(format!("unknown modality {m:?}")),
            };
            match (modality, s("item"), s("text")) {
                (Modality::Touch, Some(item), _) if !item.is_empty() => Ok(LiveInput::Action(PatientAction::touch(item))),
                (Modality::Voice, item, Some(text)) if !text.is_empty() => {
                    Ok(LiveInput::Action(PatientAction::voice(text, item)))
                }
                (Modality::Touch, ..) => Err("touch request needs an item".into()),
                (Modality::Voice, ..) => Err("voice request needs text".into()),
            }
        }
        Some(other) => Err(format!("unknown action {other:?}")),
        None => Err("missing action".into()),
    }
}

/// Console frame for a message seen on the bus, if it is mirrored.
pub fn outbound_frame(topic: &str, payload: &[u8], bed: &str) -> Option<Value> {
    let body: Value = serde_json::from_slice(payload).ok()?;
    if topic == STATE_TOPIC {
        let mut f = body;
        f["type"] = json!("state");
        return Some(f);
    }
    if topic == bedexit_topic(bed) {
        return Some(json!({ "type": "bed_exit", "tick": body["tick"], "score": body["score"] }));
    }
    if topic == TEMI_CMD_TOPIC {
        return match body.get("cmd").and_then(Value::as_str)? {
            "speak" | "announce" => Some(json!({ "type": "speech", "text": body["text"] })),
            "show_prompt" => Some(json!({ "type": "prompt", "items": body["items"] })),
            _ => None,
        };
    }
    None
}

pub fn error_frame(message: &str) -> Value {
    json!({ "type": "error", "message": message })
}

/// Checks an outbound frame against the bridge schema.
pub fn validate_outbound(v: &Value) -> Result<(), String> {
    let kind = v.get("type").and_then(Value::as_str).ok_or("missing type")?;
    let has = |k: &str, ok: fn(&Value) -> bool| v.get(k).is_some_and(ok);
    let valid = match kind {
        "state" => has("phase", Value::is_string) && has("tick", Value::is_u64),
        "speech" => has("text", Value::is_string),
        "prompt" => v["items"].as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        "bed_exit" => has("tick", Value::is_u64) && has("score", Value::is_number),
        "error" => has("message", Value::is_string),
        other => return Err(format!("unknown frame type {other:?}")),
    };
    if valid {
        Ok(())
    } else {
        Err(format!("malformed {kind} frame: {v}"))
    }
}

/// A running bridge: broker, live simulation and WebSocket listener.
pub struct ConsoleServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: JoinHandle<Result<Trace, RunError>>,
    listener: JoinHandle<()>,
    broker: BrokerServer,
}

impl ConsoleServer {
    pub fn start<T: Scalar>(cfg: &SimConfig<T>, addr: impl std::net::ToSocketAddrs, seed: u64, bed: &str) -> Result<Self, RunError> {
        let broker = BrokerServer::bind(
            "127.0.0.1:0",
            ServerConfig { broker: cfg.broker.broker_config(), codec: cfg.broker.codec() },
        )?;
        let broker_addr = broker.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let sim = {
            let cfg = cfg.clone();
            let stop = stop.clone();
            thread::spawn(move || run_live(&cfg, broker_addr, seed, rx, stop))
        };
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let listener = {
            let stop = stop.clone();
            let bed = bed.to_string();
            thread::spawn(move || accept_loop(listener, broker_addr, tx, stop, bed))
        };
        Ok(ConsoleServer { addr: local, stop, sim, listener, broker })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops everything and returns the live trace.
    pub fn shutdown(self) -> Result<Trace, RunError> {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.listener.join();
        let trace = self.sim.join().unwrap_or_else(|_| Err(RunError::Invariant("simulation thread panicked".into())));
        self.broker.shutdown();
        trace
    }
}

fn accept_loop(listener: TcpListener, broker: SocketAddr, tx: Sender<LiveInput>, stop: Arc<AtomicBool>, bed: String) {
    let ids = AtomicU64::new(0);
    let mut sessions = vec![];
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (tx, stop, bed) = (tx.clone(), stop.clone(), bed.clone());
                let id = ids.fetch_add(1, Ordering::Relaxed);
                sessions.push(thread::spawn(move || {
                    if let Err(e) = session(stream, broker, id, tx, stop, &bed) {
                        log::info!("console {peer} closed: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::error!("console accept failed: {e}");
                break;
            }
        }
    }
    for s in sessions {
        let _ = s.join();
    }
}

fn send(ws: &mut WebSocket<TcpStream>, v: &Value) -> Result<(), tungstenite::Error> {
    ws.send(Message::Text(v.to_string()))
}

fn session(
    stream: TcpStream,
    broker: SocketAddr,
    id: u64,
    tx: Sender<LiveInput>,
    stop: Arc<AtomicBool>,
    bed: &str,
) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream)?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(10)))?;
    let mqtt = Client::connect(broker, &format!("console-{id}"))?;
    let exit = bedexit_topic(bed);
    mqtt.subscribe(&[(STATE_TOPIC, QoS::AtMostOnce), (TEMI_CMD_TOPIC, QoS::AtMostOnce), (exit.as_str(), QoS::AtMostOnce)])?;
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => match parse_inbound(&text) {
                Ok(input) => {
                    if tx.send(input).is_err() {
                        send(&mut ws, &error_frame("simulation stopped"))?;
                    }
                }
                Err(e) => send(&mut ws, &error_frame(&e))?,
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        while let Some(p) = mqtt.try_recv() {
            if let Some(frame) = outbound_frame(p.topic.as_str(), &p.payload, bed) {
                send(&mut ws, &frame)?;
            }
        }
    }
    let _ = ws.close(None);
    let _ = mqtt.disconnect();
    Ok(())
}
