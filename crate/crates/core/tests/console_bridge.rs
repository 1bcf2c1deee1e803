use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use ward_sim::harness::config::RealtimeParams;
use ward_sim::harness::console::{validate_outbound, ConsoleServer};
use ward_sim::trace::TraceKind;
use ward_sim::SimConfig;

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn connect(server: &ConsoleServer) -> Ws {
    let (ws, _) = tungstenite::connect(format!("ws://{}", server.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    }
    ws
}

fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string())).unwrap();
}

/// Reads frames until `want` matches one, checking every frame on the way.
fn await_frame(ws: &mut Ws, want: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(30);
    while Instant::now() < deadline {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let v: Value = serde_json::from_str(&t).unwrap();
                validate_outbound(&v).unwrap();
                if want(&v) {
                    return v;
                }
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => panic!("websocket read failed: {e}"),
        }
    }
    panic!("no matching frame within 30 s");
}

fn fast() -> SimConfig {
    SimConfig { realtime: RealtimeParams { tick_ms: 2 }, ..Default::default() }
}

#[test]
fn touch_request_reaches_the_trace() {
    let server = ConsoleServer::start(&fast(), "127.0.0.1:0", 3, "bed1").unwrap();
    let mut ws = connect(&server);
    send(&mut ws, json!({"type": "action", "action": "bed_exit"}));
    await_frame(&mut ws, |v| v["type"] == "bed_exit");
    await_frame(&mut ws, |v| v["type"] == "state" && v["phase"] == "AT_BEDSIDE_PROMPT");
    await_frame(&mut ws, |v| v["type"] == "prompt");
    send(&mut ws, json!({"type": "action", "action": "request", "item": "water", "modality": "touch"}));
    let captured = await_frame(&mut ws, |v| v["type"] == "state" && v["phase"] == "TEMI_TO_PICKUP");
    assert_eq!(captured["item"], "water");
    drop(ws);
    let trace = server.shutdown().unwrap();
    let actions: Vec<&Value> =
        trace.events.iter().filter(|e| e.kind == TraceKind::PatientAction).map(|e| &e.payload).collect();
    assert!(actions.iter().any(|a| a["modality"] == "touch" && a["outcome"] == "accepted" && a["item"] == "water"));
    assert!(trace.events.iter().any(|e| e.kind == TraceKind::Publish && e.payload["topic"] == "ward/bed1/bedexit"));
}

#[test]
fn malformed_frames_get_an_error_and_keep_the_session() {
    let server = ConsoleServer::start(&fast(), "127.0.0.1:0", 4, "bed1").unwrap();
    let mut ws = connect(&server);
    for bad in ["not json", r#"{"type":"action","action":"dance"}"#, r#"{"type":"action","action":"request"}"#] {
        ws.send(Message::Text(bad.to_string())).unwrap();
        let e = await_frame(&mut ws, |v| v["type"] == "error");
        assert!(e["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    send(&mut ws, json!({"type": "action", "action": "bed_exit"}));
    await_frame(&mut ws, |v| v["type"] == "bed_exit");
    drop(ws);
    server.shutdown().unwrap();
}
