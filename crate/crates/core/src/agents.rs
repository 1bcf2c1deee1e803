//! Simulated robots: the temi (navigation, speech, prompt screen) and the
//! table-top arm (inventory pick-and-place).

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::num::Scalar;
use crate::orchestrator::Command;
use crate::rng::{seeded_rng, RngDomain};

pub const TICKS_PER_SECOND: u64 = 14;
pub const TEMI_STATUS_TOPIC: &str = "robot/temi/status";
pub const ARM_STATUS_TOPIC: &str = "robot/arm/status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Waypoint<T> {
    pub name: String,
    pub pos: (T, T),
    /// Arrivals here face the patient and are checked for proximity.
    #[serde(default)]
    pub patient_facing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Edge<T> {
    pub a: String,
    pub b: String,
    /// Euclidean distance between the endpoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<T>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown waypoint {0:?}")]
    UnknownWaypoint(String),
    #[error("edge {0}-{1} has non-positive length")]
    EdgeLength(String, String),
    #[error("speed must be positive")]
    Speed,
    #[error("waypoint graph is not connected")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct WaypointGraph<T> {
    pub nodes: Vec<Waypoint<T>>,
    pub edges: Vec<Edge<T>>,
    pub speed_m_per_s: T,
}

impl<T: Scalar> Default for WaypointGraph<T> {
    fn default() -> Self {
        let node = |name: &str, x: f64, y: f64, facing: bool| Waypoint {
            name: name.to_string(),
            pos: (T::of(x), T::of(y)),
            patient_facing: facing,
        };
        let edge = |a: &str, b: &str| Edge { a: a.to_string(), b: b.to_string(), length_m: None };
        WaypointGraph {
            nodes: vec![
                node("dock", 0.0, 0.0, false),
                node("bedside", 4.0, 1.0, true),
                node("bedside_foot", 4.0, 2.5, true),
                node("pickup", 8.0, 0.0, false),
            ],
            edges: vec![
                edge("dock", "bedside"),
                edge("dock", "pickup"),
                edge("bedside", "pickup"),
                edge("bedside", "bedside_foot"),
                edge("bedside_foot", "pickup"),
            ],
            speed_m_per_s: T::of(0.5),
        }
    }
}

impl<T: Scalar> WaypointGraph<T> {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn edge_length(&self, e: &Edge<T>) -> Result<(usize, usize, T), GraphError> {
        let ia = self.index(&e.a).ok_or_else(|| GraphError::UnknownWaypoint(e.a.clone()))?;
        let ib = self.index(&e.b).ok_or_else(|| GraphError::UnknownWaypoint(e.b.clone()))?;
        let len = e.length_m.unwrap_or_else(|| {
            let (pa, pb) = (self.nodes[ia].pos, self.nodes[ib].pos);
            (pa.0 - pb.0).hypot(pa.1 - pb.1)
        });
        if !(len > T::zero()) {
            return Err(GraphError::EdgeLength(e.a.clone(), e.b.clone()));
        }
        Ok((ia, ib, len))
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.speed_m_per_s > T::zero()) {
            return Err(GraphError::Speed);
        }
        for e in &self.edges {
            self.edge_length(e)?;
        }
        if !self.nodes.is_empty() && self.distances(0)?.iter().any(Option::is_none) {
            return Err(GraphError::Disconnected);
        }
        Ok(())
    }

    /// Dijkstra from `source` over the undirected edge set.
    fn distances(&self, source: usize) -> Result<Vec<Option<T>>, GraphError> {
        let n = self.nodes.len();
        let mut adj: Vec<Vec<(usize, T)>> = vec![vec![]; n];
        for e in &self.edges {
            let (a, b, len) = self.edge_length(e)?;
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        let mut dist: Vec<Option<T>> = vec![None; n];
        let mut done = vec![false; n];
        dist[source] = Some(T::zero());
        loop {
            let next = (0..n)
                .filter(|&i| !done[i])
                .filter_map(|i| dist[i].map(|d| (i, d)))
                .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                });
            let Some((u, du)) = next else { break };
            done[u] = true;
            for &(v, len) in &adj[u] {
                let cand = du + len;
                if dist[v].is_none_or(|dv| cand < dv) {
                    dist[v] = Some(cand);
                }
            }
        }
        Ok(dist)
    }

    pub fn shortest_path_m(&self, from: &str, to: &str) -> Result<T, GraphError> {
        let a = self.index(from).ok_or_else(|| GraphError::UnknownWaypoint(from.to_string()))?;
        let b = self.index(to).ok_or_else(|| GraphError::UnknownWaypoint(to.to_string()))?;
        self.distances(a)?[b].ok_or(GraphError::Disconnected)
    }

    /// Travel time rounded up to whole ticks.
    pub fn travel_ticks(&self, from: &str, to: &str) -> Result<u64, GraphError> {
        let secs = self.shortest_path_m(from, to)? / self.speed_m_per_s;
        Ok((secs * T::of(TICKS_PER_SECOND as f64)).ceil().to_u64().unwrap_or(u64::MAX))
    }
}

/// Speech length rule: one tick per two characters, at least one second.
pub fn speech_ticks(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(2).max(TICKS_PER_SECOND)
}

/// A status message produced by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Status {
    pub tick: u64,
    pub body: Value,
}

impl Status {
    fn new(tick: u64, status: &str, extra: Value) -> Self {
        let mut body = json!({ "status": status, "tick": tick });
        if let (Some(obj), Value::Object(more)) = (body.as_object_mut(), extra) {
            obj.extend(more);
        }
        Status { tick, body }
    }

    pub fn heartbeat(tick: u64) -> Self {
        Status::new(tick, "heartbeat", json!({}))
    }

    pub fn kind(&self) -> &str {
        self.body["status"].as_str().unwrap_or("")
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.body).expect("status serialization is infallible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TemiParams<T> {
    /// Scale of the half-normal stop-short distance at patient-facing
    /// waypoints.
    pub proximity_sigma_m: T,
    pub far_threshold_m: T,
}

impl<T: Scalar> Default for TemiParams<T> {
    fn default() -> Self {
        TemiParams { proximity_sigma_m: T::of(0.3), far_threshold_m: T::of(0.8) }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Navigate { target: String, until: u64 },
    Speak { until: u64 },
}

/// Where the robot is: at a waypoint or travelling between two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    At(String),
    EnRoute { from: String, to: String },
}

/// Executes commands one at a time in arrival order.
#[derive(Debug, Clone)]
pub struct TemiAgent<T> {
    graph: WaypointGraph<T>,
    params: TemiParams<T>,
    proximity_override: Option<T>,
    location: Location,
    queue: VecDeque<Command>,
    current: Option<Action>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TemiAgent<T> {
    pub fn new(graph: WaypointGraph<T>, params: TemiParams<T>, rng: ChaCha8Rng) -> Self {
        TemiAgent {
            graph,
            params,
            proximity_override: None,
            location: Location::At("dock".to_string()),
            queue: VecDeque::new(),
            current: None,
            rng,
        }
    }

    pub fn seeded(graph: WaypointGraph<T>, params: TemiParams<T>, seed: u64, index: u64) -> Self {
        Self::new(graph, params, seeded_rng(seed, RngDomain::Temi, index))
    }

    /// Forces every patient-facing stop-short distance to `d`.
    pub fn set_proximity_override(&mut self, d: Option<T>) {
        self.proximity_override = d;
    }

    pub fn location(&self) -> &Location {
        &self.location
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none() && self.queue.is_empty()
    }

    /// Tick at which the in-flight action completes.
    pub fn next_due(&self) -> Option<u64> {
        self.current.as_ref().map(|a| match a {
            Action::Navigate { until, .. } | Action::Speak { until } => *until,
        })
    }

    /// Queues a command and starts it at once if nothing is in flight.
    pub fn handle(&mut self, cmd: Command, now: u64) -> Vec<Status> {
        self.queue.push_back(cmd);
        self.advance(now)
    }

    /// Completes the in-flight action if due and starts queued ones.
    pub fn advance(&mut self, now: u64) -> Vec<Status> {
        let mut out = Vec::new();
        loop {
            match self.current.take() {
                Some(action) if self.due(&action, now) => out.push(self.complete(action)),
                Some(action) => {
                    self.current = Some(action);
                    break;
                }
                None => match self.queue.pop_front() {
                    Some(cmd) => self.start(cmd, now, &mut out),
                    None => break,
                },
            }
        }
        out
    }

    fn due(&self, action: &Action, now: u64) -> bool {
        match action {
            Action::Navigate { until, .. } | Action::Speak { until } => *until <= now,
        }
    }

    fn start(&mut self, cmd: Command, now: u64, out: &mut Vec<Status>) {
        match cmd {
            Command::Navigate { waypoint } => {
                let here = match &self.location {
                    Location::At(w) => w.clone(),
                    Location::EnRoute { to, .. } => to.clone(),
                };
                match self.graph.travel_ticks(&here, &waypoint) {
                    Ok(ticks) => {
                        self.location = Location::EnRoute { from: here, to: waypoint.clone() };
                        self.current = Some(Action::Navigate { target: waypoint, until: now + ticks });
                    }
                    Err(e) => out.push(Status::new(
                        now,
                        "nav_error",
                        json!({ "waypoint": waypoint, "reason": e.to_string() }),
                    )),
                }
            }
            Command::Speak { text } | Command::Announce { text } => {
                let until = now + speech_ticks(&text);
                out.push(Status::new(now, "speech_started", json!({ "text": text, "until": until })));
                self.current = Some(Action::Speak { until });
            }
            Command::ShowPrompt { items } => {
                out.push(Status::new(now, "prompt_shown", json!({ "items": items })));
            }
            Command::ArmPickPlace { item } => {
                log::warn!("temi ignoring arm command for {item}");
            }
        }
    }

    fn complete(&mut self, action: Action) -> Status {
        match action {
            Action::Speak { until } => Status::new(until, "speech_done", json!({})),
            Action::Navigate { target, until } => {
                self.location = Location::At(target.clone());
                let facing = self
                    .graph
                    .index(&target)
                    .is_some_and(|i| self.graph.nodes[i].patient_facing);
                let mut extra = json!({ "waypoint": target });
                if facing {
                    let err = self.proximity_override.unwrap_or_else(|| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        T::of(z.abs()) * self.params.proximity_sigma_m
                    });
                    extra["proximity_error_m"] = json!(err.to_f64_lossy());
                    extra["far_from_patient"] = json!(err > self.params.far_threshold_m);
                }
                Status::new(until, "arrived", extra)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ArmParams<T> {
    pub failure_prob: T,
    pub duration_ticks: u64,
}

impl<T: Scalar> Default for ArmParams<T> {
    fn default() -> Self {
        ArmParams { failure_prob: T::zero(), duration_ticks: 30 * TICKS_PER_SECOND }
    }
}

pub fn default_inventory() -> BTreeMap<String, u32> {
    ["water", "apple", "banana", "orange"].iter().map(|s| (s.to_string(), 1)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pick {
    item: String,
    until: u64,
    success: bool,
}

/// Items placed in the bowl and items dropped, for conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArmCounters {
    pub loaded: u32,
    pub lost: u32,
}

#[derive(Debug, Clone)]
pub struct ArmAgent<T> {
    inventory: BTreeMap<String, u32>,
    params: ArmParams<T>,
    busy: Option<Pick>,
    counters: ArmCounters,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ArmAgent<T> {
    pub fn new(inventory: BTreeMap<String, u32>, params: ArmParams<T>, rng: ChaCha8Rng) -> Self {
        ArmAgent { inventory, params, busy: None, counters: ArmCounters::default(), rng }
    }

    pub fn seeded(inventory: BTreeMap<String, u32>, params: ArmParams<T>, seed: u64, index: u64) -> Self {
        Self::new(inventory, params, seeded_rng(seed, RngDomain::Arm, index))
    }

    pub fn inventory(&self) -> &BTreeMap<String, u32> {
        &self.inventory
    }

    pub fn counters(&self) -> ArmCounters {
        self.counters
    }

    pub fn is_idle(&self) -> bool {
        self.busy.is_none()
    }

    pub fn next_due(&self) -> Option<u64> {
        self.busy.as_ref().map(|p| p.until)
    }

    /// Starts a pick. Refusals are reported immediately; the outcome of an
    /// accepted pick is drawn now and reported when it completes. A failed
    /// grasp drops the item.
    pub fn handle(&mut self, item: &str, now: u64) -> Option<Status> {
        let failed = |reason: &str| {
            Some(Status::new(now, "failed", json!({ "item": item, "reason": reason })))
        };
        if self.busy.is_some() {
            return failed("busy");
        }
        match self.inventory.get_mut(item) {
            Some(count) if *count > 0 => {
                *count -= 1;
                let success = self.rng.random::<f64>() >= self.params.failure_prob.to_f64_lossy();
                self.busy = Some(Pick { item: item.to_string(), until: now + self.params.duration_ticks, success });
                None
            }
            _ => failed("item_unavailable"),
        }
    }

    pub fn advance(&mut self, now: u64) -> Option<Status> {
        if self.busy.as_ref().is_none_or(|p| p.until > now) {
            return None;
        }
        let pick = self.busy.take().expect("checked above");
        Some(if pick.success {
            self.counters.loaded += 1;
            Status::new(pick.until, "done", json!({ "item": pick.item }))
        } else {
            self.counters.lost += 1;
            Status::new(pick.until, "failed", json!({ "item": pick.item, "reason": "grasp_failure" }))
        })
    }
}
