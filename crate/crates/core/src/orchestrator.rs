//! Coordination state machine: bed-exit alert, bedside prompt, request
//! capture, arm pick-and-place and delivery.

use serde::{Deserialize, Serialize};

use crate::scenario::PatientAction;

pub const BEDSIDE: &str = "bedside";
pub const PICKUP: &str = "pickup";
pub const DOCK: &str = "dock";

pub const REMAIN_IN_BED: &str = "Please remain in bed";
pub const TAKE_ITEM: &str = "Please take the item";
pub const APOLOGY: &str = "Sorry, I could not bring your item";
pub const REPROMPT: &str = "Sorry, I did not catch that. Please choose an item";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Touch,
    Voice,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Touch => "touch",
            Modality::Voice => "voice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    AlertRaised,
    AtBedsidePrompt,
    RequestCaptured,
    TemiToPickup,
    ArmPicking,
    ItemLoaded,
    Returning,
    Delivered,
    DeliveryFailed,
}

impl Phase {
    pub const ALL: [Phase; 10] = [
        Phase::Idle,
        Phase::AlertRaised,
        Phase::AtBedsidePrompt,
        Phase::RequestCaptured,
        Phase::TemiToPickup,
        Phase::ArmPicking,
        Phase::ItemLoaded,
        Phase::Returning,
        Phase::Delivered,
        Phase::DeliveryFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::AlertRaised => "ALERT_RAISED",
            Phase::AtBedsidePrompt => "AT_BEDSIDE_PROMPT",
            Phase::RequestCaptured => "REQUEST_CAPTURED",
            Phase::TemiToPickup => "TEMI_TO_PICKUP",
            Phase::ArmPicking => "ARM_PICKING",
            Phase::ItemLoaded => "ITEM_LOADED",
            Phase::Returning => "RETURNING",
            Phase::Delivered => "DELIVERED",
            Phase::DeliveryFailed => "DELIVERY_FAILED",
        }
    }

    /// Phases that hold an active request.
    pub fn carries_request(self) -> bool {
        matches!(
            self,
            Phase::RequestCaptured
                | Phase::TemiToPickup
                | Phase::ArmPicking
                | Phase::ItemLoaded
                | Phase::Returning
                | Phase::Delivered
                | Phase::DeliveryFailed
        )
    }

    /// Phases the machine passes through within a single step and never
    /// rests in. They are still broadcast.
    pub fn is_transient(self) -> bool {
        matches!(self, Phase::RequestCaptured | Phase::Returning)
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemRequest {
    pub item: String,
    pub modality: Modality,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrchestrationState {
    pub phase: Phase,
    pub active_request: Option<ItemRequest>,
    pub phase_entry_tick: u64,
}

impl Default for OrchestrationState {
    fn default() -> Self {
        OrchestrationState { phase: Phase::Idle, active_request: None, phase_entry_tick: 0 }
    }
}

impl OrchestrationState {
    pub fn is_consistent(&self) -> bool {
        self.phase.carries_request() == self.active_request.is_some() && !self.phase.is_transient()
    }
}

/// Wire form is the command payload: `{"cmd": "navigate", "waypoint": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Speak { text: String },
    Navigate { waypoint: String },
    ShowPrompt { items: Vec<String> },
    #[serde(rename = "pick_place")]
    ArmPickPlace { item: String },
    Announce { text: String },
}

impl Command {
    pub fn speak(text: &str) -> Self {
        Command::Speak { text: text.to_string() }
    }

    pub fn navigate(waypoint: &str) -> Self {
        Command::Navigate { waypoint: waypoint.to_string() }
    }

    pub fn topic(&self) -> &'static str {
        match self {
            Command::ArmPickPlace { .. } => "robot/arm/cmd",
            _ => "robot/temi/cmd",
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("command serialization is infallible")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    BedExitPredicted { tick: u64 },
    TemiArrived { waypoint: String },
    PatientRequest(ItemRequest),
    ArmDone { item: String },
    ArmFailed { item: String, reason: String },
    ItemTaken,
    Timeout(Phase),
    Heartbeat,
}

/// Per-phase time budgets in ticks; `None` means no budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseBudgets {
    pub alert_raised: u64,
    pub at_bedside_prompt: u64,
    pub navigation: u64,
    pub arm_picking: u64,
    pub delivered_grace: u64,
}

impl Default for PhaseBudgets {
    fn default() -> Self {
        PhaseBudgets {
            alert_raised: 30 * 14,
            at_bedside_prompt: 60 * 14,
            navigation: 60 * 14,
            arm_picking: 90 * 14,
            delivered_grace: 60 * 14,
        }
    }
}

impl PhaseBudgets {
    pub fn budget(&self, phase: Phase) -> Option<u64> {
        match phase {
            Phase::Idle | Phase::RequestCaptured | Phase::Returning => None,
            Phase::AlertRaised => Some(self.alert_raised),
            Phase::AtBedsidePrompt => Some(self.at_bedside_prompt),
            Phase::TemiToPickup | Phase::ItemLoaded => Some(self.navigation),
            Phase::ArmPicking => Some(self.arm_picking),
            Phase::Delivered | Phase::DeliveryFailed => Some(self.delivered_grace),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    /// Items offered on the bedside prompt.
    pub inventory: Vec<String>,
    pub budgets: PhaseBudgets,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            inventory: ["water", "apple", "banana", "orange"].map(String::from).to_vec(),
            budgets: PhaseBudgets::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn offer_text(&self) -> String {
        format!("I can bring you {}. What would you like?", self.inventory.join(", "))
    }
}

/// Result of one step: the resting state, the commands to publish, and any
/// transient phase passed through on the way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub state: OrchestrationState,
    pub commands: Vec<Command>,
    pub via: Option<Phase>,
}

impl Transition {
    fn stay(s: &OrchestrationState) -> Self {
        Transition { state: s.clone(), commands: vec![], via: None }
    }

    pub fn changed(&self, from: &OrchestrationState) -> bool {
        self.state.phase != from.phase || self.via.is_some()
    }

    /// Every phase entered by this step, in order.
    pub fn entered(&self, from: &OrchestrationState) -> Vec<Phase> {
        if !self.changed(from) {
            return vec![];
        }
        self.via.into_iter().chain([self.state.phase]).collect()
    }
}

fn enter(phase: Phase, request: Option<ItemRequest>, tick: u64) -> OrchestrationState {
    OrchestrationState { phase, active_request: request, phase_entry_tick: tick }
}

fn fail_delivery(s: &OrchestrationState, tick: u64) -> Transition {
    Transition {
        state: enter(Phase::DeliveryFailed, s.active_request.clone(), tick),
        commands: vec![Command::navigate(BEDSIDE), Command::speak(APOLOGY)],
        via: None,
    }
}

fn go_idle(tick: u64) -> Transition {
    Transition { state: enter(Phase::Idle, None, tick), commands: vec![Command::navigate(DOCK)], via: None }
}

/// Pure transition function. Unmatched (phase, event) pairs leave the state
/// unchanged and emit nothing.
pub fn step(cfg: &OrchestratorConfig, s: &OrchestrationState, e: &Event, tick: u64) -> Transition {
    use Phase::*;
    let request = || s.active_request.clone();
    let requested = |item: &str| s.active_request.as_ref().is_some_and(|r| r.item == item);
    match (s.phase, e) {
        (Idle, Event::BedExitPredicted { .. }) => Transition {
            state: enter(AlertRaised, None, tick),
            commands: vec![Command::speak(REMAIN_IN_BED), Command::navigate(BEDSIDE)],
            via: None,
        },
        (AlertRaised, Event::TemiArrived { waypoint }) if waypoint == BEDSIDE => Transition {
            state: enter(AtBedsidePrompt, None, tick),
            commands: vec![
                Command::ShowPrompt { items: cfg.inventory.clone() },
                Command::Speak { text: cfg.offer_text() },
            ],
            via: None,
        },
        (AtBedsidePrompt, Event::PatientRequest(r)) => Transition {
            state: enter(TemiToPickup, Some(r.clone()), tick),
            commands: vec![
                Command::navigate(PICKUP),
                Command::Announce { text: format!("Arm, please pick up the {}", r.item) },
            ],
            via: Some(RequestCaptured),
        },
        (TemiToPickup, Event::TemiArrived { waypoint }) if waypoint == PICKUP => {
            let item = s.active_request.as_ref().map(|r| r.item.clone()).unwrap_or_default();
            Transition {
                state: enter(ArmPicking, request(), tick),
                commands: vec![Command::ArmPickPlace { item }],
                via: None,
            }
        }
        (ArmPicking, Event::ArmDone { item }) if requested(item) => Transition {
            state: enter(ItemLoaded, request(), tick),
            commands: vec![Command::navigate(BEDSIDE)],
            via: None,
        },
        (ArmPicking, Event::ArmFailed { item, .. }) if requested(item) => fail_delivery(s, tick),
        (ItemLoaded, Event::TemiArrived { waypoint }) if waypoint == BEDSIDE => Transition {
            state: enter(Delivered, request(), tick),
            commands: vec![Command::speak(TAKE_ITEM)],
            via: Some(Returning),
        },
        (Delivered, Event::ItemTaken) => go_idle(tick),
        (phase, Event::Timeout(p)) if phase == *p => match phase {
            AlertRaised | AtBedsidePrompt | Delivered | DeliveryFailed => go_idle(tick),
            TemiToPickup | ArmPicking | ItemLoaded => fail_delivery(s, tick),
            Idle | RequestCaptured | Returning => Transition::stay(s),
        },
        _ => Transition::stay(s),
    }
}

/// Fires the phase timeout once the phase has outlived its budget.
pub fn on_timeout(cfg: &OrchestratorConfig, s: &OrchestrationState, now_tick: u64) -> Transition {
    match cfg.budgets.budget(s.phase) {
        Some(budget) if now_tick.saturating_sub(s.phase_entry_tick) > budget => {
            step(cfg, s, &Event::Timeout(s.phase), now_tick)
        }
        _ => Transition::stay(s),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Capture {
    Accepted(Event),
    /// Nothing usable was recognised; the robot asks again.
    Reprompt(Command),
    /// The action does not fit the current phase.
    OutOfPhase,
}

/// Earliest inventory name contained in `text`, case-insensitively.
pub fn match_voice<'a>(inventory: &'a [String], text: &str) -> Option<&'a str> {
    let lower = text.to_lowercase();
    inventory
        .iter()
        .filter_map(|item| lower.find(&item.to_lowercase()).map(|pos| (pos, item)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, item)| item.as_str())
}

/// Interprets a raw patient action against the current phase.
pub fn capture_request(
    cfg: &OrchestratorConfig,
    s: &OrchestrationState,
    action: &PatientAction,
    tick: u64,
) -> Capture {
    match action {
        PatientAction::TakeItem if s.phase == Phase::Delivered => Capture::Accepted(Event::ItemTaken),
        PatientAction::Request { modality, item, text, .. } if s.phase == Phase::AtBedsidePrompt => {
            let found = match modality {
                Modality::Touch => item.as_deref().and_then(|i| cfg.inventory.iter().find(|x| *x == i)).map(String::as_str),
                Modality::Voice => match_voice(&cfg.inventory, text.as_deref().or(item.as_deref()).unwrap_or("")),
            };
            match found {
                Some(item) => Capture::Accepted(Event::PatientRequest(ItemRequest {
                    item: item.to_string(),
                    modality: *modality,
                    tick,
                })),
                None => Capture::Reprompt(Command::speak(REPROMPT)),
            }
        }
        _ => Capture::OutOfPhase,
    }
}

/// Payload of `orchestrator/state`.
pub fn state_payload(phase: Phase, s: &OrchestrationState, tick: u64) -> Vec<u8> {
    let mut v = serde_json::json!({ "phase": phase, "tick": tick });
    if let Some(r) = &s.active_request {
        v["item"] = r.item.clone().into();
        v["modality"] = r.modality.as_str().into();
    }
    serde_json::to_vec(&v).expect("state serialization is infallible")
}
