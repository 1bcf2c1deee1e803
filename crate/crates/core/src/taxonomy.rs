//! HRI error taxonomy: ten categories, rule-based detectors over a run trace
//! and per-category, per-modality tallies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::orchestrator::Modality;
use crate::trace::{message, TraceEvent, TraceKind};

pub const ERRORS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    MisunderstandingUser,
    InsufficientCommunicativeFunction,
    Procedure,
    Intrusion,
    Operation,
    SituationAwareness,
    SystemFailure,
    SafeguardingFailure,
    OperationalError,
    DesignFlaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorGroup {
    Social,
    Human,
    Robot,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 10] = [
        ErrorCategory::MisunderstandingUser,
        ErrorCategory::InsufficientCommunicativeFunction,
        ErrorCategory::Procedure,
        ErrorCategory::Intrusion,
        ErrorCategory::Operation,
        ErrorCategory::SituationAwareness,
        ErrorCategory::SystemFailure,
        ErrorCategory::SafeguardingFailure,
        ErrorCategory::OperationalError,
        ErrorCategory::DesignFlaw,
    ];

    pub fn group(self) -> ErrorGroup {
        use ErrorCategory::*;
        match self {
            MisunderstandingUser | InsufficientCommunicativeFunction => ErrorGroup::Social,
            Procedure | Intrusion | Operation | SituationAwareness => ErrorGroup::Human,
            SystemFailure | SafeguardingFailure | OperationalError | DesignFlaw => ErrorGroup::Robot,
        }
    }

    /// Categories with a trace detector; the rest come only from manual
    /// annotations.
    pub fn is_automatable(self) -> bool {
        !matches!(self, ErrorCategory::Procedure | ErrorCategory::SituationAwareness | ErrorCategory::DesignFlaw)
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCategory::*;
        match self {
            MisunderstandingUser => "misunderstanding_user",
            InsufficientCommunicativeFunction => "insufficient_communicative_function",
            Procedure => "procedure",
            Intrusion => "intrusion",
            Operation => "operation",
            SituationAwareness => "situation_awareness",
            SystemFailure => "system_failure",
            SafeguardingFailure => "safeguarding_failure",
            OperationalError => "operational_error",
            DesignFlaw => "design_flaw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub category: ErrorCategory,
    pub tick: u64,
    pub trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    /// `seq` of the trace events the record was derived from.
    pub evidence: Vec<u64>,
    #[serde(default)]
    pub annotated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// A heartbeat gap longer than this many ticks is a system failure.
    pub heartbeat_gap_ticks: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { heartbeat_gap_ticks: 42 }
    }
}

/// Topics whose QoS 1 loss counts as a safeguarding failure.
pub const SAFETY_TOPICS: [&str; 2] = ["ward/+/bedexit", "robot/temi/cmd"];

fn is_safety_topic(topic: &str) -> bool {
    let levels: Vec<&str> = topic.split('/').collect();
    SAFETY_TOPICS.iter().any(|f| {
        let fl: Vec<&str> = f.split('/').collect();
        fl.len() == levels.len() && fl.iter().zip(&levels).all(|(a, b)| *a == "+" || a == b)
    })
}

const AGENTS: [(&str, &str); 2] = [("temi", "robot/temi/status"), ("arm", "robot/arm/status")];

#[derive(Default)]
struct TrialScan {
    id: String,
    prompt_items: Vec<String>,
    speech: Vec<(u64, u64)>,
    modality: Option<Modality>,
    heartbeat: BTreeMap<&'static str, (u64, u64, bool)>,
}

impl TrialScan {
    fn start(id: &str, tick: u64, seq: u64) -> Self {
        let mut s = TrialScan { id: id.to_string(), ..Default::default() };
        for (agent, _) in AGENTS {
            s.heartbeat.insert(agent, (tick, seq, false));
        }
        s
    }

    fn speaking_at(&self, t: u64) -> bool {
        self.speech.iter().any(|&(a, b)| a <= t && t < b)
    }

    fn speech_overlaps(&self, from: u64, to: u64) -> bool {
        self.speech.iter().any(|&(a, b)| a < to && from < b)
    }
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn modality_of(v: &Value) -> Option<Modality> {
    serde_json::from_value(v.get("modality")?.clone()).ok()
}

/// Runs every detector over a tick-ordered trace.
pub fn classify_trace(events: &[TraceEvent], params: &DetectorParams) -> Vec<ErrorRecord> {
    let mut out = Vec::new();
    let mut scan: Option<TrialScan> = None;
    for e in events {
        if e.kind == TraceKind::TrialStart {
            scan = Some(TrialScan::start(e.trial.as_deref().unwrap_or(""), e.tick, e.seq));
            continue;
        }
        let Some(s) = scan.as_mut() else { continue };
        let record = |category, modality, evidence: Vec<u64>, tick| ErrorRecord {
            category,
            tick,
            trial_id: s.id.clone(),
            modality,
            evidence,
            annotated: false,
        };

        for (agent, _) in AGENTS {
            let (last, seq, flagged) = s.heartbeat[agent];
            if !flagged && e.tick > last + params.heartbeat_gap_ticks {
                out.push(record(ErrorCategory::SystemFailure, s.modality, vec![seq], last + params.heartbeat_gap_ticks + 1));
                s.heartbeat.insert(agent, (last, seq, true));
            }
        }

        match e.kind {
            TraceKind::Publish => {
                let Some((topic, body)) = message(e) else { continue };
                if topic == "robot/temi/cmd" && str_field(body, "cmd") == Some("show_prompt") {
                    s.prompt_items = body["items"]
                        .as_array()
                        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                        .unwrap_or_default();
                }
                if let Some((agent, _)) = AGENTS.iter().find(|(_, t)| *t == topic) {
                    match str_field(body, "status") {
                        Some("heartbeat") => {
                            s.heartbeat.insert(agent, (e.tick, e.seq, false));
                        }
                        Some("speech_started") => {
                            let until = body["until"].as_u64().unwrap_or(e.tick);
                            s.speech.push((e.tick, until));
                        }
                        Some("arrived") if body["far_from_patient"] == Value::Bool(true) => {
                            out.push(record(ErrorCategory::OperationalError, s.modality, vec![e.seq], e.tick));
                        }
                        _ => {}
                    }
                }
            }
            TraceKind::Qos1Dropped => {
                if str_field(&e.payload, "topic").is_some_and(is_safety_topic) {
                    out.push(record(ErrorCategory::SafeguardingFailure, s.modality, vec![e.seq], e.tick));
                }
            }
            TraceKind::PatientAction => {
                let p = &e.payload;
                let modality = modality_of(p);
                let outcome = str_field(p, "outcome").unwrap_or("");
                let err_modality = modality.or(s.modality);
                if outcome == "out_of_phase" {
                    out.push(record(ErrorCategory::Intrusion, err_modality, vec![e.seq], e.tick));
                    continue;
                }
                match modality {
                    Some(Modality::Voice) => {
                        let text = str_field(p, "text").unwrap_or("");
                        let d = (text.chars().count() as u64).div_ceil(2);
                        if s.speech_overlaps(e.tick.saturating_sub(d), e.tick) {
                            out.push(record(ErrorCategory::InsufficientCommunicativeFunction, modality, vec![e.seq], e.tick));
                        }
                        let intended = str_field(p, "intended_item");
                        let misheard = match (outcome, intended) {
                            ("accepted", Some(want)) => str_field(p, "captured_item") != Some(want),
                            ("reprompt", Some(want)) => s.prompt_items.iter().any(|i| i == want),
                            _ => false,
                        };
                        if misheard {
                            out.push(record(ErrorCategory::MisunderstandingUser, modality, vec![e.seq], e.tick));
                        }
                    }
                    _ => {
                        if s.speaking_at(e.tick) {
                            out.push(record(ErrorCategory::Intrusion, err_modality, vec![e.seq], e.tick));
                        }
                        if modality == Some(Modality::Touch) && outcome == "reprompt" {
                            out.push(record(ErrorCategory::Operation, modality, vec![e.seq], e.tick));
                        }
                    }
                }
                if outcome == "accepted" && modality.is_some() {
                    s.modality = modality;
                }
            }
            TraceKind::Annotation => {
                if let Ok(category) = serde_json::from_value(e.payload["category"].clone()) {
                    out.push(ErrorRecord {
                        category,
                        tick: e.tick,
                        trial_id: s.id.clone(),
                        modality: modality_of(&e.payload),
                        evidence: vec![e.seq],
                        annotated: true,
                    });
                }
            }
            TraceKind::TrialEnd => scan = None,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRow {
    pub category: ErrorCategory,
    pub group: ErrorGroup,
    pub touch: usize,
    pub voice: usize,
    pub unspecified: usize,
    pub total: usize,
    /// Counts come from manual annotations only.
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyReport {
    pub schema_version: u32,
    pub rows: Vec<TallyRow>,
    pub total: usize,
}

impl TallyReport {
    pub fn count(&self, c: ErrorCategory) -> usize {
        self.rows.iter().find(|r| r.category == c).map_or(0, |r| r.total)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let w = ErrorCategory::ALL.iter().map(|c| c.as_str().len()).max().unwrap_or(8);
        let _ = writeln!(s, "{:<6}  {:<w$}  {:>5}  {:>5}  {:>5}  {:>5}", "group", "category", "touch", "voice", "n/a", "total");
        for r in &self.rows {
            let group = format!("{:?}", r.group).to_lowercase();
            let mark = if r.annotated { "  (annotated)" } else { "" };
            let _ = writeln!(
                s,
                "{:<6}  {:<w$}  {:>5}  {:>5}  {:>5}  {:>5}{mark}",
                group,
                r.category.as_str(),
                r.touch,
                r.voice,
                r.unspecified,
                r.total
            );
        }
        let _ = writeln!(s, "{:<6}  {:<w$}  {:>5}  {:>5}  {:>5}  {:>5}", "", "total", self.col(|r| r.touch), self.col(|r| r.voice), self.col(|r| r.unspecified), self.total);
        s
    }

    fn col(&self, f: impl Fn(&TallyRow) -> usize) -> usize {
        self.rows.iter().map(f).sum()
    }
}

pub fn tally(records: &[ErrorRecord]) -> TallyReport {
    let rows = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let mut row = TallyRow {
                category,
                group: category.group(),
                touch: 0,
                voice: 0,
                unspecified: 0,
                total: 0,
                annotated: !category.is_automatable(),
            };
            for r in records.iter().filter(|r| r.category == category) {
                match r.modality {
                    Some(Modality::Touch) => row.touch += 1,
                    Some(Modality::Voice) => row.voice += 1,
                    None => row.unspecified += 1,
                }
                row.total += 1;
            }
            row
        })
        .collect();
    TallyReport { schema_version: ERRORS_SCHEMA_VERSION, rows, total: records.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Trace;
    use serde_json::json;

    fn rec(category: ErrorCategory) -> ErrorRecord {
        ErrorRecord { category, tick: 0, trial_id: "t".into(), modality: None, evidence: vec![0], annotated: false }
    }

    #[test]
    fn ten_categories_in_three_groups() {
        assert_eq!(ErrorCategory::ALL.len(), 10);
        let count = |g| ErrorCategory::ALL.iter().filter(|c| c.group() == g).count();
        assert_eq!((count(ErrorGroup::Social), count(ErrorGroup::Human), count(ErrorGroup::Robot)), (2, 4, 4));
        for c in ErrorCategory::ALL {
            let v = serde_json::to_value(c).unwrap();
            assert_eq!(v, c.as_str());
        }
    }

    #[test]
    fn tally_counts() {
        use ErrorCategory::*;
        let r = tally(&[rec(OperationalError), rec(OperationalError), rec(Intrusion)]);
        assert_eq!(r.count(OperationalError), 2);
        assert_eq!(r.count(Intrusion), 1);
        assert_eq!(r.total, 3);
        let empty = tally(&[]);
        assert!(empty.rows.iter().all(|r| r.total == 0));
        assert_eq!(empty.total, 0);
        assert!(empty.to_table().contains("design_flaw"));
    }

    #[test]
    fn empty_trace_has_no_errors() {
        assert!(classify_trace(&[], &DetectorParams::default()).is_empty());
    }

    #[test]
    fn far_arrival_is_operational_error() {
        let mut t = Trace::new(0, "logical");
        t.push(0, "harness", TraceKind::TrialStart, Some("f1"), json!({}));
        let seq = t.push(
            5,
            "temi",
            TraceKind::Publish,
            Some("f1"),
            json!({"topic": "robot/temi/status", "qos": 1, "payload": {"status": "arrived", "tick": 5, "waypoint": "bedside", "far_from_patient": true, "proximity_error_m": 0.9}}),
        );
        let r = classify_trace(&t.events, &DetectorParams::default());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].category, ErrorCategory::OperationalError);
        assert_eq!(r[0].evidence, vec![seq]);
    }

    #[test]
    fn safety_topic_filter() {
        assert!(is_safety_topic("ward/bed1/bedexit"));
        assert!(is_safety_topic("robot/temi/cmd"));
        assert!(!is_safety_topic("robot/arm/cmd"));
        assert!(!is_safety_topic("ward/bed1/thermal/top"));
    }
}
