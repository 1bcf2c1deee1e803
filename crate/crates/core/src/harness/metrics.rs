//! Bed-exit scoring, modality counts and phase latencies computed from a
//! trace and the scenario it was run from.
//!
//! A scored trial is positive when at least one bed-exit event was
//! published during it. Genuine exits are ground-truth positives; tricks
//! and null-lying trials are negatives; fetch trials are not scored.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::bench::BenchReport;
use crate::num::{percentile, Scalar};
use crate::orchestrator::{Modality, Phase};
use crate::predictor::ExitLabel;
use crate::scenario::{ScenarioScript, TrialKind};
use crate::thermal::Posture;
use crate::trace::{Trace, TraceEvent, TraceKind};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl Outcome {
    pub fn of(truth: bool, predicted: bool) -> Self {
        match (truth, predicted) {
            (true, true) => Outcome::Tp,
            (false, true) => Outcome::Fp,
            (false, false) => Outcome::Tn,
            (true, false) => Outcome::Fn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub kind: TrialKind,
    /// `None` for trials that are not scored.
    pub outcome: Option<Outcome>,
    pub events: usize,
    /// Trial-local tick of the first bed-exit event.
    pub first_event_tick: Option<u64>,
    pub out_of_bed_tick: Option<u64>,
    /// Ticks between the first event and leaving the bed.
    pub lead_ticks: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// (TP + TN) / total; 0 with no trials.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// TP / (TP + FN); 0 with no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityCounts {
    pub touch: usize,
    pub voice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLatency {
    pub phase: Phase,
    pub count: usize,
    pub mean_ticks: f64,
    pub p50_ticks: u64,
    pub max_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub trials: Vec<TrialOutcome>,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub recall: f64,
    pub false_alarms: usize,
    pub missed_exits: usize,
    pub min_lead_ticks: Option<i64>,
    /// Share of scored frames whose live label matched the posture ground
    /// truth (legs over the edge or standing counts as exiting).
    pub frame_accuracy: Option<f64>,
    pub frames_scored: usize,
    pub modality: ModalityCounts,
    /// Time spent in each orchestrator phase, from entry to exit.
    pub phase_latencies: Vec<PhaseLatency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialization is infallible")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("trace trial {0:?} does not exist in the scenario")]
    UnknownTrial(String),
}

#[derive(Default)]
struct TrialTrace {
    start: u64,
    events: Vec<u64>,
    /// (frame tick, label) at every label change.
    labels: Vec<(u64, ExitLabel)>,
    ticks: Option<u64>,
}

fn payload_str<'a>(e: &'a TraceEvent, k: &str) -> Option<&'a str> {
    e.payload.get(k).and_then(Value::as_str)
}

pub fn compute_metrics<T: Scalar>(trace: &Trace, script: &ScenarioScript<T>) -> Result<MetricsReport, MetricsError> {
    let bedexit = super::world::bedexit_topic(&script.bed);
    let mut order: Vec<String> = vec![];
    let mut trials: BTreeMap<String, TrialTrace> = BTreeMap::new();
    let mut modality = ModalityCounts::default();
    let mut dwell: BTreeMap<Phase, Vec<u64>> = BTreeMap::new();
    let mut entered: Option<(Phase, u64)> = None;

    for e in &trace.events {
        let Some(id) = e.trial.as_deref() else { continue };
        if !trials.contains_key(id) {
            if script.trial(id).is_none() {
                return Err(MetricsError::UnknownTrial(id.to_string()));
            }
            order.push(id.to_string());
            trials.insert(id.to_string(), TrialTrace { start: e.tick, ..Default::default() });
        }
        let t = trials.get_mut(id).expect("inserted above");
        match e.kind {
            TraceKind::TrialStart => {
                t.start = e.tick;
                entered = None;
            }
            TraceKind::TrialEnd => t.ticks = e.payload.get("ticks").and_then(Value::as_u64),
            TraceKind::Publish if payload_str(e, "topic") == Some(bedexit.as_str()) => {
                t.events.push(e.tick - t.start);
            }
            TraceKind::Prediction => {
                let label = serde_json::from_value(e.payload["label"].clone()).unwrap_or(ExitLabel::NoExit);
                let at = e.payload.get("frame_tick").and_then(Value::as_u64).unwrap_or(e.tick);
                t.labels.push((at.saturating_sub(t.start), label));
            }
            TraceKind::PatientAction if payload_str(e, "outcome") == Some("accepted") => {
                match payload_str(e, "modality") {
                    Some("touch") => modality.touch += 1,
                    Some("voice") => modality.voice += 1,
                    _ => {}
                }
            }
            TraceKind::StateTransition => {
                let to: Option<Phase> = serde_json::from_value(e.payload["to"].clone()).ok();
                if let Some((p, since)) = entered {
                    dwell.entry(p).or_default().push(e.tick - since);
                }
                entered = to.map(|p| (p, e.tick));
            }
            _ => {}
        }
    }

    let mut confusion = Confusion::default();
    let mut outcomes = vec![];
    let (mut frames_ok, mut frames_scored) = (0usize, 0usize);
    for id in &order {
        let t = &trials[id];
        let trial = script.trial(id).expect("checked above");
        let first = t.events.first().copied();
        let out_of_bed = trial.first_tick_with(Posture::OutOfBed);
        let outcome = trial.kind.is_exit().map(|truth| Outcome::of(truth, first.is_some()));
        if let Some(o) = outcome {
            confusion.add(o);
            let frames = t.ticks.unwrap_or(trial.script_len()).min(trial.script_len());
            for f in 0..frames {
                let live = t.labels.iter().rev().find(|(at, _)| *at <= f).map_or(ExitLabel::NoExit, |(_, l)| *l);
                let posture = trial.body_at(f).posture;
                let truth = matches!(posture, Posture::LegsOverEdge | Posture::Standing);
                frames_ok += usize::from(truth == (live == ExitLabel::ExitImminent));
                frames_scored += 1;
            }
        }
        let lead = match (first, out_of_bed, outcome) {
            (Some(f), Some(o), Some(Outcome::Tp)) => Some(o as i64 - f as i64),
            _ => None,
        };
        outcomes.push(TrialOutcome {
            trial_id: id.clone(),
            kind: trial.kind,
            outcome,
            events: t.events.len(),
            first_event_tick: first,
            out_of_bed_tick: out_of_bed,
            lead_ticks: lead,
        });
    }

    let phase_latencies = dwell
        .into_iter()
        .map(|(phase, mut v)| {
            v.sort_unstable();
            PhaseLatency {
                phase,
                count: v.len(),
                mean_ticks: v.iter().sum::<u64>() as f64 / v.len() as f64,
                p50_ticks: percentile(&v, 50.0).unwrap_or(0),
                max_ticks: *v.last().unwrap_or(&0),
            }
        })
        .collect();

    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        min_lead_ticks: outcomes.iter().filter_map(|o| o.lead_ticks).min(),
        trials: outcomes,
        accuracy: confusion.accuracy(),
        recall: confusion.recall(),
        false_alarms: confusion.fp,
        missed_exits: confusion.fn_,
        confusion,
        frame_accuracy: (frames_scored > 0).then(|| frames_ok as f64 / frames_scored as f64),
        frames_scored,
        modality,
        phase_latencies,
        bench: None,
    })
}

/// Counts requests by modality straight from a scenario, for comparison
/// with what a run captured.
pub fn scripted_modalities<T>(script: &ScenarioScript<T>) -> ModalityCounts {
    let mut m = ModalityCounts::default();
    for a in script.trials.iter().flat_map(|t| &t.patient_actions) {
        match a.action.modality() {
            Some(Modality::Touch) => m.touch += 1,
            Some(Modality::Voice) => m.voice += 1,
            None => {}
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_gives_zero_report() {
        let script = ScenarioScript::<f64>::new(0, vec![]);
        let r = compute_metrics(&Trace::new(0, "logical"), &script).unwrap();
        assert!(r.trials.is_empty());
        assert_eq!(r.confusion, Confusion::default());
        assert_eq!((r.accuracy, r.recall), (0.0, 0.0));
        assert_eq!(r.modality, ModalityCounts::default());
        assert_eq!(r.frame_accuracy, None);
    }

    #[test]
    fn unknown_trial_is_named() {
        let script = ScenarioScript::<f64>::new(0, vec![]);
        let mut t = Trace::new(0, "logical");
        t.push(0, "harness", TraceKind::TrialStart, Some("ghost"), serde_json::json!({}));
        let err = compute_metrics(&t, &script).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn confusion_arithmetic() {
        let mut c = Confusion::default();
        for _ in 0..10 {
            c.add(Outcome::Tp);
        }
        for _ in 0..4 {
            c.add(Outcome::Fp);
        }
        c.add(Outcome::Tn);
        assert_eq!(c.total(), 15);
        assert_eq!(c.accuracy(), 11.0 / 15.0);
        assert_eq!(c.recall(), 1.0);
    }
}
