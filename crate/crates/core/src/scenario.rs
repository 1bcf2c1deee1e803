//! Scenario files: scripted trials with body keyframes, patient actions,
//! injected faults and manual error annotations.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::orchestrator::Modality;
use crate::taxonomy::ErrorCategory;
use crate::thermal::{BedGeometry, BodyState, NoiseParams, Posture};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    GenuineExit,
    Trick,
    NullLying,
    FetchInteraction,
}

impl TrialKind {
    /// Ground-truth label for bed-exit scoring; `None` for trials that are
    /// not scored.
    pub fn is_exit(self) -> Option<bool> {
        match self {
            TrialKind::GenuineExit => Some(true),
            TrialKind::Trick | TrialKind::NullLying => Some(false),
            TrialKind::FetchInteraction => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Keyframe<T> {
    pub tick: u64,
    pub body: BodyState<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PatientAction {
    /// An item request. Touch requests name the pressed button in `item`;
    /// voice requests carry the utterance in `text`.
    Request {
        modality: Modality,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        item: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        /// What the simulated patient actually wants; ground truth for
        /// misunderstanding detection.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intended_item: Option<String>,
    },
    TakeItem,
}

impl PatientAction {
    pub fn touch(item: &str) -> Self {
        PatientAction::Request {
            modality: Modality::Touch,
            item: Some(item.to_string()),
            text: None,
            intended_item: Some(item.to_string()),
        }
    }

    pub fn voice(text: &str, intended: Option<&str>) -> Self {
        PatientAction::Request {
            modality: Modality::Voice,
            item: None,
            text: Some(text.to_string()),
            intended_item: intended.map(str::to_string),
        }
    }

    pub fn modality(&self) -> Option<Modality> {
        match self {
            PatientAction::Request { modality, .. } => Some(*modality),
            PatientAction::TakeItem => None,
        }
    }
}

/// What a scheduled action's tick is counted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    TrialStart,
    /// The robot's item prompt appearing on screen.
    Prompt,
    /// The orchestrator entering DELIVERED.
    Delivered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub tick: u64,
    #[serde(default)]
    pub after: Anchor,
    #[serde(flatten)]
    pub action: PatientAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Temi,
    Arm,
}

impl AgentId {
    pub fn client_id(self) -> &'static str {
        match self {
            AgentId::Temi => "temi",
            AgentId::Arm => "arm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crash {
    pub agent: AgentId,
    pub at_tick: u64,
}

/// Deliveries to `client` are lost while the trial tick is in
/// `[from_tick, to_tick)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkOutage {
    pub client: String,
    pub from_tick: u64,
    pub to_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Faults<T> {
    /// Fixed stop-short distance for patient-facing arrivals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proximity_error_m: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm_failure_prob: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash: Option<Crash>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_outage: Option<LinkOutage>,
}

impl<T> Default for Faults<T> {
    fn default() -> Self {
        Faults { proximity_error_m: None, arm_failure_prob: None, crash: None, link_outage: None }
    }
}

impl<T> Faults<T> {
    pub fn is_empty(&self) -> bool {
        self.proximity_error_m.is_none()
            && self.arm_failure_prob.is_none()
            && self.crash.is_none()
            && self.link_outage.is_none()
    }
}

/// A manually logged error for categories that need human judgement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub category: ErrorCategory,
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Trial<T> {
    pub id: String,
    pub kind: TrialKind,
    pub keyframes: Vec<Keyframe<T>>,
    #[serde(default)]
    pub patient_actions: Vec<ScheduledAction>,
    #[serde(default = "Faults::default", skip_serializing_if = "Faults::is_empty")]
    pub faults: Faults<T>,
    /// Categories this trial is constructed to trigger, for detector checks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected_errors: Vec<ErrorCategory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<Annotation>,
}

impl<T: Scalar> Trial<T> {
    pub fn new(id: impl Into<String>, kind: TrialKind, keyframes: Vec<Keyframe<T>>) -> Self {
        Trial {
            id: id.into(),
            kind,
            keyframes,
            patient_actions: vec![],
            faults: Faults::default(),
            expected_errors: vec![],
            annotations: vec![],
        }
    }

    /// Ticks covered by the body script (last keyframe inclusive).
    pub fn script_len(&self) -> u64 {
        self.keyframes.last().map_or(0, |k| k.tick + 1)
    }

    /// Body at a trial-local tick: linear between keyframes, held after the
    /// last one.
    pub fn body_at(&self, tick: u64) -> BodyState<T> {
        let idx = self.keyframes.partition_point(|k| k.tick <= tick);
        let prev = &self.keyframes[idx.saturating_sub(1)];
        match self.keyframes.get(idx) {
            Some(next) if idx > 0 => {
                let span = T::of((next.tick - prev.tick) as f64);
                let t = T::of((tick - prev.tick) as f64) / span;
                prev.body.lerp(&next.body, t)
            }
            _ => prev.body,
        }
    }

    pub fn first_tick_with(&self, posture: Posture) -> Option<u64> {
        self.keyframes.iter().find(|k| k.body.posture == posture).map(|k| k.tick)
    }

    pub fn validate(&self, index: usize, geometry: &BedGeometry<T>) -> Result<(), ScenarioError> {
        let fail = |reason: String| ScenarioError::Trial { index, id: self.id.clone(), reason };
        let first = self.keyframes.first().ok_or_else(|| fail("no keyframes".into()))?;
        if first.tick != 0 {
            return Err(fail(format!("first keyframe at tick {}, expected 0", first.tick)));
        }
        for pair in self.keyframes.windows(2) {
            if pair[1].tick <= pair[0].tick {
                return Err(fail(format!(
                    "keyframe ticks not strictly increasing ({} then {})",
                    pair[0].tick, pair[1].tick
                )));
            }
        }
        for k in &self.keyframes {
            let (x, y) = k.body.centroid;
            if !(x.is_finite() && y.is_finite()) {
                return Err(fail(format!("non-finite centroid at tick {}", k.tick)));
            }
            if k.body.posture == Posture::OutOfBed && geometry.contains(k.body.centroid) {
                return Err(fail(format!("OUT_OF_BED centroid inside the bed at tick {}", k.tick)));
            }
        }
        for a in &self.patient_actions {
            if let PatientAction::Request { modality, item, text, .. } = &a.action {
                let ok = match modality {
                    Modality::Touch => item.as_deref().is_some_and(|s| !s.is_empty()),
                    Modality::Voice => {
                        text.as_deref().or(item.as_deref()).is_some_and(|s| !s.is_empty())
                    }
                };
                if !ok {
                    return Err(fail(format!("request at tick {} has no item or text", a.tick)));
                }
            }
        }
        if let Some(p) = self.faults.arm_failure_prob {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(fail("arm_failure_prob outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ScenarioScript<T> {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_bed")]
    pub bed: String,
    #[serde(default = "NoiseParams::default")]
    pub noise: NoiseParams<T>,
    pub trials: Vec<Trial<T>>,
}

fn default_bed() -> String {
    "bed1".to_string()
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("trial {index} ({id}): {reason}")]
    Trial { index: usize, id: String, reason: String },
    #[error("unsupported scenario schema_version {0}")]
    SchemaVersion(u32),
    #[error("duplicate trial id {0:?}")]
    DuplicateId(String),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl<T: Scalar> ScenarioScript<T> {
    pub fn new(seed: u64, trials: Vec<Trial<T>>) -> Self {
        ScenarioScript {
            schema_version: SCENARIO_SCHEMA_VERSION,
            seed,
            bed: default_bed(),
            noise: NoiseParams::default(),
            trials,
        }
    }

    pub fn validate(&self, geometry: &BedGeometry<T>) -> Result<(), ScenarioError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion(self.schema_version));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, trial) in self.trials.iter().enumerate() {
            if !seen.insert(trial.id.as_str()) {
                return Err(ScenarioError::DuplicateId(trial.id.clone()));
            }
            trial.validate(i, geometry)?;
        }
        Ok(())
    }

    pub fn trial(&self, id: &str) -> Option<&Trial<T>> {
        self.trials.iter().find(|t| t.id == id)
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> ScenarioScript<T> {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
