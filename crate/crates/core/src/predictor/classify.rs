use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::PredictorParams;
use crate::num::{logistic, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitLabel {
    NoExit,
    ExitImminent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitPrediction<T> {
    pub tick: u64,
    pub score: T,
    pub label: ExitLabel,
}

/// Two-condition rule expressed as a score: each condition is a logistic
/// centered on its threshold and the score is the weaker of the two, so
/// with theta = 0.5 the label is exit_imminent exactly when the body is
/// within `d_edge_px` of an edge and moving outward at `v_min` or faster.
pub fn classify<T: Scalar>(tick: u64, fv: &FeatureVector<T>, params: &PredictorParams<T>) -> ExitPrediction<T> {
    let (Some(edge), Some(velocity)) = (fv.edge_distance_px, fv.outward_velocity_px_per_tick) else {
        return ExitPrediction { tick, score: T::zero(), label: ExitLabel::NoExit };
    };
    if !fv.is_valid() {
        return ExitPrediction { tick, score: T::zero(), label: ExitLabel::NoExit };
    }
    let proximity = logistic(params.edge_gain * (params.d_edge_px - edge));
    let motion = logistic(params.velocity_gain * (velocity - params.v_min_px_per_tick));
    let score = proximity.min(motion);
    let label = if score >= params.theta { ExitLabel::ExitImminent } else { ExitLabel::NoExit };
    ExitPrediction { tick, score, label }
}
