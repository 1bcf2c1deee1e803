//! Pre-emptive bed-exit prediction from the two thermal streams:
//! segmentation, per-tick features, a transparent two-condition classifier
//! and a debouncer that turns labels into events.

mod classify;
mod debounce;
mod features;
mod segment;

pub use classify::{classify, ExitLabel, ExitPrediction};
pub use debounce::{debounce_and_emit, Debouncer};
pub use features::{extract_features, FeatureVector, FramePair};
pub use segment::{segment_body, Blob, BlobSet};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::thermal::{Camera, PixelRegion, ThermalFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PredictorParams<T> {
    pub temp_threshold_deci_c: u16,
    pub min_blob_px: u32,
    /// Frames in the velocity regression window.
    pub window: usize,
    pub debounce_k: u32,
    pub rearm_r: u32,
    pub d_edge_px: T,
    pub v_min_px_per_tick: T,
    pub theta: T,
    /// Logistic gain of the edge-proximity condition, per pixel.
    pub edge_gain: T,
    /// Logistic gain of the outward-motion condition, per px/tick.
    pub velocity_gain: T,
}

impl<T: Scalar> Default for PredictorParams<T> {
    fn default() -> Self {
        PredictorParams {
            temp_threshold_deci_c: 300,
            min_blob_px: 6,
            window: 7,
            debounce_k: 5,
            rearm_r: 14,
            d_edge_px: T::of(3.0),
            v_min_px_per_tick: T::of(0.3),
            theta: T::of(0.5),
            edge_gain: T::of(2.0),
            velocity_gain: T::of(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BedExitEvent<T> {
    pub tick: u64,
    pub score: T,
}

impl<T: Scalar> BedExitEvent<T> {
    /// `{"tick": n, "score": s, "label": "exit_imminent"}`
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({
            "tick": self.tick,
            "score": self.score.to_f64_lossy(),
            "label": ExitLabel::ExitImminent,
        }))
        .expect("event serialization is infallible")
    }
}

/// Output for one completed tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput<T> {
    pub features: FeatureVector<T>,
    pub prediction: ExitPrediction<T>,
    pub event: Option<BedExitEvent<T>>,
}

/// Per-bed streaming pipeline. Frames arrive per camera; a tick is
/// evaluated once both cameras reported, or when a later tick shows up
/// (a missing camera then counts as no body seen).
pub struct BedExitPipeline<T> {
    params: PredictorParams<T>,
    bed: PixelRegion,
    history: VecDeque<FramePair<T>>,
    pending: Option<(u64, Option<BlobSet<T>>, Option<BlobSet<T>>)>,
    debouncer: Debouncer,
}

impl<T: Scalar> BedExitPipeline<T> {
    pub fn new(params: PredictorParams<T>, bed: PixelRegion) -> Self {
        BedExitPipeline {
            debouncer: Debouncer::new(params.debounce_k, params.rearm_r),
            params,
            bed,
            history: VecDeque::with_capacity(params.window + 1),
            pending: None,
        }
    }

    pub fn params(&self) -> &PredictorParams<T> {
        &self.params
    }

    /// Feeds one frame; returns outputs for every tick completed by it.
    pub fn push(&mut self, frame: &ThermalFrame) -> Vec<TickOutput<T>> {
        let blobs = segment_body(frame, self.params.temp_threshold_deci_c, self.params.min_blob_px);
        let mut out = Vec::new();
        if let Some((tick, _, _)) = &self.pending {
            if *tick != frame.tick() {
                out.extend(self.flush());
            }
        }
        let slot = self.pending.get_or_insert((frame.tick(), None, None));
        match frame.camera() {
            Camera::Top => slot.1 = Some(blobs),
            Camera::Side => slot.2 = Some(blobs),
        }
        if slot.1.is_some() && slot.2.is_some() {
            out.extend(self.flush());
        }
        out
    }

    /// Evaluates a partially filled tick, if any.
    pub fn flush(&mut self) -> Option<TickOutput<T>> {
        let (tick, top, side) = self.pending.take()?;
        let pair = FramePair { tick, top: top.unwrap_or_default(), side: side.unwrap_or_default() };
        if self.history.len() == self.params.window.max(1) {
            self.history.pop_front();
        }
        self.history.push_back(pair);
        let history = self.history.make_contiguous();
        let features = extract_features(history, self.params.window, &self.bed);
        let prediction = classify(tick, &features, &self.params);
        let event = self
            .debouncer
            .push(prediction.label)
            .then_some(BedExitEvent { tick, score: prediction.score });
        Some(TickOutput { features, prediction, event })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::{render_frame, BedGeometry, BodyState, NoiseParams, Posture, RenderParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_bed_never_fires() {
        let mut p = BedExitPipeline::<f64>::new(PredictorParams::default(), BedGeometry::<f64>::default().region);
        for t in 0..50 {
            for cam in Camera::BOTH {
                for out in p.push(&ThermalFrame::uniform(t, cam, 220)) {
                    assert_eq!(out.features.total_area_px, 0);
                    assert_eq!(out.prediction.label, ExitLabel::NoExit);
                    assert!(out.event.is_none());
                }
            }
        }
    }

    #[test]
    fn missing_side_frame_is_flushed_by_next_tick() {
        let mut p = BedExitPipeline::<f64>::new(PredictorParams::default(), BedGeometry::<f64>::default().region);
        assert!(p.push(&ThermalFrame::uniform(0, Camera::Top, 220)).is_empty());
        let out = p.push(&ThermalFrame::uniform(1, Camera::Top, 220));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].prediction.tick, 0);
    }

    #[test]
    fn body_sliding_off_the_edge_fires_before_leaving() {
        let params = RenderParams::<f64>::default();
        let noise = NoiseParams { ambient_deci_c: 220.0, sigma_deci_c: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = BedExitPipeline::<f64>::new(PredictorParams::default(), params.geometry.region);
        let mut fired = None;
        // 0.03 m/tick (0.4 px/tick) across the width, starting mid-bed
        for t in 0..30u64 {
            let y = 0.45 + 0.03 * t as f64;
            let body = BodyState::new(1.0, y, Posture::LegsOverEdge);
            for cam in Camera::BOTH {
                let f = render_frame(Some(&body), cam, t, &params, &noise, &mut rng);
                for out in p.push(&f) {
                    if out.event.is_some() && fired.is_none() {
                        fired = Some(out.prediction.tick);
                    }
                }
            }
        }
        let fired = fired.expect("event fired");
        // y passes the 0.9 m edge at t = 15
        assert!(fired < 15, "fired at {fired}");
    }

    #[test]
    fn event_payload_schema() {
        let e = BedExitEvent { tick: 12, score: 0.75f64 };
        let v: serde_json::Value = serde_json::from_slice(&e.to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"tick": 12, "score": 0.75, "label": "exit_imminent"}));
    }
}
