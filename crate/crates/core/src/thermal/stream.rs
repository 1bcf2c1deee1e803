use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use super::render::{render_frame, RenderParams};
use super::{frame_topic, Camera, ThermalFrame};
use crate::num::Scalar;
use crate::rng::{seeded_rng, RngDomain};
use crate::scenario::{ScenarioError, ScenarioScript, Trial};
use crate::thermal::NoiseParams;

/// Renders one trial's frames tick by tick with the trial's own noise
/// stream, so trials are reproducible independently of each other.
pub struct TrialRenderer<'a, T> {
    trial: &'a Trial<T>,
    params: RenderParams<T>,
    noise: NoiseParams<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> TrialRenderer<'a, T> {
    pub fn new(
        trial: &'a Trial<T>,
        trial_index: usize,
        seed: u64,
        params: RenderParams<T>,
        noise: NoiseParams<T>,
    ) -> Self {
        TrialRenderer {
            trial,
            params,
            noise,
            rng: seeded_rng(seed, RngDomain::Thermal, trial_index as u64),
        }
    }

    /// Top then side frame for a trial-local tick, stamped with the absolute
    /// run tick.
    pub fn frames(&mut self, local_tick: u64, abs_tick: u64) -> [ThermalFrame; 2] {
        let body = self.trial.body_at(local_tick);
        Camera::BOTH.map(|camera| {
            render_frame(Some(&body), camera, abs_tick, &self.params, &self.noise, &mut self.rng)
        })
    }
}

/// Lazily rendered frames for a whole script: trials back to back, each
/// lasting its keyframe span, two frames (top, side) per tick.
pub struct FrameStream<'a, T> {
    script: &'a ScenarioScript<T>,
    params: RenderParams<T>,
    trial: usize,
    renderer: Option<TrialRenderer<'a, T>>,
    local_tick: u64,
    abs_tick: u64,
    pending: VecDeque<ThermalFrame>,
}

impl<'a, T: Scalar> Iterator for FrameStream<'a, T> {
    type Item = ThermalFrame;

    fn next(&mut self) -> Option<ThermalFrame> {
        loop {
            if let Some(f) = self.pending.pop_front() {
                return Some(f);
            }
            let trial = self.script.trials.get(self.trial)?;
            if self.local_tick >= trial.script_len() {
                self.trial += 1;
                self.local_tick = 0;
                self.renderer = None;
                continue;
            }
            let renderer = self.renderer.get_or_insert_with(|| {
                TrialRenderer::new(trial, self.trial, self.script.seed, self.params, self.script.noise)
            });
            self.pending.extend(renderer.frames(self.local_tick, self.abs_tick));
            self.local_tick += 1;
            self.abs_tick += 1;
        }
    }
}

/// Validates the script and returns its frame sequence.
pub fn script_to_stream<T: Scalar>(
    script: &ScenarioScript<T>,
    params: RenderParams<T>,
) -> Result<FrameStream<'_, T>, ScenarioError> {
    script.validate(&params.geometry)?;
    Ok(FrameStream {
        script,
        params,
        trial: 0,
        renderer: None,
        local_tick: 0,
        abs_tick: 0,
        pending: VecDeque::new(),
    })
}

/// Somewhere frames can be published; returns Err when the link is down.
pub trait FrameSink {
    type Error: std::fmt::Display;

    fn send(&mut self, topic: &str, payload: Vec<u8>) -> Result<(), Self::Error>;
}

impl FrameSink for ward_mqtt::Client {
    type Error = ward_mqtt::Error;

    fn send(&mut self, topic: &str, payload: Vec<u8>) -> Result<(), Self::Error> {
        self.publish(topic, payload, ward_mqtt::QoS::AtMostOnce)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PublishReport {
    pub published: usize,
    pub dropped: usize,
    pub buffered: usize,
}

/// QoS 0 frame publisher. While the sink is failing, up to `capacity`
/// frames are held back and the oldest is dropped beyond that.
pub struct FramePublisher {
    bed: String,
    capacity: usize,
    backlog: VecDeque<ThermalFrame>,
    report: PublishReport,
}

impl FramePublisher {
    /// One second of frames at 14 Hz.
    pub const DEFAULT_BACKLOG: usize = 14;

    pub fn new(bed: &str) -> Self {
        FramePublisher::with_capacity(bed, Self::DEFAULT_BACKLOG)
    }

    pub fn with_capacity(bed: &str, capacity: usize) -> Self {
        FramePublisher {
            bed: bed.to_string(),
            capacity,
            backlog: VecDeque::new(),
            report: PublishReport::default(),
        }
    }

    pub fn publish<S: FrameSink>(&mut self, sink: &mut S, frame: ThermalFrame) {
        self.backlog.push_back(frame);
        while let Some(f) = self.backlog.front() {
            let topic = frame_topic(&self.bed, f.camera());
            match sink.send(&topic, f.to_json()) {
                Ok(()) => {
                    self.backlog.pop_front();
                    self.report.published += 1;
                }
                Err(e) => {
                    log::debug!("frame publish failed, buffering: {e}");
                    break;
                }
            }
        }
        while self.backlog.len() > self.capacity {
            let lost = self.backlog.pop_front().expect("len checked");
            self.report.dropped += 1;
            log::warn!(
                "dropping buffered {} frame at tick {} (backlog full)",
                lost.camera().as_str(),
                lost.tick()
            );
        }
        self.report.buffered = self.backlog.len();
    }

    pub fn report(&self) -> PublishReport {
        self.report
    }
}

pub fn publish_stream<S: FrameSink>(
    frames: impl IntoIterator<Item = ThermalFrame>,
    bed: &str,
    sink: &mut S,
) -> PublishReport {
    let mut publisher = FramePublisher::new(bed);
    for f in frames {
        publisher.publish(sink, f);
    }
    publisher.report()
}
