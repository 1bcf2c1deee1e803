//! Synthetic two-camera thermal stream: 32x32 frames at 14 Hz rendered from
//! scripted patient body trajectories.

mod body;
mod render;
mod stream;

pub use body::{BedGeometry, BodyState, PixelRegion, Posture};
pub use render::{render_frame, NoiseParams, RenderParams};
pub use stream::{
    publish_stream, script_to_stream, FramePublisher, FrameSink, FrameStream, PublishReport,
    TrialRenderer,
};

use serde::{Deserialize, Serialize};

pub const FRAME_ROWS: usize = 32;
pub const FRAME_COLS: usize = 32;
pub const FRAME_PIXELS: usize = FRAME_ROWS * FRAME_COLS;
pub const MAX_DECI_C: u16 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    Top,
    Side,
}

impl Camera {
    pub const BOTH: [Camera; 2] = [Camera::Top, Camera::Side];

    pub fn as_str(self) -> &'static str {
        match self {
            Camera::Top => "top",
            Camera::Side => "side",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame has {0} pixels, expected {FRAME_PIXELS}")]
    PixelCount(usize),
    #[error("pixel {index} = {value} deci-C is outside [0, {MAX_DECI_C}]")]
    PixelRange { index: usize, value: u16 },
    #[error("frame json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One 32x32 temperature grid in deci-Celsius, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FrameWire", into = "FrameWire")]
pub struct ThermalFrame {
    tick: u64,
    camera: Camera,
    pixels: Vec<u16>,
}

#[derive(Serialize, Deserialize)]
struct FrameWire {
    tick: u64,
    camera: Camera,
    deci_c: Vec<u16>,
}

impl TryFrom<FrameWire> for ThermalFrame {
    type Error = FrameError;

    fn try_from(w: FrameWire) -> Result<Self, Self::Error> {
        ThermalFrame::new(w.tick, w.camera, w.deci_c)
    }
}

impl From<ThermalFrame> for FrameWire {
    fn from(f: ThermalFrame) -> Self {
        FrameWire { tick: f.tick, camera: f.camera, deci_c: f.pixels }
    }
}

impl ThermalFrame {
    pub fn new(tick: u64, camera: Camera, pixels: Vec<u16>) -> Result<Self, FrameError> {
        if pixels.len() != FRAME_PIXELS {
            return Err(FrameError::PixelCount(pixels.len()));
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &v)| v > MAX_DECI_C) {
            return Err(FrameError::PixelRange { index, value });
        }
        Ok(ThermalFrame { tick, camera, pixels })
    }

    pub fn uniform(tick: u64, camera: Camera, deci_c: u16) -> Self {
        ThermalFrame::new(tick, camera, vec![deci_c.min(MAX_DECI_C); FRAME_PIXELS])
            .expect("uniform frame is valid")
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn camera(&self) -> Camera {
        self.camera
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * FRAME_COLS + col]
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("frame serialization is infallible")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, FrameError> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

pub fn frame_topic(bed: &str, camera: Camera) -> String {
    format!("ward/{bed}/thermal/{}", camera.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_schema_round_trip() {
        let mut pixels = vec![220u16; FRAME_PIXELS];
        pixels[5] = 365;
        let f = ThermalFrame::new(42, Camera::Side, pixels).unwrap();
        let json = f.to_json();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["tick"], 42);
        assert_eq!(v["camera"], "side");
        assert_eq!(v["deci_c"].as_array().unwrap().len(), FRAME_PIXELS);
        assert_eq!(v["deci_c"][5], 365);
        assert_eq!(ThermalFrame::from_json(&json).unwrap(), f);
    }

    #[test]
    fn rejects_invalid_frames() {
        assert!(matches!(
            ThermalFrame::new(0, Camera::Top, vec![0; 10]),
            Err(FrameError::PixelCount(10))
        ));
        let mut p = vec![0; FRAME_PIXELS];
        p[3] = 601;
        assert!(matches!(
            ThermalFrame::new(0, Camera::Top, p),
            Err(FrameError::PixelRange { index: 3, value: 601 })
        ));
        let bad = br#"{"tick":1,"camera":"top","deci_c":[1,2,3]}"#;
        assert!(ThermalFrame::from_json(bad).is_err());
    }

    #[test]
    fn topics() {
        assert_eq!(frame_topic("bed1", Camera::Top), "ward/bed1/thermal/top");
        assert_eq!(frame_topic("bed1", Camera::Side), "ward/bed1/thermal/side");
    }
}
