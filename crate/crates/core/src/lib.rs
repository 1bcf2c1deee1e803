//! Deterministic simulation of an IoRT hospital ward: a thermal bed-exit
//! predictor and a two-robot fetch service coordinated over MQTT.
//!
//! The numeric core is generic over [`num::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod agents;
pub mod harness;
pub mod num;
pub mod orchestrator;
pub mod predictor;
pub mod rng;
pub mod scenario;
pub mod taxonomy;
pub mod thermal;
pub mod trace;

pub type BodyState = thermal::BodyState<f64>;
pub type BedGeometry = thermal::BedGeometry<f64>;
pub type NoiseParams = thermal::NoiseParams<f64>;
pub type RenderParams = thermal::RenderParams<f64>;
pub type PredictorParams = predictor::PredictorParams<f64>;
pub type BedExitPipeline = predictor::BedExitPipeline<f64>;
pub type FeatureVector = predictor::FeatureVector<f64>;
pub type ScenarioScript = scenario::ScenarioScript<f64>;
pub type Trial = scenario::Trial<f64>;
pub type WaypointGraph = agents::WaypointGraph<f64>;
pub type TemiAgent = agents::TemiAgent<f64>;
pub type ArmAgent = agents::ArmAgent<f64>;
pub type SimConfig = harness::SimConfig<f64>;
