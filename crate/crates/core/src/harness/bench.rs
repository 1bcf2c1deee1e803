//! Loopback latency benchmark of the TCP broker: one publisher, one
//! subscriber, timestamps carried in the payload.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use ward_mqtt::{BrokerServer, Client, QoS, ServerConfig};

use super::config::{BenchParams, BrokerParams};
use crate::num::percentile;

const TOPIC: &str = "bench/latency";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub payload_bytes: usize,
    pub messages: usize,
    pub samples: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub throughput_msgs_per_s: f64,
    pub budget_ms: f64,
    pub within_budget: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("broker unreachable: {0}")]
    Unreachable(ward_mqtt::Error),
    #[error("mqtt: {0}")]
    Mqtt(#[from] ward_mqtt::Error),
    #[error("payload must hold at least 8 bytes")]
    PayloadTooSmall,
    #[error("timed out waiting for message {0}")]
    Timeout(usize),
}

/// Publishes `params.messages` QoS 0 messages through the broker at `addr`
/// and measures publish-to-receive time. At most `params.window` messages
/// are in flight at once.
pub fn bench_latency(addr: std::net::SocketAddr, params: &BenchParams) -> Result<BenchReport, BenchError> {
    if params.payload_bytes < 8 {
        return Err(BenchError::PayloadTooSmall);
    }
    let sub = Client::connect(addr, "bench-sub").map_err(BenchError::Unreachable)?;
    sub.subscribe(&[(TOPIC, QoS::AtMostOnce)])?;
    let publisher = Client::connect(addr, "bench-pub").map_err(BenchError::Unreachable)?;
    let origin = Instant::now();
    let mut samples = Vec::with_capacity(params.messages);
    let mut payload = vec![0u8; params.payload_bytes];
    let mut sent = 0;
    while samples.len() < params.messages {
        while sent < params.messages && sent - samples.len() < params.window {
            let nanos = origin.elapsed().as_nanos() as u64;
            payload[..8].copy_from_slice(&nanos.to_le_bytes());
            publisher.publish(TOPIC, payload.clone(), QoS::AtMostOnce)?;
            sent += 1;
        }
        let msg = sub.recv_timeout(Duration::from_secs(5)).ok_or(BenchError::Timeout(samples.len()))?;
        let stamp = u64::from_le_bytes(msg.payload[..8].try_into().expect("8 bytes"));
        let now = origin.elapsed().as_nanos() as u64;
        samples.push(now.saturating_sub(stamp));
    }
    let wall = origin.elapsed().as_secs_f64();
    let _ = publisher.disconnect();
    let _ = sub.disconnect();
    Ok(report(samples, params, wall))
}

fn report(mut samples_ns: Vec<u64>, params: &BenchParams, wall_s: f64) -> BenchReport {
    samples_ns.sort_unstable();
    let ms = |ns: Option<u64>| ns.unwrap_or(0) as f64 / 1e6;
    let p99 = ms(percentile(&samples_ns, 99.0));
    BenchReport {
        payload_bytes: params.payload_bytes,
        messages: params.messages,
        samples: samples_ns.len(),
        p50_ms: ms(percentile(&samples_ns, 50.0)),
        p99_ms: p99,
        max_ms: ms(samples_ns.last().copied()),
        throughput_msgs_per_s: if wall_s > 0.0 { samples_ns.len() as f64 / wall_s } else { 0.0 },
        budget_ms: params.budget_ms,
        within_budget: p99 < params.budget_ms,
    }
}

/// Starts a loopback broker, runs the benchmark against it and stops it.
pub fn bench_loopback(broker: &BrokerParams, params: &BenchParams) -> Result<BenchReport, BenchError> {
    let config = ServerConfig { broker: broker.broker_config(), codec: broker.codec() };
    let server = BrokerServer::bind("127.0.0.1:0", config)?;
    let result = bench_latency(server.local_addr(), params);
    server.shutdown();
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_message_one_sample() {
        let params = BenchParams { messages: 1, ..Default::default() };
        let r = bench_loopback(&BrokerParams::default(), &params).unwrap();
        assert_eq!(r.samples, 1);
        assert_eq!(r.p50_ms, r.p99_ms);
    }

    #[test]
    fn percentiles_are_ordered() {
        let r = report(vec![5, 1, 9, 3, 7], &BenchParams::default(), 1.0);
        assert!(r.p50_ms <= r.p99_ms && r.p99_ms <= r.max_ms);
        assert_eq!(r.samples, 5);
    }

    #[test]
    fn unreachable_broker_is_reported() {
        let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let err = bench_latency(addr, &BenchParams { messages: 1, ..Default::default() }).unwrap_err();
        assert!(matches!(err, BenchError::Unreachable(_)));
    }
}
