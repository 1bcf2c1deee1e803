//! A minimal MQTT 3.1.1 stack: binary codec, wildcard topic matching, a
//! tick-driven broker with QoS 0/1 redelivery, and a blocking TCP transport.
//!
//! Supported: CONNECT, CONNACK, PUBLISH (QoS 0/1), PUBACK, SUBSCRIBE,
//! SUBACK, PINGREQ, PINGRESP, DISCONNECT. Retained messages, wills, QoS 2
//! and persistent sessions are not.

pub mod broker;
pub mod codec;
pub mod net;
pub mod topic;

pub use broker::{Broker, BrokerConfig, BrokerStats, Delivery, DroppedMessage, RetryOutcome};
pub use codec::{decode_packet, encode_packet, Codec, Decoded, Packet, Publish, QoS};
pub use net::{BrokerServer, Client, ServerConfig};
pub use topic::{topic_matches, TopicFilter, TopicName};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error("invalid packet: {0}")]
    InvalidPacket(String),
    #[error("payload of {len} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { len: usize, limit: usize },
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("unknown client {0:?}")]
    UnknownClient(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
