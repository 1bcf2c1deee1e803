//! Transport-agnostic broker state: sessions, subscriptions and the QoS 1
//! redelivery table.
//!
//! Time is measured in integer ticks supplied by the caller, so the same
//! broker runs under a logical clock or a wall clock.

use std::collections::BTreeMap;

use crate::codec::{Packet, Publish, QoS};
use crate::topic::TopicFilter;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrokerConfig {
    /// Ticks between a QoS 1 send and its retransmission.
    pub retry_interval_ticks: u64,
    /// Retransmissions attempted before a message is dropped.
    pub retry_cap: u32,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        // 2 s at 14 ticks/s
        BrokerConfig { retry_interval_ticks: 28, retry_cap: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub client_id: String,
    pub publish: Publish,
}

/// A QoS 1 message abandoned after exhausting its retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedMessage {
    pub client_id: String,
    pub publish: Publish,
    pub retries: u32,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub publish: Publish,
    pub deadline_tick: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Session {
    subscriptions: Vec<(TopicFilter, QoS)>,
    pending_qos1: BTreeMap<u16, Pending>,
    next_packet_id: u16,
}

impl Session {
    pub fn subscriptions(&self) -> &[(TopicFilter, QoS)] {
        &self.subscriptions
    }

    pub fn pending(&self) -> &BTreeMap<u16, Pending> {
        &self.pending_qos1
    }

    fn allocate_packet_id(&mut self) -> u16 {
        loop {
            self.next_packet_id = self.next_packet_id.wrapping_add(1);
            if self.next_packet_id == 0 {
                self.next_packet_id = 1;
            }
            if !self.pending_qos1.contains_key(&self.next_packet_id) {
                return self.next_packet_id;
            }
        }
    }

    /// Highest granted QoS among matching filters, if any filter matches.
    fn match_qos(&self, publish: &Publish) -> Option<QoS> {
        self.subscriptions
            .iter()
            .filter(|(f, _)| f.matches(&publish.topic))
            .map(|(_, q)| *q)
            .max()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub published: u64,
    pub delivered: u64,
    pub retransmitted: u64,
    pub acked: u64,
    pub dropped: u64,
    pub unrouted: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetryOutcome {
    /// Retransmissions, each with DUP set and the original packet id.
    pub retransmissions: Vec<Delivery>,
    pub dropped: Vec<DroppedMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct Broker {
    config: BrokerConfig,
    sessions: BTreeMap<String, Session>,
    stats: BrokerStats,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Broker { config, sessions: BTreeMap::new(), stats: BrokerStats::default() }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn stats(&self) -> BrokerStats {
        self.stats
    }

    pub fn session(&self, client_id: &str) -> Option<&Session> {
        self.sessions.get(client_id)
    }

    pub fn is_connected(&self, client_id: &str) -> bool {
        self.sessions.contains_key(client_id)
    }

    pub fn clients(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    pub fn pending_count(&self) -> usize {
        self.sessions.values().map(|s| s.pending_qos1.len()).sum()
    }

    /// Opens a fresh session. Sessions are never persistent, so a reconnect
    /// discards the previous subscriptions and pending messages.
    pub fn connect(&mut self, client_id: &str) -> Packet {
        self.sessions.insert(client_id.to_string(), Session::default());
        Packet::Connack { return_code: 0 }
    }

    pub fn disconnect(&mut self, client_id: &str) -> bool {
        self.sessions.remove(client_id).is_some()
    }

    /// Adds filters to a session. Subscribing to an existing filter replaces
    /// its granted QoS.
    pub fn subscribe(
        &mut self,
        client_id: &str,
        packet_id: u16,
        filters: &[(TopicFilter, QoS)],
    ) -> Result<Packet, Error> {
        let session = self
            .sessions
            .get_mut(client_id)
            .ok_or_else(|| Error::UnknownClient(client_id.to_string()))?;
        let mut granted = Vec::with_capacity(filters.len());
        for (filter, qos) in filters {
            match session.subscriptions.iter_mut().find(|(f, _)| f == filter) {
                Some(existing) => existing.1 = *qos,
                None => session.subscriptions.push((filter.clone(), *qos)),
            }
            granted.push(*qos as u8);
        }
        Ok(Packet::Suback { packet_id, granted })
    }

    /// Fans a publish out to every session with a matching filter, at most
    /// once per session, at min(publish QoS, best granted QoS). QoS 1
    /// deliveries get a per-session packet id and a retry deadline.
    pub fn route(
        &mut self,
        from: &str,
        publish: &Publish,
        now_tick: u64,
    ) -> Result<Vec<Delivery>, Error> {
        if !self.sessions.contains_key(from) {
            return Err(Error::UnknownClient(from.to_string()));
        }
        self.stats.published += 1;
        let mut deliveries = Vec::new();
        for (client_id, session) in self.sessions.iter_mut() {
            let Some(granted) = session.match_qos(publish) else {
                continue;
            };
            let qos = granted.min(publish.qos);
            let mut out = Publish {
                topic: publish.topic.clone(),
                payload: publish.payload.clone(),
                qos,
                dup: false,
                packet_id: None,
            };
            if qos == QoS::AtLeastOnce {
                let id = session.allocate_packet_id();
                out.packet_id = Some(id);
                session.pending_qos1.insert(
                    id,
                    Pending {
                        publish: out.clone(),
                        deadline_tick: now_tick + self.config.retry_interval_ticks,
                        retries: 0,
                    },
                );
            }
            deliveries.push(Delivery { client_id: client_id.clone(), publish: out });
        }
        if deliveries.is_empty() {
            self.stats.unrouted += 1;
        }
        self.stats.delivered += deliveries.len() as u64;
        Ok(deliveries)
    }

    /// Clears a pending QoS 1 entry. Returns false for unknown ids.
    pub fn puback(&mut self, client_id: &str, packet_id: u16) -> bool {
        let removed = self
            .sessions
            .get_mut(client_id)
            .and_then(|s| s.pending_qos1.remove(&packet_id))
            .is_some();
        if removed {
            self.stats.acked += 1;
        }
        removed
    }

    /// Retransmits every QoS 1 entry whose deadline has passed, or drops it
    /// once `retry_cap` retransmissions went unacknowledged.
    pub fn qos1_tick(&mut self, now_tick: u64) -> RetryOutcome {
        let mut outcome = RetryOutcome::default();
        let BrokerConfig { retry_interval_ticks, retry_cap } = self.config;
        for (client_id, session) in self.sessions.iter_mut() {
            let mut expired = Vec::new();
            for (id, pending) in session.pending_qos1.iter_mut() {
                if now_tick < pending.deadline_tick {
                    continue;
                }
                if pending.retries >= retry_cap {
                    expired.push(*id);
                    continue;
                }
                pending.retries += 1;
                pending.deadline_tick = now_tick + retry_interval_ticks;
                pending.publish.dup = true;
                outcome.retransmissions.push(Delivery {
                    client_id: client_id.clone(),
                    publish: pending.publish.clone(),
                });
            }
            for id in expired {
                let pending = session.pending_qos1.remove(&id).expect("id collected above");
                log::warn!(
                    "dropping qos1 message {id} to {client_id} on {} after {} retries",
                    pending.publish.topic,
                    pending.retries
                );
                outcome.dropped.push(DroppedMessage {
                    client_id: client_id.clone(),
                    publish: pending.publish,
                    retries: pending.retries,
                    tick: now_tick,
                });
            }
        }
        self.stats.retransmitted += outcome.retransmissions.len() as u64;
        self.stats.dropped += outcome.dropped.len() as u64;
        outcome
    }

    /// Applies one inbound packet from a connected client and returns the
    /// packets to send, addressed by client id.
    pub fn handle(
        &mut self,
        client_id: &str,
        packet: Packet,
        now_tick: u64,
    ) -> Result<Vec<(String, Packet)>, Error> {
        let reply = |p: Packet| vec![(client_id.to_string(), p)];
        match packet {
            Packet::Connect { .. } => Ok(reply(self.connect(client_id))),
            Packet::Publish(publish) => {
                let mut out: Vec<(String, Packet)> = self
                    .route(client_id, &publish, now_tick)?
                    .into_iter()
                    .map(|d| (d.client_id, Packet::Publish(d.publish)))
                    .collect();
                if let Some(id) = publish.packet_id {
                    out.insert(0, (client_id.to_string(), Packet::Puback { packet_id: id }));
                }
                Ok(out)
            }
            Packet::Puback { packet_id } => {
                self.puback(client_id, packet_id);
                Ok(vec![])
            }
            Packet::Subscribe { packet_id, filters } => {
                Ok(reply(self.subscribe(client_id, packet_id, &filters)?))
            }
            Packet::Pingreq => Ok(reply(Packet::Pingresp)),
            Packet::Disconnect => {
                self.disconnect(client_id);
                Ok(vec![])
            }
            Packet::Connack { .. } | Packet::Suback { .. } | Packet::Pingresp => Err(
                Error::Protocol(format!("client {client_id} sent a server-only packet")),
            ),
        }
    }
}
