//! Deterministic in-memory runner: one thread, one broker, one tick loop.

use std::collections::VecDeque;

use ward_mqtt::{Broker, Delivery, Publish, QoS, TopicFilter, TopicName};

use super::config::SimConfig;
use super::world::{subscriptions, Outgoing, RunError, Transport, Ward, CLIENTS};
use crate::num::Scalar;
use crate::scenario::ScenarioScript;
use crate::trace::Trace;

/// In-memory transport. Deliveries are handled in FIFO order; a node's
/// response is routed before later deliveries of the same stage.
pub struct MemoryBus {
    broker: Broker,
    max_payload: usize,
    queue: VecDeque<Delivery>,
    next_id: u16,
}

impl MemoryBus {
    pub fn new(broker: Broker, max_payload: usize) -> Self {
        MemoryBus { broker, max_payload, queue: VecDeque::new(), next_id: 0 }
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    fn packet_id(&mut self) -> u16 {
        self.next_id = self.next_id % u16::MAX + 1;
        self.next_id
    }
}

impl<T: Scalar> Transport<T> for MemoryBus {
    fn reset(&mut self, ward: &Ward<T>) -> Result<(), RunError> {
        self.queue.clear();
        for c in CLIENTS {
            self.broker.connect(c);
        }
        for (i, (client, filters)) in subscriptions(ward.bed()).into_iter().enumerate() {
            let filters = filters
                .into_iter()
                .map(|(f, q)| Ok((TopicFilter::new(f)?, q)))
                .collect::<Result<Vec<_>, ward_mqtt::Error>>()?;
            self.broker.subscribe(client, i as u16 + 1, &filters)?;
        }
        Ok(())
    }

    fn disconnect(&mut self, client: &str) -> Result<(), RunError> {
        self.broker.disconnect(client);
        self.queue.retain(|d| d.client_id != client);
        Ok(())
    }

    fn send(&mut self, ward: &mut Ward<T>, out: Outgoing, tick: u64) -> Result<(), RunError> {
        if out.payload.len() > self.max_payload {
            return Err(ward_mqtt::Error::PayloadTooLarge { len: out.payload.len(), limit: self.max_payload }.into());
        }
        ward.record_publish(&out, tick);
        let topic = TopicName::new(out.topic)?;
        let publish = match out.qos {
            QoS::AtMostOnce => Publish::qos0(topic, out.payload),
            QoS::AtLeastOnce => Publish::qos1(topic, out.payload, self.packet_id()),
        };
        self.queue.extend(self.broker.route(out.from, &publish, tick)?);
        Ok(())
    }

    fn settle(&mut self, ward: &mut Ward<T>, tick: u64) -> Result<(), RunError> {
        while let Some(d) = self.queue.pop_front() {
            let Some(replies) = ward.deliver(&d.client_id, &d.publish, tick)? else { continue };
            if let Some(id) = d.publish.packet_id {
                self.broker.puback(&d.client_id, id);
            }
            for o in replies {
                <Self as Transport<T>>::send(self, ward, o, tick)?;
            }
        }
        Ok(())
    }

    fn retry(&mut self, ward: &mut Ward<T>, tick: u64) -> Result<(), RunError> {
        let outcome = self.broker.qos1_tick(tick);
        for d in outcome.dropped {
            ward.record_dropped(&d.client_id, &d.publish, d.retries, tick);
        }
        for d in outcome.retransmissions {
            ward.record_retransmit(&d.client_id, &d.publish, tick);
            self.queue.push_back(d);
        }
        Ok(())
    }

    fn pending(&self) -> usize {
        self.broker.pending_count()
    }
}

/// Runs every trial of a script back to back on a logical clock and
/// returns the trace.
pub fn run_logical<T: Scalar>(script: &ScenarioScript<T>, cfg: &SimConfig<T>) -> Result<Trace, RunError> {
    cfg.validate()?;
    script.validate(&cfg.render.geometry)?;
    let mut ward = Ward::for_script(cfg, script, "logical");
    let mut bus = MemoryBus::new(Broker::new(cfg.broker.broker_config()), cfg.broker.max_payload);
    let mut tick = 0;
    for (index, trial) in script.trials.iter().enumerate() {
        ward.begin_trial(index, trial.clone(), tick, false);
        Transport::<T>::reset(&mut bus, &ward)?;
        loop {
            ward.tick(&mut bus, tick)?;
            let done = ward.end_check(tick, Transport::<T>::pending(&bus))?;
            tick += 1;
            if done {
                break;
            }
        }
    }
    Ok(ward.trace)
}
