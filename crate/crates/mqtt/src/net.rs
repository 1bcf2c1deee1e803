//! Blocking TCP transport: a threaded broker server and a minimal client.
//!
//! One thread per connection plus one acceptor and one retry timer. Routing
//! happens under a single lock, so every publish sees a consistent
//! subscription table.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::broker::{Broker, BrokerConfig};
use crate::codec::{Codec, Decoded, Packet, Publish, QoS};
use crate::topic::{TopicFilter, TopicName};
use crate::Error;

/// Wall-clock ticks per second, matching the simulation tick.
pub const TICKS_PER_SECOND: u64 = 14;

#[derive(Debug, Clone, Copy, Default)]
pub struct ServerConfig {
    pub broker: BrokerConfig,
    pub codec: Codec,
}

struct Shared {
    broker: Broker,
    writers: HashMap<String, (u64, TcpStream)>,
}

impl Shared {
    fn send_all(&mut self, codec: &Codec, out: Vec<(String, Packet)>) {
        for (client, packet) in out {
            let Some((_, stream)) = self.writers.get_mut(&client) else {
                continue;
            };
            match codec.encode(&packet) {
                Ok(bytes) => {
                    if let Err(e) = stream.write_all(&bytes) {
                        log::debug!("write to {client} failed: {e}");
                    }
                }
                Err(e) => log::warn!("cannot encode packet for {client}: {e}"),
            }
        }
    }
}

/// A running broker bound to a TCP port.
pub struct BrokerServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    threads: Vec<JoinHandle<()>>,
}

fn lock(shared: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    shared.lock().unwrap_or_else(|e| e.into_inner())
}

impl BrokerServer {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<BrokerServer, Error> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Mutex::new(Shared {
            broker: Broker::new(config.broker),
            writers: HashMap::new(),
        }));
        let started = Instant::now();
        let tick_now = move || {
            (started.elapsed().as_millis() as u64 * TICKS_PER_SECOND) / 1000
        };

        let acceptor = {
            let stop = stop.clone();
            let shared = shared.clone();
            let conn_ids = Arc::new(AtomicU64::new(0));
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let shared = shared.clone();
                            let conn_id = conn_ids.fetch_add(1, Ordering::Relaxed);
                            let codec = config.codec;
                            thread::spawn(move || {
                                if let Err(e) =
                                    serve_connection(stream, conn_id, &shared, codec, tick_now)
                                {
                                    log::debug!("connection {conn_id} closed: {e}");
                                }
                            });
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            thread::sleep(Duration::from_millis(2));
                        }
                        Err(e) => {
                            log::error!("accept failed: {e}");
                            break;
                        }
                    }
                }
            })
        };

        let retrier = {
            let stop = stop.clone();
            let shared = shared.clone();
            let codec = config.codec;
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    thread::sleep(Duration::from_millis(1000 / TICKS_PER_SECOND));
                    let mut guard = lock(&shared);
                    let outcome = guard.broker.qos1_tick(tick_now());
                    let out = outcome
                        .retransmissions
                        .into_iter()
                        .map(|d| (d.client_id, Packet::Publish(d.publish)))
                        .collect();
                    guard.send_all(&codec, out);
                }
            })
        };

        Ok(BrokerServer { addr, stop, shared, threads: vec![acceptor, retrier] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> crate::broker::BrokerStats {
        lock(&self.shared).broker.stats()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for (_, (_, stream)) in lock(&self.shared).writers.drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn serve_connection(
    mut stream: TcpStream,
    conn_id: u64,
    shared: &Mutex<Shared>,
    codec: Codec,
    tick_now: impl Fn() -> u64,
) -> Result<(), Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 16 * 1024];
    let mut client_id: Option<String> = None;

    let result = (|| -> Result<(), Error> {
        loop {
            // drain every complete packet already buffered
            loop {
                let (packet, used) = match codec.decode(&buf)? {
                    Decoded::Packet(p, n) => (p, n),
                    Decoded::Incomplete => break,
                };
                buf.drain(..used);
                let mut guard = lock(shared);
                match (&client_id, packet) {
                    (None, Packet::Connect { client_id: id, .. }) => {
                        let connack = guard.broker.connect(&id);
                        guard.writers.insert(id.clone(), (conn_id, stream.try_clone()?));
                        guard.send_all(&codec, vec![(id.clone(), connack)]);
                        client_id = Some(id);
                    }
                    (None, _) => {
                        return Err(Error::Protocol("first packet must be CONNECT".into()))
                    }
                    (Some(_), Packet::Connect { .. }) => {
                        return Err(Error::Protocol("second CONNECT on a connection".into()))
                    }
                    (Some(id), Packet::Disconnect) => {
                        guard.broker.disconnect(id);
                        guard.writers.remove(id);
                        return Ok(());
                    }
                    (Some(id), packet) => {
                        let out = guard.broker.handle(id, packet, tick_now())?;
                        guard.send_all(&codec, out);
                    }
                }
            }
            let n = stream.read(&mut chunk)?;
            if n == 0 {
                return Ok(());
            }
            buf.extend_from_slice(&chunk[..n]);
        }
    })();

    if let Some(id) = client_id {
        let mut guard = lock(shared);
        // a newer connection may have taken over this client id
        if guard.writers.get(&id).is_some_and(|(c, _)| *c == conn_id) {
            guard.writers.remove(&id);
            guard.broker.disconnect(&id);
        }
    }
    result
}

/// Blocking MQTT client. A background reader thread acknowledges inbound
/// QoS 1 publishes and queues them for [`Client::recv_timeout`].
pub struct Client {
    client_id: String,
    writer: Mutex<TcpStream>,
    codec: Codec,
    inbox: Receiver<Publish>,
    control: Receiver<Packet>,
    next_packet_id: Mutex<u16>,
    reader: Option<JoinHandle<()>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, client_id: &str) -> Result<Client, Error> {
        Client::connect_with(addr, client_id, Codec::default())
    }

    pub fn connect_with(
        addr: impl ToSocketAddrs,
        client_id: &str,
        codec: Codec,
    ) -> Result<Client, Error> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let connect = Packet::Connect { client_id: client_id.to_string(), keep_alive_s: 60 };
        stream.write_all(&codec.encode(&connect)?)?;

        let (inbox_tx, inbox) = mpsc::channel();
        let (control_tx, control) = mpsc::channel();
        let read_half = stream.try_clone()?;
        let ack_half = stream.try_clone()?;
        let reader = thread::spawn(move || {
            if let Err(e) = read_loop(read_half, ack_half, codec, inbox_tx, control_tx) {
                log::debug!("client reader stopped: {e}");
            }
        });

        let client = Client {
            client_id: client_id.to_string(),
            writer: Mutex::new(stream),
            codec,
            inbox,
            control,
            next_packet_id: Mutex::new(0),
            reader: Some(reader),
        };
        match client.control.recv_timeout(Duration::from_secs(5)) {
            Ok(Packet::Connack { return_code: 0 }) => Ok(client),
            Ok(Packet::Connack { return_code }) => {
                Err(Error::Protocol(format!("connection refused with code {return_code}")))
            }
            Ok(other) => Err(Error::Protocol(format!("expected CONNACK, got {other:?}"))),
            Err(_) => Err(Error::Protocol("no CONNACK from broker".into())),
        }
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    fn packet_id(&self) -> u16 {
        let mut id = self.next_packet_id.lock().unwrap_or_else(|e| e.into_inner());
        *id = id.wrapping_add(1).max(1);
        *id
    }

    fn send(&self, packet: &Packet) -> Result<(), Error> {
        let bytes = self.codec.encode(packet)?;
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Subscribes and waits for the SUBACK so later publishes are routed.
    pub fn subscribe(&self, filters: &[(&str, QoS)]) -> Result<(), Error> {
        let filters = filters
            .iter()
            .map(|(f, q)| Ok((TopicFilter::new(*f)?, *q)))
            .collect::<Result<Vec<_>, Error>>()?;
        let packet_id = self.packet_id();
        self.send(&Packet::Subscribe { packet_id, filters })?;
        loop {
            match self.control.recv_timeout(Duration::from_secs(5)) {
                Ok(Packet::Suback { packet_id: id, .. }) if id == packet_id => return Ok(()),
                Ok(_) => continue,
                Err(_) => return Err(Error::Protocol("no SUBACK from broker".into())),
            }
        }
    }

    pub fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>, qos: QoS) -> Result<(), Error> {
        let topic = TopicName::new(topic)?;
        let publish = match qos {
            QoS::AtMostOnce => Publish::qos0(topic, payload),
            QoS::AtLeastOnce => Publish::qos1(topic, payload, self.packet_id()),
        };
        self.send(&Packet::Publish(publish))
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Publish> {
        match self.inbox.recv_timeout(timeout) {
            Ok(p) => Some(p),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    pub fn try_recv(&self) -> Option<Publish> {
        self.inbox.try_recv().ok()
    }

    pub fn ping(&self) -> Result<(), Error> {
        self.send(&Packet::Pingreq)?;
        loop {
            match self.control.recv_timeout(Duration::from_secs(5)) {
                Ok(Packet::Pingresp) => return Ok(()),
                Ok(_) => continue,
                Err(_) => return Err(Error::Protocol("no PINGRESP from broker".into())),
            }
        }
    }

    pub fn disconnect(mut self) -> Result<(), Error> {
        self.send(&Packet::Disconnect)?;
        self.close();
        Ok(())
    }

    fn close(&mut self) {
        let w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let _ = w.shutdown(Shutdown::Both);
        drop(w);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        self.close();
    }
}

fn read_loop(
    mut stream: TcpStream,
    mut ack: TcpStream,
    codec: Codec,
    inbox: Sender<Publish>,
    control: Sender<Packet>,
) -> Result<(), Error> {
    let mut buf = Vec::with_capacity(4096);
    let mut chunk = [0u8; 16 * 1024];
    loop {
        loop {
            let (packet, used) = match codec.decode(&buf)? {
                Decoded::Packet(p, n) => (p, n),
                Decoded::Incomplete => break,
            };
            buf.drain(..used);
            match packet {
                Packet::Publish(p) => {
                    if let Some(packet_id) = p.packet_id {
                        ack.write_all(&codec.encode(&Packet::Puback { packet_id })?)?;
                    }
                    if inbox.send(p).is_err() {
                        return Ok(());
                    }
                }
                other => {
                    let _ = control.send(other);
                }
            }
        }
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}
