//! MQTT 3.1.1 wire codec for the packet subset used by the ward network.
//!
//! Every packet is a fixed header (4-bit type, 4 flag bits, base-128
//! remaining length) followed by a variable header and payload. Strings are
//! UTF-8 with a big-endian u16 length prefix; packet identifiers are
//! big-endian u16.

use crate::topic::{TopicFilter, TopicName};
use crate::Error;

/// Largest value representable by a 4-byte remaining-length varint.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;
pub const DEFAULT_MAX_PAYLOAD: usize = 256 * 1024;

const PROTOCOL_NAME: &str = "MQTT";
const PROTOCOL_LEVEL: u8 = 4;
const CLEAN_SESSION: u8 = 0x02;

const CONNECT: u8 = 1;
const CONNACK: u8 = 2;
const PUBLISH: u8 = 3;
const PUBACK: u8 = 4;
const SUBSCRIBE: u8 = 8;
const SUBACK: u8 = 9;
const PINGREQ: u8 = 12;
const PINGRESP: u8 = 13;
const DISCONNECT: u8 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<QoS> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: TopicName,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub dup: bool,
    pub packet_id: Option<u16>,
}

impl Publish {
    pub fn qos0(topic: TopicName, payload: impl Into<Vec<u8>>) -> Self {
        Publish {
            topic,
            payload: payload.into(),
            qos: QoS::AtMostOnce,
            dup: false,
            packet_id: None,
        }
    }

    pub fn qos1(topic: TopicName, payload: impl Into<Vec<u8>>, packet_id: u16) -> Self {
        Publish {
            topic,
            payload: payload.into(),
            qos: QoS::AtLeastOnce,
            dup: false,
            packet_id: Some(packet_id),
        }
    }

    /// Checks the QoS / packet-id / DUP pairing rules.
    pub fn validate(&self) -> Result<(), Error> {
        match (self.qos, self.packet_id) {
            (QoS::AtMostOnce, Some(_)) => Err(Error::InvalidPacket(
                "QoS 0 publish must not carry a packet id".into(),
            )),
            (QoS::AtMostOnce, None) if self.dup => Err(Error::InvalidPacket(
                "QoS 0 publish must not set DUP".into(),
            )),
            (QoS::AtLeastOnce, None) | (QoS::AtLeastOnce, Some(0)) => Err(Error::InvalidPacket(
                "QoS 1 publish requires a non-zero packet id".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect { client_id: String, keep_alive_s: u16 },
    Connack { return_code: u8 },
    Publish(Publish),
    Puback { packet_id: u16 },
    Subscribe { packet_id: u16, filters: Vec<(TopicFilter, QoS)> },
    Suback { packet_id: u16, granted: Vec<u8> },
    Pingreq,
    Pingresp,
    Disconnect,
}

/// Result of a decode attempt that did not hit malformed input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    /// A full packet and the exact number of bytes it occupied.
    Packet(Packet, usize),
    /// More bytes are needed; nothing was consumed.
    Incomplete,
}

/// Encoder/decoder with a configured payload ceiling.
#[derive(Debug, Clone, Copy)]
pub struct Codec {
    pub max_payload: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Codec { max_payload: DEFAULT_MAX_PAYLOAD }
    }
}

pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, Error> {
    Codec::default().encode(p)
}

pub fn decode_packet(buf: &[u8]) -> Result<Decoded, Error> {
    Codec::default().decode(buf)
}

/// Appends the base-128 remaining-length encoding of `value`.
pub fn write_remaining_length(out: &mut Vec<u8>, mut value: usize) -> Result<(), Error> {
    if value > MAX_REMAINING_LENGTH {
        return Err(Error::InvalidPacket(format!(
            "remaining length {value} exceeds {MAX_REMAINING_LENGTH}"
        )));
    }
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if value == 0 {
            return Ok(());
        }
    }
}

/// Reads a remaining-length varint. `Ok(None)` means the buffer ended
/// before the final byte.
pub fn read_remaining_length(buf: &[u8]) -> Result<Option<(usize, usize)>, Error> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for i in 0..4 {
        let Some(&byte) = buf.get(i) else {
            return Ok(None);
        };
        value += (byte & 0x7F) as usize * multiplier;
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    Err(Error::Malformed("remaining length varint longer than 4 bytes".into()))
}

impl Codec {
    pub fn new(max_payload: usize) -> Self {
        Codec { max_payload }
    }

    pub fn encode(&self, p: &Packet) -> Result<Vec<u8>, Error> {
        let mut body = Vec::new();
        let header = match p {
            Packet::Connect { client_id, keep_alive_s } => {
                put_str(&mut body, PROTOCOL_NAME)?;
                body.push(PROTOCOL_LEVEL);
                body.push(CLEAN_SESSION);
                body.extend_from_slice(&keep_alive_s.to_be_bytes());
                put_str(&mut body, client_id)?;
                CONNECT << 4
            }
            Packet::Connack { return_code } => {
                body.push(0);
                body.push(*return_code);
                CONNACK << 4
            }
            Packet::Publish(publish) => {
                publish.validate()?;
                if publish.payload.len() > self.max_payload {
                    return Err(Error::PayloadTooLarge {
                        len: publish.payload.len(),
                        limit: self.max_payload,
                    });
                }
                put_str(&mut body, publish.topic.as_str())?;
                if let Some(id) = publish.packet_id {
                    body.extend_from_slice(&id.to_be_bytes());
                }
                body.extend_from_slice(&publish.payload);
                let dup = if publish.dup { 0x08 } else { 0 };
                (PUBLISH << 4) | dup | ((publish.qos as u8) << 1)
            }
            Packet::Puback { packet_id } => {
                body.extend_from_slice(&packet_id.to_be_bytes());
                PUBACK << 4
            }
            Packet::Subscribe { packet_id, filters } => {
                if filters.is_empty() {
                    return Err(Error::InvalidPacket("SUBSCRIBE with no filters".into()));
                }
                if *packet_id == 0 {
                    return Err(Error::InvalidPacket("packet id 0 is reserved".into()));
                }
                body.extend_from_slice(&packet_id.to_be_bytes());
                for (filter, qos) in filters {
                    put_str(&mut body, filter.as_str())?;
                    body.push(*qos as u8);
                }
                (SUBSCRIBE << 4) | 0x02
            }
            Packet::Suback { packet_id, granted } => {
                body.extend_from_slice(&packet_id.to_be_bytes());
                body.extend_from_slice(granted);
                SUBACK << 4
            }
            Packet::Pingreq => PINGREQ << 4,
            Packet::Pingresp => PINGRESP << 4,
            Packet::Disconnect => DISCONNECT << 4,
        };
        let mut out = Vec::with_capacity(body.len() + 5);
        out.push(header);
        write_remaining_length(&mut out, body.len())?;
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(&self, buf: &[u8]) -> Result<Decoded, Error> {
        let Some(&first) = buf.first() else {
            return Ok(Decoded::Incomplete);
        };
        let kind = first >> 4;
        let flags = first & 0x0F;
        match kind {
            0 | 15 => {
                return Err(Error::Malformed(format!("reserved packet type {kind}")));
            }
            CONNECT | CONNACK | PUBLISH | PUBACK | SUBSCRIBE | SUBACK | PINGREQ | PINGRESP
            | DISCONNECT => {}
            _ => return Err(Error::Malformed(format!("unsupported packet type {kind}"))),
        }
        let Some((remaining, len_bytes)) = read_remaining_length(&buf[1..])? else {
            return Ok(Decoded::Incomplete);
        };
        let total = 1 + len_bytes + remaining;
        if buf.len() < total {
            return Ok(Decoded::Incomplete);
        }
        let mut r = Reader { buf: &buf[1 + len_bytes..total] };
        let expect_flags = |want: u8| {
            if flags == want {
                Ok(())
            } else {
                Err(Error::Malformed(format!(
                    "invalid fixed-header flags {flags:#06b} for packet type {kind}"
                )))
            }
        };

        let packet = match kind {
            CONNECT => {
                expect_flags(0)?;
                let name = r.string()?;
                if name != PROTOCOL_NAME {
                    return Err(Error::Malformed(format!("unknown protocol name {name:?}")));
                }
                let level = r.u8()?;
                if level != PROTOCOL_LEVEL {
                    return Err(Error::Malformed(format!("unsupported protocol level {level}")));
                }
                let connect_flags = r.u8()?;
                if connect_flags & !CLEAN_SESSION != 0 {
                    return Err(Error::Malformed(format!(
                        "unsupported connect flags {connect_flags:#04x}"
                    )));
                }
                let keep_alive_s = r.u16()?;
                let client_id = r.string()?;
                Packet::Connect { client_id, keep_alive_s }
            }
            CONNACK => {
                expect_flags(0)?;
                let ack_flags = r.u8()?;
                if ack_flags > 1 {
                    return Err(Error::Malformed("reserved CONNACK flags set".into()));
                }
                let return_code = r.u8()?;
                Packet::Connack { return_code }
            }
            PUBLISH => {
                let dup = flags & 0x08 != 0;
                let qos = QoS::from_u8((flags >> 1) & 0x03).ok_or_else(|| {
                    Error::Malformed(format!("unsupported publish QoS {}", (flags >> 1) & 0x03))
                })?;
                if flags & 0x01 != 0 {
                    return Err(Error::Malformed("retained messages are not supported".into()));
                }
                let topic = r.string()?;
                let topic = TopicName::new(topic)
                    .map_err(|e| Error::Malformed(format!("bad publish topic: {e}")))?;
                let packet_id = match qos {
                    QoS::AtMostOnce => None,
                    QoS::AtLeastOnce => Some(r.u16()?),
                };
                let payload = r.rest().to_vec();
                if payload.len() > self.max_payload {
                    return Err(Error::Malformed(format!(
                        "payload of {} bytes exceeds limit {}",
                        payload.len(),
                        self.max_payload
                    )));
                }
                let publish = Publish { topic, payload, qos, dup, packet_id };
                publish.validate().map_err(|e| Error::Malformed(e.to_string()))?;
                Packet::Publish(publish)
            }
            PUBACK => {
                expect_flags(0)?;
                Packet::Puback { packet_id: r.u16()? }
            }
            SUBSCRIBE => {
                expect_flags(0x02)?;
                let packet_id = r.u16()?;
                if packet_id == 0 {
                    return Err(Error::Malformed("packet id 0 is reserved".into()));
                }
                let mut filters = Vec::new();
                while !r.is_empty() {
                    let filter = TopicFilter::new(r.string()?)
                        .map_err(|e| Error::Malformed(format!("bad subscribe filter: {e}")))?;
                    let requested = r.u8()?;
                    let qos = QoS::from_u8(requested).ok_or_else(|| {
                        Error::Malformed(format!("unsupported requested QoS {requested}"))
                    })?;
                    filters.push((filter, qos));
                }
                if filters.is_empty() {
                    return Err(Error::Malformed("SUBSCRIBE with no filters".into()));
                }
                Packet::Subscribe { packet_id, filters }
            }
            SUBACK => {
                expect_flags(0)?;
                let packet_id = r.u16()?;
                let granted = r.rest().to_vec();
                if let Some(bad) = granted.iter().find(|c| !matches!(c, 0 | 1 | 2 | 0x80)) {
                    return Err(Error::Malformed(format!("invalid SUBACK return code {bad:#04x}")));
                }
                Packet::Suback { packet_id, granted }
            }
            PINGREQ => {
                expect_flags(0)?;
                Packet::Pingreq
            }
            PINGRESP => {
                expect_flags(0)?;
                Packet::Pingresp
            }
            DISCONNECT => {
                expect_flags(0)?;
                Packet::Disconnect
            }
            _ => unreachable!("packet type filtered above"),
        };
        if !r.is_empty() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes inside packet type {kind}",
                r.buf.len()
            )));
        }
        Ok(Decoded::Packet(packet, total))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), Error> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidPacket(format!("string of {} bytes is too long", s.len())))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Cursor over the bytes of one packet; running short is malformed because
/// the remaining length already promised the bytes.
struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        if self.buf.len() < n {
            return Err(Error::Malformed("packet body shorter than its fields".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, Error> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, Error> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, Error> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Malformed("string is not valid UTF-8".into()))
    }

    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference varint: repeated division, written independently of the
    /// encoder loop.
    fn varint_oracle(mut v: usize) -> Vec<u8> {
        let mut digits = vec![];
        while v >= 128 {
            digits.push(v % 128);
            v /= 128;
        }
        digits.push(v);
        let n = digits.len();
        digits
            .into_iter()
            .enumerate()
            .map(|(i, d)| if i + 1 < n { d as u8 | 0x80 } else { d as u8 })
            .collect()
    }

    fn varint(v: usize) -> Vec<u8> {
        let mut out = vec![];
        write_remaining_length(&mut out, v).unwrap();
        out
    }

    #[test]
    fn remaining_length_vectors() {
        assert_eq!(varint(0), vec![0x00]);
        assert_eq!(varint(321), vec![0xC1, 0x02]);
        assert_eq!(varint(127), vec![0x7F]);
        assert_eq!(varint(128), vec![0x80, 0x01]);
        assert_eq!(varint(16_383), vec![0xFF, 0x7F]);
        assert_eq!(varint(MAX_REMAINING_LENGTH), vec![0xFF, 0xFF, 0xFF, 0x7F]);
        assert!(write_remaining_length(&mut vec![], MAX_REMAINING_LENGTH + 1).is_err());
    }

    #[test]
    fn remaining_length_agrees_with_oracle() {
        for v in (0..70_000).chain([2_097_151, 2_097_152, 268_435_455]) {
            assert_eq!(varint(v), varint_oracle(v), "value {v}");
            let (back, n) = read_remaining_length(&varint(v)).unwrap().unwrap();
            assert_eq!((back, n), (v, varint_oracle(v).len()));
        }
    }

    #[test]
    fn fixed_control_packets() {
        assert_eq!(encode_packet(&Packet::Pingreq).unwrap(), vec![0xC0, 0x00]);
        assert_eq!(encode_packet(&Packet::Pingresp).unwrap(), vec![0xD0, 0x00]);
        assert_eq!(encode_packet(&Packet::Disconnect).unwrap(), vec![0xE0, 0x00]);
        assert_eq!(
            encode_packet(&Packet::Puback { packet_id: 0x1234 }).unwrap(),
            vec![0x40, 0x02, 0x12, 0x34]
        );
    }

    #[test]
    fn connect_matches_reference_bytes() {
        let bytes = encode_packet(&Packet::Connect { client_id: "temi".into(), keep_alive_s: 60 })
            .unwrap();
        let expected = [
            0x10, 16, 0x00, 0x04, b'M', b'Q', b'T', b'T', 0x04, 0x02, 0x00, 0x3C, 0x00, 0x04,
            b't', b'e', b'm', b'i',
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn publish_qos1_bytes() {
        let p = Publish::qos1(TopicName::new("a/b").unwrap(), b"hi".to_vec(), 10);
        let bytes = encode_packet(&Packet::Publish(p)).unwrap();
        assert_eq!(bytes, vec![0x32, 9, 0, 3, b'a', b'/', b'b', 0, 10, b'h', b'i']);
    }

    #[test]
    fn empty_input_is_incomplete() {
        assert_eq!(decode_packet(&[]).unwrap(), Decoded::Incomplete);
        assert_eq!(decode_packet(&[0xC0]).unwrap(), Decoded::Incomplete);
        assert_eq!(decode_packet(&[0x30, 0x80]).unwrap(), Decoded::Incomplete);
    }

    #[test]
    fn reserved_and_unsupported_types_are_malformed() {
        assert!(matches!(decode_packet(&[0x00, 0x00]), Err(Error::Malformed(_))));
        assert!(matches!(decode_packet(&[0xF0, 0x00]), Err(Error::Malformed(_))));
        // PUBREC belongs to QoS 2
        assert!(matches!(decode_packet(&[0x50, 0x02, 0, 1]), Err(Error::Malformed(_))));
    }

    #[test]
    fn five_byte_varint_is_malformed() {
        let buf = [0x30, 0xFF, 0xFF, 0xFF, 0xFF, 0x01];
        assert!(matches!(decode_packet(&buf), Err(Error::Malformed(_))));
    }

    #[test]
    fn wildcard_publish_topic_is_malformed() {
        let buf = [0x30, 5, 0, 3, b'a', b'/', b'+'];
        assert!(matches!(decode_packet(&buf), Err(Error::Malformed(_))));
    }

    #[test]
    fn bad_flags_are_malformed() {
        assert!(matches!(decode_packet(&[0xC1, 0x00]), Err(Error::Malformed(_))));
        // SUBSCRIBE must carry flags 0b0010
        let buf = [0x80, 6, 0, 1, 0, 1, b'a', 0];
        assert!(matches!(decode_packet(&buf), Err(Error::Malformed(_))));
        // QoS 0 publish with DUP set
        let buf = [0x38, 3, 0, 1, b'a'];
        assert!(matches!(decode_packet(&buf), Err(Error::Malformed(_))));
    }

    #[test]
    fn oversize_payload_is_rejected_on_both_sides() {
        let codec = Codec::new(4);
        let p = Packet::Publish(Publish::qos0(TopicName::new("t").unwrap(), vec![0u8; 5]));
        match codec.encode(&p) {
            Err(Error::PayloadTooLarge { len: 5, limit: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bytes = Codec::default().encode(&p).unwrap();
        assert!(matches!(codec.decode(&bytes), Err(Error::Malformed(_))));
    }

    #[test]
    fn invalid_publish_is_not_encoded() {
        let mut p = Publish::qos0(TopicName::new("t").unwrap(), vec![]);
        p.packet_id = Some(3);
        assert!(encode_packet(&Packet::Publish(p)).is_err());
        let mut p = Publish::qos1(TopicName::new("t").unwrap(), vec![], 1);
        p.packet_id = None;
        assert!(encode_packet(&Packet::Publish(p)).is_err());
    }

    #[test]
    fn decode_consumes_exactly_one_packet() {
        let mut buf = encode_packet(&Packet::Pingreq).unwrap();
        buf.extend(encode_packet(&Packet::Puback { packet_id: 7 }).unwrap());
        assert_eq!(decode_packet(&buf).unwrap(), Decoded::Packet(Packet::Pingreq, 2));
        assert_eq!(
            decode_packet(&buf[2..]).unwrap(),
            Decoded::Packet(Packet::Puback { packet_id: 7 }, 4)
        );
    }
}
