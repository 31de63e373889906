//! Byzantine reliable broadcast by authenticated double echo.
//!
//! Values are `u64`. Wire formats (all big-endian):
//!
//! | item               | layout                |
//! |--------------------|-----------------------|
//! | request broadcast  | `0x10` then value     |
//! | message ECHO       | `0x01` then value     |
//! | message READY      | `0x02` then value     |
//! | indication deliver | `0x20` then value     |
//!
//! Messages of an unknown kind are ignored rather than rejected, so a
//! byzantine payload can never make an instance error out.

use std::collections::{BTreeMap, BTreeSet};

use crate::block::ServerId;
use crate::codec::{DecodeError, Reader, Writer};
use crate::protocol::{Indication, Label, Message, ProcessInstance, Protocol, ProtocolError, Request};

const REQ_BROADCAST: u8 = 0x10;
const MSG_ECHO: u8 = 0x01;
const MSG_READY: u8 = 0x02;
const IND_DELIVER: u8 = 0x20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BrbMessage {
    Echo(u64),
    Ready(u64),
}

impl BrbMessage {
    pub fn encode(self) -> Vec<u8> {
        let (tag, v) = match self {
            BrbMessage::Echo(v) => (MSG_ECHO, v),
            BrbMessage::Ready(v) => (MSG_READY, v),
        };
        tagged(tag, v)
    }

    /// `None` for payloads of an unknown kind or wrong length.
    pub fn decode(payload: &[u8]) -> Option<Self> {
        match untag(payload).ok()? {
            (MSG_ECHO, v) => Some(BrbMessage::Echo(v)),
            (MSG_READY, v) => Some(BrbMessage::Ready(v)),
            _ => None,
        }
    }
}

fn tagged(tag: u8, v: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(tag).u64(v);
    w.finish()
}

fn untag(bytes: &[u8]) -> Result<(u8, u64), DecodeError> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    let v = r.u64()?;
    r.finish()?;
    Ok((tag, v))
}

pub fn broadcast_request(value: u64) -> Request {
    Request(tagged(REQ_BROADCAST, value))
}

pub fn decode_request(req: &Request) -> Result<u64, DecodeError> {
    match untag(&req.0)? {
        (REQ_BROADCAST, v) => Ok(v),
        (tag, _) => Err(DecodeError::BadTag { what: "brb request", tag }),
    }
}

pub fn deliver_indication(value: u64) -> Indication {
    Indication(tagged(IND_DELIVER, value))
}

pub fn decode_indication(ind: &Indication) -> Result<u64, DecodeError> {
    match untag(&ind.0)? {
        (IND_DELIVER, v) => Ok(v),
        (tag, _) => Err(DecodeError::BadTag { what: "brb indication", tag }),
    }
}

/// Instance factory for a system of `n` servers tolerating `f` faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Brb {
    n: usize,
    f: usize,
}

impl Brb {
    /// Panics unless `n >= 3f + 1`.
    pub fn new(n: usize, f: usize) -> Self {
        assert!(n > 3 * f, "brb needs n >= 3f+1 (n={n}, f={f})");
        Self { n, f }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }
}

impl Protocol for Brb {
    type Instance = BrbInstance;

    fn init(&self, label: Label, server: ServerId) -> BrbInstance {
        BrbInstance {
            label,
            server,
            n: self.n,
            f: self.f,
            echoed: false,
            readied: false,
            delivered: false,
            echoes: BTreeMap::new(),
            readies: BTreeMap::new(),
            pending: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrbInstance {
    label: Label,
    server: ServerId,
    n: usize,
    f: usize,
    echoed: bool,
    readied: bool,
    delivered: bool,
    echoes: BTreeMap<u64, BTreeSet<ServerId>>,
    readies: BTreeMap<u64, BTreeSet<ServerId>>,
    pending: Vec<Indication>,
}

impl BrbInstance {
    pub fn echoed(&self) -> bool {
        self.echoed
    }

    pub fn readied(&self) -> bool {
        self.readied
    }

    pub fn delivered(&self) -> bool {
        self.delivered
    }

    pub fn echo_count(&self, v: u64) -> usize {
        self.echoes.get(&v).map_or(0, BTreeSet::len)
    }

    pub fn ready_count(&self, v: u64) -> usize {
        self.readies.get(&v).map_or(0, BTreeSet::len)
    }

    fn to_all(&self, msg: BrbMessage) -> Vec<Message> {
        let payload = msg.encode();
        ServerId::all(self.n)
            .map(|r| Message::new(self.server, r, payload.clone()))
            .collect()
    }

    fn on_echo(&mut self, from: ServerId, v: u64) -> Vec<Message> {
        let mut out = Vec::new();
        if !self.echoed {
            self.echoed = true;
            out.extend(self.to_all(BrbMessage::Echo(v)));
        }
        let senders = self.echoes.entry(v).or_default();
        senders.insert(from);
        if senders.len() > 2 * self.f && !self.readied {
            self.readied = true;
            out.extend(self.to_all(BrbMessage::Ready(v)));
        }
        out
    }

    fn on_ready(&mut self, from: ServerId, v: u64) -> Vec<Message> {
        let mut out = Vec::new();
        let senders = self.readies.entry(v).or_default();
        senders.insert(from);
        let count = senders.len();
        if count > self.f && !self.readied {
            self.readied = true;
            out.extend(self.to_all(BrbMessage::Ready(v)));
        }
        if count > 2 * self.f && !self.delivered {
            self.delivered = true;
            self.pending.push(deliver_indication(v));
        }
        out
    }
}

impl ProcessInstance for BrbInstance {
    fn label(&self) -> Label {
        self.label
    }

    fn server(&self) -> ServerId {
        self.server
    }

    fn request(&mut self, req: &Request) -> Result<Vec<Message>, ProtocolError> {
        let v = decode_request(req).map_err(|source| ProtocolError::Undecodable { what: "request", source })?;
        // Only the label's originator may broadcast; anyone else is ignored.
        if self.server != self.label.originator || self.echoed {
            return Ok(Vec::new());
        }
        self.echoed = true;
        Ok(self.to_all(BrbMessage::Echo(v)))
    }

    fn receive(&mut self, msg: &Message) -> Result<Vec<Message>, ProtocolError> {
        if msg.receiver != self.server {
            return Err(ProtocolError::ReceiverMismatch { expected: self.server, got: msg.receiver });
        }
        if msg.sender.index() >= self.n {
            return Ok(Vec::new());
        }
        Ok(match BrbMessage::decode(&msg.payload) {
            Some(BrbMessage::Echo(v)) => self.on_echo(msg.sender, v),
            Some(BrbMessage::Ready(v)) => self.on_ready(msg.sender, v),
            None => Vec::new(),
        })
    }

    fn take_indications(&mut self) -> Vec<Indication> {
        std::mem::take(&mut self.pending)
    }

    fn encode_state(&self, w: &mut Writer) {
        w.put(&self.label).put(&self.server);
        w.u32(self.n as u32).u32(self.f as u32);
        w.bool(self.echoed).bool(self.readied).bool(self.delivered);
        for map in [&self.echoes, &self.readies] {
            w.len_prefix(map.len());
            for (v, senders) in map {
                w.u64(*v).len_prefix(senders.len());
                for s in senders {
                    w.put(s);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(server: u32) -> BrbInstance {
        Brb::new(4, 1).init(Label::new(0, 1), ServerId(server))
    }

    fn msg(kind: BrbMessage, from: u32, to: u32) -> Message {
        Message::new(ServerId(from), ServerId(to), kind.encode())
    }

    #[test]
    fn wire_formats() {
        assert_eq!(BrbMessage::Echo(42).encode(), vec![1, 0, 0, 0, 0, 0, 0, 0, 42]);
        assert_eq!(BrbMessage::Ready(1).encode()[0], 2);
        assert_eq!(broadcast_request(7).0[0], 0x10);
        assert_eq!(decode_indication(&deliver_indication(9)), Ok(9));
        assert_eq!(BrbMessage::decode(&[3, 0, 0, 0, 0, 0, 0, 0, 0]), None);
        assert_eq!(BrbMessage::decode(&[1, 0]), None);
    }

    #[test]
    fn originator_broadcast_echoes_to_all() {
        let mut p = inst(0);
        let out = p.request(&broadcast_request(42)).unwrap();
        assert_eq!(out, (0..4).map(|r| msg(BrbMessage::Echo(42), 0, r)).collect::<Vec<_>>());
        assert!(p.echoed());
        assert!(p.request(&broadcast_request(43)).unwrap().is_empty());
    }

    #[test]
    fn non_originator_broadcast_is_ignored() {
        let mut p = inst(1);
        assert!(p.request(&broadcast_request(42)).unwrap().is_empty());
        assert!(!p.echoed());
    }

    #[test]
    fn malformed_request_leaves_state_unchanged() {
        let mut p = inst(0);
        let before = p.clone();
        assert!(matches!(p.request(&Request(vec![0x10])), Err(ProtocolError::Undecodable { .. })));
        assert_eq!(p, before);
    }

    #[test]
    fn echo_then_thresholds() {
        let mut p = inst(1);
        let out = p.receive(&msg(BrbMessage::Echo(42), 0, 1)).unwrap();
        assert_eq!(out.len(), 4);
        assert!(p.receive(&msg(BrbMessage::Echo(42), 1, 1)).unwrap().is_empty());
        let out = p.receive(&msg(BrbMessage::Echo(42), 2, 1)).unwrap();
        assert_eq!(out, (0..4).map(|r| msg(BrbMessage::Ready(42), 1, r)).collect::<Vec<_>>());
        assert!(p.receive(&msg(BrbMessage::Ready(42), 0, 1)).unwrap().is_empty());
        p.receive(&msg(BrbMessage::Ready(42), 1, 1)).unwrap();
        assert!(p.take_indications().is_empty());
        p.receive(&msg(BrbMessage::Ready(42), 2, 1)).unwrap();
        assert_eq!(p.take_indications(), vec![deliver_indication(42)]);
        p.receive(&msg(BrbMessage::Ready(42), 3, 1)).unwrap();
        assert!(p.take_indications().is_empty());
    }

    #[test]
    fn ready_amplification_at_f_plus_one() {
        let mut p = inst(3);
        assert!(p.receive(&msg(BrbMessage::Ready(5), 0, 3)).unwrap().is_empty());
        let out = p.receive(&msg(BrbMessage::Ready(5), 1, 3)).unwrap();
        assert_eq!(out.len(), 4);
        assert!(p.readied() && !p.echoed());
    }

    #[test]
    fn duplicate_senders_do_not_count_twice() {
        let mut p = inst(2);
        for _ in 0..5 {
            p.receive(&msg(BrbMessage::Ready(5), 0, 2)).unwrap();
        }
        assert_eq!(p.ready_count(5), 1);
        assert!(!p.readied());
    }

    #[test]
    fn misaddressed_and_unknown_messages() {
        let mut p = inst(2);
        assert!(matches!(
            p.receive(&msg(BrbMessage::Echo(1), 0, 3)),
            Err(ProtocolError::ReceiverMismatch { .. })
        ));
        let junk = Message::new(ServerId(0), ServerId(2), vec![0xee; 3]);
        assert!(p.receive(&junk).unwrap().is_empty());
        assert_eq!(p, inst(2));
    }

    #[test]
    fn state_digest_tracks_state() {
        let a = inst(1);
        let mut b = inst(1);
        assert_eq!(a.state_digest(), b.state_digest());
        b.receive(&msg(BrbMessage::Ready(5), 0, 1)).unwrap();
        assert_ne!(a.state_digest(), b.state_digest());
    }
}
