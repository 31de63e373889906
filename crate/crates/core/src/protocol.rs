//! The interface between the block DAG and the embedded protocol.
//!
//! A protocol is a deterministic state machine per `(label, server)`. The
//! interpreter never talks to the network: it feeds requests and messages into
//! instances and collects what they emit. Determinism is the whole contract;
//! two servers that run the same instance on the same inputs must reach the
//! same state and emit the same messages.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::ServerId;
use crate::codec::{hex_bytes, Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::Digest;

const PI_STATE_DOMAIN: &[u8] = b"dagbft/instance-state/v1";

/// Identifies one protocol instance. Labels are unique per originator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub originator: ServerId,
    pub nonce: u64,
}

impl Label {
    pub fn new(originator: u32, nonce: u64) -> Self {
        Self { originator: ServerId(originator), nonce }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.originator, self.nonce)
    }
}

impl Encode for Label {
    fn encode_to(&self, w: &mut Writer) {
        w.put(&self.originator).u64(self.nonce);
    }
}

impl Decode for Label {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { originator: ServerId::decode_from(r)?, nonce: r.u64()? })
    }
}

/// An opaque, protocol-encoded user request.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Request(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl fmt::Debug for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Request({})", hex::encode(&self.0))
    }
}

impl Encode for Request {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }
}

impl Decode for Request {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.bytes().map(Request)
    }
}

/// An opaque, protocol-encoded indication to the user.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Indication(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl fmt::Debug for Indication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Indication({})", hex::encode(&self.0))
    }
}

/// A protocol message between two instances of the same label.
///
/// The total order compares `(sender, receiver, payload length, payload)`,
/// which is exactly the lexicographic order of the canonical encoding.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub sender: ServerId,
    pub receiver: ServerId,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(sender: ServerId, receiver: ServerId, payload: Vec<u8>) -> Self {
        Self { sender, receiver, payload }
    }
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}", self.sender, self.receiver, hex::encode(&self.payload))
    }
}

impl Ord for Message {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.sender, self.receiver, self.payload.len(), &self.payload).cmp(&(
            other.sender,
            other.receiver,
            other.payload.len(),
            &other.payload,
        ))
    }
}

impl PartialOrd for Message {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Encode for Message {
    fn encode_to(&self, w: &mut Writer) {
        w.put(&self.sender).put(&self.receiver).bytes(&self.payload);
    }
}

impl Decode for Message {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            sender: ServerId::decode_from(r)?,
            receiver: ServerId::decode_from(r)?,
            payload: r.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("undecodable {what}: {source}")]
    Undecodable { what: &'static str, source: DecodeError },
    #[error("message addressed to {got} delivered to instance at {expected}")]
    ReceiverMismatch { expected: ServerId, got: ServerId },
}

/// Creates fresh instances.
pub trait Protocol {
    type Instance: ProcessInstance;

    fn init(&self, label: Label, server: ServerId) -> Self::Instance;
}

/// One deterministic process instance. Cloning must produce an independent
/// deep copy; the interpreter relies on it to fork state per block.
pub trait ProcessInstance: Clone {
    fn label(&self) -> Label;

    fn server(&self) -> ServerId;

    /// Handles a user request. On error the state is unchanged.
    fn request(&mut self, req: &Request) -> Result<Vec<Message>, ProtocolError>;

    /// Handles one message. On error the state is unchanged.
    fn receive(&mut self, msg: &Message) -> Result<Vec<Message>, ProtocolError>;

    /// Indications produced since the last call, in emission order.
    fn take_indications(&mut self) -> Vec<Indication>;

    /// Canonical encoding of the full state, excluding undrained indications.
    fn encode_state(&self, w: &mut Writer);

    fn state_digest(&self) -> Digest {
        let mut w = Writer::new();
        self.encode_state(&mut w);
        Digest::tagged(PI_STATE_DOMAIN, w.as_slice())
    }
}
