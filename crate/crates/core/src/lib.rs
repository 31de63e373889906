//! Embedding deterministic BFT protocols in a block DAG.
//!
//! Servers gossip signed blocks into a DAG ([`gossip`], [`dag`]). Each server
//! then replays every server's protocol instances over that DAG
//! ([`interpret`]), so protocol messages never travel on the wire: they are
//! materialized locally from block content. [`brb`] is a reference protocol,
//! [`shim`] the user-facing server, and [`simnet`] a deterministic network
//! simulator with byzantine adversaries and trace checkers.

pub mod block;
pub mod brb;
pub mod codec;
pub mod crypto;
pub mod dag;
pub mod dot;
pub mod fixtures;
pub mod gossip;
pub mod graph;
pub mod interpret;
pub mod protocol;
pub mod shim;
pub mod simnet;

pub use block::{Block, BlockRef, ServerId};
pub use crypto::{Digest, KeyRegistry, SchemeId, Signature, SigningHandle};
pub use dag::{BlockDag, DagError, RejectReason};
pub use graph::{Digraph, Reach};
pub use interpret::{IndicationEvent, Interpreter};
pub use protocol::{Indication, Label, Message, ProcessInstance, Protocol, ProtocolError, Request};
