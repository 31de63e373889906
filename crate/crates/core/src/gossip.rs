//! Building the block DAG by gossip.
//!
//! A server keeps received-but-not-yet-valid blocks in a pending buffer,
//! promotes them into its dag once their predecessors are present, asks the
//! builder of a pending block for any predecessor it has never seen, and
//! periodically signs and broadcasts the block it has been assembling.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::block::{Block, BlockRef, ServerId};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer, ENCODING_VERSION};
use crate::crypto::{KeyRegistry, SigningHandle};
use crate::dag::{BlockDag, DagError, RejectReason};
use crate::protocol::{Label, Request};

const KIND_BLOCK: u8 = 1;
const KIND_FWD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EnvelopeKind {
    Block,
    Fwd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Block(Block),
    Fwd(BlockRef),
}

/// Everything that travels between servers. The payload variant is the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireEnvelope {
    pub from: ServerId,
    pub to: ServerId,
    pub payload: Payload,
}

impl WireEnvelope {
    pub fn kind(&self) -> EnvelopeKind {
        match self.payload {
            Payload::Block(_) => EnvelopeKind::Block,
            Payload::Fwd(_) => EnvelopeKind::Fwd,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_canonical_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_canonical_bytes(bytes)
    }
}

impl Encode for WireEnvelope {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(ENCODING_VERSION);
        match &self.payload {
            Payload::Block(b) => w.u8(KIND_BLOCK).put(&self.from).put(&self.to).put(b),
            Payload::Fwd(r) => w.u8(KIND_FWD).put(&self.from).put(&self.to).put(r),
        };
    }
}

impl Decode for WireEnvelope {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let version = r.u8()?;
        if version != ENCODING_VERSION {
            return Err(DecodeError::BadVersion(version));
        }
        let kind = r.u8()?;
        let from = ServerId::decode_from(r)?;
        let to = ServerId::decode_from(r)?;
        let payload = match kind {
            KIND_BLOCK => Payload::Block(Block::decode_from(r)?),
            KIND_FWD => Payload::Fwd(BlockRef::decode_from(r)?),
            tag => return Err(DecodeError::BadTag { what: "envelope kind", tag }),
        };
        Ok(Self { from, to, payload })
    }
}

/// FIFO of requests waiting to be placed in a block.
#[derive(Debug, Clone, Default)]
pub struct RequestBuffer {
    queue: VecDeque<(Label, Request)>,
}

impl RequestBuffer {
    pub fn put(&mut self, label: Label, req: Request) {
        self.queue.push_back((label, req));
    }

    /// Removes and returns up to `max` oldest entries.
    pub fn get(&mut self, max: usize) -> Vec<(Label, Request)> {
        let take = max.min(self.queue.len());
        self.queue.drain(..take).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GossipConfig {
    pub max_rs_per_block: usize,
    /// Minimum number of steps between two FWD requests for the same
    /// `(missing ref, builder)` pair.
    pub fwd_interval: u64,
    pub max_pending_per_builder: usize,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self { max_rs_per_block: 8, fwd_interval: 5, max_pending_per_builder: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Buffered,
    AlreadyInDag,
    AlreadyPending,
    /// Dropped on arrival: the signature can never verify.
    BadSignature,
    UnknownBuilder,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Promotion {
    pub inserted: Vec<BlockRef>,
    /// Pending blocks discarded because they can never become valid.
    pub rejected: Vec<(BlockRef, RejectReason)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GossipStats {
    pub received: u64,
    pub bad_signature: u64,
    pub rejected: u64,
    pub evicted: u64,
    pub fwd_sent: u64,
    pub fwd_answered: u64,
}

/// The block a server just built and signed, with the envelopes announcing it.
#[derive(Debug, Clone)]
pub struct Disseminated {
    pub block: Block,
    pub block_ref: BlockRef,
    pub envelopes: Vec<WireEnvelope>,
}

pub struct Gossip {
    me: ServerId,
    n: usize,
    handle: SigningHandle,
    dag: BlockDag,
    rqsts: RequestBuffer,
    current: Block,
    pending: BTreeMap<BlockRef, Block>,
    pending_per_builder: BTreeMap<ServerId, usize>,
    fwd_clock: BTreeMap<(BlockRef, ServerId), u64>,
    config: GossipConfig,
    stats: GossipStats,
}

impl Gossip {
    pub fn new(handle: SigningHandle, registry: Arc<KeyRegistry>, config: GossipConfig) -> Self {
        let me = handle.server();
        let n = registry.len();
        Self {
            me,
            n,
            handle,
            dag: BlockDag::new(me, registry),
            rqsts: RequestBuffer::default(),
            current: Block::genesis(me, Vec::new()),
            pending: BTreeMap::new(),
            pending_per_builder: BTreeMap::new(),
            fwd_clock: BTreeMap::new(),
            config,
            stats: GossipStats::default(),
        }
    }

    pub fn id(&self) -> ServerId {
        self.me
    }

    pub fn dag(&self) -> &BlockDag {
        &self.dag
    }

    pub fn current(&self) -> &Block {
        &self.current
    }

    pub fn requests(&self) -> &RequestBuffer {
        &self.rqsts
    }

    pub fn put_request(&mut self, label: Label, req: Request) {
        self.rqsts.put(label, req);
    }

    pub fn pending(&self) -> &BTreeMap<BlockRef, Block> {
        &self.pending
    }

    pub fn stats(&self) -> GossipStats {
        self.stats
    }

    pub fn config(&self) -> &GossipConfig {
        &self.config
    }

    /// Buffers a received block unless it is already known. Blocks whose
    /// signature fails are dropped immediately: they can never become valid.
    pub fn on_receive_block(&mut self, b: Block) -> ReceiveOutcome {
        self.stats.received += 1;
        let r = b.block_ref();
        if self.dag.contains(&r) {
            return ReceiveOutcome::AlreadyInDag;
        }
        if self.pending.contains_key(&r) {
            return ReceiveOutcome::AlreadyPending;
        }
        match b.verify_signature(self.dag.registry()) {
            Ok(true) => {}
            Ok(false) => {
                self.stats.bad_signature += 1;
                return ReceiveOutcome::BadSignature;
            }
            Err(_) => {
                self.stats.bad_signature += 1;
                return ReceiveOutcome::UnknownBuilder;
            }
        }
        let builder = b.n;
        self.pending.insert(r, b);
        let count = self.pending_per_builder.entry(builder).or_default();
        *count += 1;
        if *count > self.config.max_pending_per_builder {
            self.evict_one(builder);
        }
        ReceiveOutcome::Buffered
    }

    /// Drops the builder's pending block with the highest `(k, ref)`; low
    /// sequence numbers are the ones most likely to unblock others.
    fn evict_one(&mut self, builder: ServerId) {
        let victim = self
            .pending
            .iter()
            .filter(|(_, b)| b.n == builder)
            .max_by_key(|(r, b)| (b.k, **r))
            .map(|(r, _)| *r);
        if let Some(r) = victim {
            self.remove_pending(&r);
            self.stats.evicted += 1;
        }
    }

    fn remove_pending(&mut self, r: &BlockRef) -> Option<Block> {
        let b = self.pending.remove(r)?;
        if let Some(c) = self.pending_per_builder.get_mut(&b.n) {
            *c -= 1;
        }
        Some(b)
    }

    /// Inserts every pending block that has become valid, in rounds: each
    /// round takes all pending blocks whose predecessors are present and
    /// processes them in ascending ref order. Repeats until nothing changes.
    pub fn try_promote(&mut self) -> Promotion {
        let mut out = Promotion::default();
        loop {
            let ready: Vec<BlockRef> = self
                .pending
                .iter()
                .filter(|(_, b)| b.preds.iter().all(|p| self.dag.contains(p)))
                .map(|(r, _)| *r)
                .collect();
            if ready.is_empty() {
                break;
            }
            for r in ready {
                let b = self.remove_pending(&r).expect("ready block is pending");
                match self.dag.validate(&b) {
                    Ok(()) => {
                        self.dag.insert(b).expect("validated block inserts");
                        self.current.preds.push(r);
                        self.forget_fwd(&r);
                        out.inserted.push(r);
                    }
                    Err(reason) => {
                        self.stats.rejected += 1;
                        out.rejected.push((r, reason));
                    }
                }
            }
        }
        out
    }

    fn forget_fwd(&mut self, r: &BlockRef) {
        let keys: Vec<_> = self
            .fwd_clock
            .range((*r, ServerId(0))..=(*r, ServerId(u32::MAX)))
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            self.fwd_clock.remove(&k);
        }
    }

    /// FWD requests for predecessors that are neither pending nor inserted,
    /// addressed to the builder of the block that references them.
    pub fn request_missing(&mut self, now: u64) -> Vec<WireEnvelope> {
        let mut out = Vec::new();
        for b in self.pending.values() {
            for p in b.distinct_preds() {
                if self.dag.contains(&p) || self.pending.contains_key(&p) {
                    continue;
                }
                let key = (p, b.n);
                let due = self
                    .fwd_clock
                    .get(&key)
                    .is_none_or(|last| now >= last + self.config.fwd_interval);
                if due {
                    self.fwd_clock.insert(key, now);
                    out.push(WireEnvelope { from: self.me, to: b.n, payload: Payload::Fwd(p) });
                }
            }
        }
        self.stats.fwd_sent += out.len() as u64;
        out
    }

    pub fn on_fwd_request(&mut self, r: &BlockRef, from: ServerId) -> Option<WireEnvelope> {
        let b = self.dag.get(r)?.clone();
        self.stats.fwd_answered += 1;
        Some(WireEnvelope { from: self.me, to: from, payload: Payload::Block(b) })
    }

    /// Inserts a block this server built by other means than
    /// [`Gossip::disseminate`]; the block under construction is untouched.
    /// Used by scripted adversaries that manage their own chains.
    pub fn adopt(&mut self, b: Block) -> Result<BlockRef, DagError> {
        let r = self.dag.insert(b)?;
        self.remove_pending(&r);
        Ok(r)
    }

    /// Fills the block under construction with buffered requests, signs it,
    /// inserts it locally and addresses it to every server including self.
    pub fn disseminate(&mut self) -> Disseminated {
        self.current.rs = self.rqsts.get(self.config.max_rs_per_block);
        let block = self.current.clone().signed(&self.handle);
        let r = self
            .dag
            .insert(block.clone())
            .expect("a server's own block is always valid");
        self.current = Block::new(self.me, block.k + 1, vec![r], Vec::new());
        let envelopes = ServerId::all(self.n)
            .map(|to| WireEnvelope { from: self.me, to, payload: Payload::Block(block.clone()) })
            .collect();
        Disseminated { block, block_ref: r, envelopes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brb::broadcast_request;
    use crate::crypto::SchemeId;

    fn servers(n: usize) -> (Arc<KeyRegistry>, Vec<Gossip>, Vec<SigningHandle>) {
        let (reg, handles) = KeyRegistry::generate(SchemeId::KeyedMac, n, 5);
        let reg = Arc::new(reg);
        let (_, spare) = KeyRegistry::generate(SchemeId::KeyedMac, n, 5);
        let gossips = handles
            .into_iter()
            .map(|h| Gossip::new(h, reg.clone(), GossipConfig::default()))
            .collect();
        (reg, gossips, spare)
    }

    fn block_of(env: &WireEnvelope) -> Block {
        match &env.payload {
            Payload::Block(b) => b.clone(),
            Payload::Fwd(_) => panic!("expected block"),
        }
    }

    #[test]
    fn first_dissemination_is_genesis_with_requests() {
        let (_, mut g, _) = servers(4);
        let label = Label::new(0, 1);
        g[0].put_request(label, broadcast_request(42));
        let d = g[0].disseminate();
        assert_eq!(d.block.k, 0);
        assert!(d.block.preds.is_empty());
        assert_eq!(d.block.rs, vec![(label, broadcast_request(42))]);
        assert_eq!(d.envelopes.len(), 4);
        assert!(g[0].dag().contains(&d.block_ref));
        assert_eq!(g[0].current().k, 1);
        assert_eq!(g[0].current().preds, vec![d.block_ref]);
    }

    #[test]
    fn request_batches_respect_the_cap() {
        let (_, mut g, _) = servers(4);
        for i in 0..10 {
            g[1].put_request(Label::new(1, i), broadcast_request(i));
        }
        assert_eq!(g[1].disseminate().block.rs.len(), 8);
        assert_eq!(g[1].disseminate().block.rs.len(), 2);
        assert_eq!(g[1].disseminate().block.rs.len(), 0);
    }

    #[test]
    fn child_before_parent_then_cascade() {
        let (_, mut g, _) = servers(4);
        let b1 = g[0].disseminate();
        let b2 = g[1].disseminate();
        for e in &b1.envelopes {
            if e.to == ServerId(1) {
                g[1].on_receive_block(block_of(e));
            }
        }
        g[1].try_promote();
        let b3 = g[1].disseminate();
        assert_eq!(b3.block.preds, vec![b2.block_ref, b1.block_ref]);

        assert_eq!(g[2].on_receive_block(b3.block.clone()), ReceiveOutcome::Buffered);
        assert_eq!(g[2].on_receive_block(b3.block.clone()), ReceiveOutcome::AlreadyPending);
        assert!(g[2].try_promote().inserted.is_empty());
        g[2].on_receive_block(b1.block.clone());
        assert_eq!(g[2].try_promote().inserted, vec![b1.block_ref]);
        g[2].on_receive_block(b2.block.clone());
        assert_eq!(g[2].try_promote().inserted, vec![b2.block_ref, b3.block_ref]);
        assert_eq!(
            g[2].on_receive_block(b3.block.clone()),
            ReceiveOutcome::AlreadyInDag
        );
    }

    #[test]
    fn missing_predecessors_are_requested_once_per_interval() {
        let (_, mut g, _) = servers(4);
        let b1 = g[0].disseminate();
        let b2 = g[0].disseminate();
        let b3 = g[0].disseminate();
        g[1].on_receive_block(b3.block.clone());
        let fwd = g[1].request_missing(10);
        assert_eq!(
            fwd,
            vec![WireEnvelope { from: ServerId(1), to: ServerId(0), payload: Payload::Fwd(b2.block_ref) }]
        );
        assert!(g[1].request_missing(14).is_empty());
        assert_eq!(g[1].request_missing(15).len(), 1);

        let reply = g[0].on_fwd_request(&b2.block_ref, ServerId(1)).unwrap();
        assert_eq!(reply.to, ServerId(1));
        g[1].on_receive_block(block_of(&reply));
        let fwd = g[1].request_missing(16);
        assert_eq!(fwd.len(), 1);
        assert_eq!(fwd[0].payload, Payload::Fwd(b1.block_ref));
        assert!(g[1].on_fwd_request(&b1.block_ref, ServerId(0)).is_none());
    }

    #[test]
    fn shared_missing_predecessor_is_requested_once() {
        let (_, mut g, spare) = servers(4);
        g[0].disseminate();
        let b1 = g[0].disseminate();
        // Two blocks from server 0 both referencing b1 but differing in rs.
        let x = Block::new(ServerId(0), 2, vec![b1.block_ref], vec![]).signed(&spare[0]);
        let y = Block::new(ServerId(0), 2, vec![b1.block_ref], vec![(Label::new(0, 9), Request(vec![1]))])
            .signed(&spare[0]);
        g[2].on_receive_block(x);
        g[2].on_receive_block(y);
        let fwd = g[2].request_missing(0);
        assert_eq!(fwd.len(), 1);
    }

    #[test]
    fn bad_signatures_are_dropped_on_receipt() {
        let (_, mut g, spare) = servers(4);
        let forged = Block::genesis(ServerId(0), vec![]).signed(&spare[3]);
        assert_eq!(g[1].on_receive_block(forged), ReceiveOutcome::BadSignature);
        let stranger = Block::genesis(ServerId(9), vec![]).signed(&spare[3]);
        assert_eq!(g[1].on_receive_block(stranger), ReceiveOutcome::UnknownBuilder);
        assert!(g[1].pending().is_empty());
        assert_eq!(g[1].stats().bad_signature, 2);
    }

    #[test]
    fn permanently_invalid_blocks_are_discarded() {
        let (_, mut g, spare) = servers(4);
        let b0 = g[0].disseminate();
        g[1].on_receive_block(b0.block.clone());
        let orphan = Block::new(ServerId(2), 1, vec![b0.block_ref], vec![]).signed(&spare[2]);
        g[1].on_receive_block(orphan);
        let p = g[1].try_promote();
        assert_eq!(p.inserted, vec![b0.block_ref]);
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.rejected[0].1, RejectReason::NoParent);
        assert!(g[1].pending().is_empty());
    }

    #[test]
    fn pending_buffer_is_bounded_per_builder() {
        let (reg, handles) = KeyRegistry::generate(SchemeId::KeyedMac, 4, 5);
        let reg = Arc::new(reg);
        let mut it = handles.into_iter();
        let h0 = it.next().unwrap();
        let config = GossipConfig { max_pending_per_builder: 2, ..GossipConfig::default() };
        let mut g = Gossip::new(it.next().unwrap(), reg, config);
        let ghost = BlockRef(crate::crypto::Digest::of(b"ghost"));
        for k in 1..=4 {
            let b = Block::new(ServerId(0), k, vec![ghost], vec![]).signed(&h0);
            g.on_receive_block(b);
        }
        assert_eq!(g.pending().len(), 2);
        assert_eq!(g.stats().evicted, 2);
        assert!(g.pending().values().all(|b| b.k <= 2));
    }

    #[test]
    fn own_block_echo_is_absorbed() {
        let (_, mut g, _) = servers(4);
        let d = g[3].disseminate();
        let own = d.envelopes.iter().find(|e| e.to == ServerId(3)).unwrap();
        assert_eq!(g[3].on_receive_block(block_of(own)), ReceiveOutcome::AlreadyInDag);
    }

    #[test]
    fn envelope_roundtrip_and_garbage() {
        let (_, mut g, _) = servers(4);
        let d = g[0].disseminate();
        for e in &d.envelopes {
            assert_eq!(&WireEnvelope::decode(&e.encode()).unwrap(), e);
        }
        let f = WireEnvelope { from: ServerId(2), to: ServerId(0), payload: Payload::Fwd(d.block_ref) };
        assert_eq!(WireEnvelope::decode(&f.encode()).unwrap(), f);
        assert!(WireEnvelope::decode(&[1, 9, 0]).is_err());
        assert!(WireEnvelope::decode(&[]).is_err());
    }
}
