//! Local replay of protocol instances over a block DAG.
//!
//! Each block carries, per label, a snapshot of its builder's process
//! instance and the messages that instance consumed (`ms_in`) and produced
//! (`ms_out`). A block is interpreted once all of its predecessors are: it
//! starts from a deep copy of its parent's instances, applies its own
//! requests, then feeds every message addressed to its builder from its
//! predecessors' outboxes in the total message order. Because each step is a
//! deterministic function of the block and its predecessors' slots, any two
//! servers holding the same block compute the same slots for it.
//!
//! Instances are created lazily on first use. An absent instance is
//! indistinguishable from a fresh one: [`Interpreter::state_digest`] digests
//! a freshly initialized instance in that case.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::block::{BlockRef, ServerId};
use crate::codec::Writer;
use crate::crypto::Digest;
use crate::dag::{BlockDag, RejectReason};
use crate::protocol::{Indication, Label, Message, ProcessInstance, Protocol};

const SLOT_DOMAIN: &[u8] = b"dagbft/slot/v1";
const SEAL_DOMAIN: &[u8] = b"dagbft/seal/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpretError {
    #[error("block {0} is not in the dag")]
    UnknownBlock(BlockRef),
    #[error("block {0} is not eligible for interpretation")]
    NotEligible(BlockRef),
    #[error("block {0} has not been interpreted")]
    NotInterpreted(BlockRef),
    #[error("block {0} has a malformed parent relation: {1}")]
    BadParent(BlockRef, RejectReason),
    #[error("slots of block {0} changed after interpretation")]
    SealBroken(BlockRef),
}

pub type MessageSet = BTreeSet<Message>;

/// Per-block interpretation results.
#[derive(Debug, Clone)]
pub struct BlockSlots<I> {
    pub builder: ServerId,
    pub pis: BTreeMap<Label, I>,
    pub ms_in: BTreeMap<Label, MessageSet>,
    pub ms_out: BTreeMap<Label, MessageSet>,
    /// Labels requested in this block or any ancestor.
    pub live: BTreeSet<Label>,
}

/// An indication raised while interpreting `block`, on behalf of its builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicationEvent {
    pub label: Label,
    pub indication: Indication,
    pub on_behalf_of: ServerId,
    pub block: BlockRef,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InterpretStats {
    pub blocks: u64,
    pub requests: u64,
    pub skipped_requests: u64,
    pub receives: u64,
    pub rejected_messages: u64,
    pub materialized: u64,
}

pub struct Interpreter<P: Protocol> {
    protocol: P,
    slots: BTreeMap<BlockRef, BlockSlots<P::Instance>>,
    /// Known but uninterpreted blocks.
    waiting: BTreeSet<BlockRef>,
    cursor: usize,
    indications: VecDeque<IndicationEvent>,
    eager_labels: Vec<Label>,
    sealed: Option<BTreeMap<BlockRef, Digest>>,
    stats: InterpretStats,
}

impl<P: Protocol> Interpreter<P> {
    /// Seals every interpreted block in debug builds so that
    /// [`Interpreter::audit`] can detect later modification.
    pub fn new(protocol: P) -> Self {
        Self {
            protocol,
            slots: BTreeMap::new(),
            waiting: BTreeSet::new(),
            cursor: 0,
            indications: VecDeque::new(),
            eager_labels: Vec::new(),
            sealed: cfg!(debug_assertions).then(BTreeMap::new),
            stats: InterpretStats::default(),
        }
    }

    /// Instantiates `labels` up front at every genesis block instead of on
    /// first use. Results are identical; this exists to check exactly that.
    pub fn with_eager_labels(mut self, labels: impl IntoIterator<Item = Label>) -> Self {
        self.eager_labels = labels.into_iter().collect();
        self
    }

    pub fn with_sealing(mut self, on: bool) -> Self {
        self.sealed = on.then(BTreeMap::new);
        self
    }

    pub fn protocol(&self) -> &P {
        &self.protocol
    }

    pub fn stats(&self) -> InterpretStats {
        self.stats
    }

    pub fn is_interpreted(&self, b: &BlockRef) -> bool {
        self.slots.contains_key(b)
    }

    pub fn interpreted_count(&self) -> usize {
        self.slots.len()
    }

    /// Slots of an interpreted block; `None` (empty slots) otherwise.
    pub fn slots(&self, b: &BlockRef) -> Option<&BlockSlots<P::Instance>> {
        self.slots.get(b)
    }

    pub fn eligible(&self, dag: &BlockDag, b: &BlockRef) -> Result<bool, InterpretError> {
        let block = dag.get(b).ok_or(InterpretError::UnknownBlock(*b))?;
        Ok(!self.is_interpreted(b) && block.preds.iter().all(|p| self.is_interpreted(p)))
    }

    /// Interprets one eligible block.
    pub fn interpret_block(&mut self, dag: &BlockDag, b: &BlockRef) -> Result<(), InterpretError> {
        if !self.eligible(dag, b)? {
            return Err(InterpretError::NotEligible(*b));
        }
        let block = dag.get(b).expect("eligible block is in the dag");
        let builder = block.n;
        let parent = dag.parent(block).map_err(|e| InterpretError::BadParent(*b, e))?;

        let mut pis: BTreeMap<Label, P::Instance> = match parent {
            Some(p) => self.slots[&p].pis.clone(),
            None => self
                .eager_labels
                .iter()
                .map(|l| (*l, self.protocol.init(*l, builder)))
                .collect(),
        };
        let mut ms_out: BTreeMap<Label, MessageSet> = BTreeMap::new();
        let mut touched: BTreeSet<Label> = BTreeSet::new();

        for (label, req) in &block.rs {
            self.stats.requests += 1;
            let inst = pis.entry(*label).or_insert_with(|| self.protocol.init(*label, builder));
            match inst.request(req) {
                Ok(msgs) => {
                    let out = ms_out.entry(*label).or_default();
                    extend_checked(out, msgs, builder, &mut self.stats);
                }
                Err(_) => self.stats.skipped_requests += 1,
            }
            touched.insert(*label);
        }

        let preds = block.distinct_preds();
        let mut live: BTreeSet<Label> = BTreeSet::new();
        let mut inbound: BTreeMap<Label, MessageSet> = BTreeMap::new();
        for p in &preds {
            let ps = &self.slots[p];
            live.extend(ps.live.iter().copied());
            for (label, msgs) in &ps.ms_out {
                let for_me = msgs.iter().filter(|m| m.receiver == builder).cloned();
                inbound.entry(*label).or_default().extend(for_me);
            }
        }
        inbound.retain(|_, msgs| !msgs.is_empty());

        for (label, msgs) in &inbound {
            debug_assert!(live.contains(label), "message for a label never requested");
            let inst = pis.entry(*label).or_insert_with(|| self.protocol.init(*label, builder));
            let out = ms_out.entry(*label).or_default();
            for m in msgs {
                self.stats.receives += 1;
                match inst.receive(m) {
                    Ok(emitted) => extend_checked(out, emitted, builder, &mut self.stats),
                    Err(_) => self.stats.rejected_messages += 1,
                }
            }
            touched.insert(*label);
        }
        ms_out.retain(|_, msgs| !msgs.is_empty());
        live.extend(block.rs.iter().map(|(l, _)| *l));

        for label in &touched {
            let inst = pis.get_mut(label).expect("touched instance exists");
            for indication in inst.take_indications() {
                self.indications.push_back(IndicationEvent {
                    label: *label,
                    indication,
                    on_behalf_of: builder,
                    block: *b,
                });
            }
        }

        self.stats.blocks += 1;
        self.stats.materialized += ms_out.values().map(|s| s.len() as u64).sum::<u64>();
        let slots = BlockSlots { builder, pis, ms_in: inbound, ms_out, live };
        if let Some(sealed) = self.sealed.as_mut() {
            sealed.insert(*b, seal_digest(&slots));
        }
        self.slots.insert(*b, slots);
        self.waiting.remove(b);
        Ok(())
    }

    fn sync(&mut self, dag: &BlockDag) {
        let order = dag.insertion_order();
        for r in &order[self.cursor.min(order.len())..] {
            if !self.slots.contains_key(r) {
                self.waiting.insert(*r);
            }
        }
        self.cursor = order.len();
    }

    fn eligible_waiting(&self, dag: &BlockDag) -> Vec<BlockRef> {
        self.waiting
            .iter()
            .filter(|r| dag.get(r).is_some_and(|b| b.preds.iter().all(|p| self.is_interpreted(p))))
            .copied()
            .collect()
    }

    /// Interprets blocks, always picking the eligible block with the least
    /// reference, until none is eligible. Returns them in order.
    ///
    /// The interpreter must always be driven by the same, growing dag.
    pub fn run_to_fixpoint(&mut self, dag: &BlockDag) -> Vec<BlockRef> {
        self.run_with(dag, |_| 0)
    }

    /// As [`Interpreter::run_to_fixpoint`] with a caller-chosen selection:
    /// `select` receives the sorted eligible set and returns an index into it.
    pub fn run_with(&mut self, dag: &BlockDag, mut select: impl FnMut(&[BlockRef]) -> usize) -> Vec<BlockRef> {
        self.sync(dag);
        let mut done = Vec::new();
        loop {
            let eligible = self.eligible_waiting(dag);
            if eligible.is_empty() {
                break;
            }
            let pick = eligible[select(&eligible).min(eligible.len() - 1)];
            self.interpret_block(dag, &pick).expect("eligible block interprets");
            done.push(pick);
        }
        done
    }

    pub fn take_indications(&mut self) -> Vec<IndicationEvent> {
        self.indications.drain(..).collect()
    }

    /// Digest of the instance state for `label` at `b` together with the
    /// sorted outbox for that label.
    pub fn state_digest(&self, b: &BlockRef, label: &Label) -> Result<Digest, InterpretError> {
        let slots = self.slots.get(b).ok_or(InterpretError::NotInterpreted(*b))?;
        let mut w = Writer::new();
        match slots.pis.get(label) {
            Some(inst) => inst.encode_state(&mut w),
            None => self.protocol.init(*label, slots.builder).encode_state(&mut w),
        }
        let out: Vec<Message> = slots.ms_out.get(label).map(|s| s.iter().cloned().collect()).unwrap_or_default();
        w.list(&out);
        Ok(Digest::tagged(SLOT_DOMAIN, w.as_slice()))
    }

    /// Digests for every label with an instance at `b`.
    pub fn label_digests(&self, b: &BlockRef) -> Result<BTreeMap<Label, Digest>, InterpretError> {
        let slots = self.slots.get(b).ok_or(InterpretError::NotInterpreted(*b))?;
        slots
            .pis
            .keys()
            .map(|l| self.state_digest(b, l).map(|d| (*l, d)))
            .collect()
    }

    /// Verifies that no uninterpreted dag block has slots and that no sealed
    /// block's slots changed since it was interpreted.
    pub fn audit(&self, dag: &BlockDag) -> Result<(), InterpretError> {
        if let Some(r) = self.slots.keys().find(|r| !dag.contains(r)) {
            return Err(InterpretError::UnknownBlock(*r));
        }
        if let Some(sealed) = &self.sealed {
            for (r, digest) in sealed {
                let slots = self.slots.get(r).ok_or(InterpretError::SealBroken(*r))?;
                if seal_digest(slots) != *digest {
                    return Err(InterpretError::SealBroken(*r));
                }
            }
        }
        Ok(())
    }
}

/// Adds messages to an outbox, discarding any not stamped with the builder as
/// sender; such messages would break the instance contract.
fn extend_checked(out: &mut MessageSet, msgs: Vec<Message>, builder: ServerId, stats: &mut InterpretStats) {
    for m in msgs {
        if m.sender == builder {
            out.insert(m);
        } else {
            debug_assert!(false, "instance emitted a message with a foreign sender");
            stats.rejected_messages += 1;
        }
    }
}

fn seal_digest<I: ProcessInstance>(slots: &BlockSlots<I>) -> Digest {
    let mut w = Writer::new();
    w.put(&slots.builder);
    w.len_prefix(slots.pis.len());
    for (label, inst) in &slots.pis {
        w.put(label);
        inst.encode_state(&mut w);
    }
    for map in [&slots.ms_in, &slots.ms_out] {
        w.len_prefix(map.len());
        for (label, msgs) in map {
            w.put(label).len_prefix(msgs.len());
            for m in msgs {
                w.put(m);
            }
        }
    }
    w.len_prefix(slots.live.len());
    for l in &slots.live {
        w.put(l);
    }
    Digest::tagged(SEAL_DOMAIN, w.as_slice())
}

#[cfg(test)]
impl<P: Protocol> Interpreter<P> {
    fn slots_mut(&mut self, b: &BlockRef) -> Option<&mut BlockSlots<P::Instance>> {
        self.slots.get_mut(b)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::block::Block;
    use crate::brb::{broadcast_request, deliver_indication, Brb};
    use crate::crypto::{KeyRegistry, SchemeId};

    fn two_server_dag() -> (BlockDag, Vec<BlockRef>) {
        let (reg, h) = KeyRegistry::generate(SchemeId::KeyedMac, 4, 2);
        let mut dag = BlockDag::new(ServerId(0), Arc::new(reg));
        let label = Label::new(0, 1);
        let b1 = dag
            .insert(Block::genesis(ServerId(0), vec![(label, broadcast_request(42))]).signed(&h[0]))
            .unwrap();
        let b2 = dag.insert(Block::genesis(ServerId(1), vec![]).signed(&h[1])).unwrap();
        let b3 = dag
            .insert(Block::new(ServerId(1), 1, vec![b2, b1], vec![]).signed(&h[1]))
            .unwrap();
        (dag, vec![b1, b2, b3])
    }

    #[test]
    fn eligibility_follows_predecessors() {
        let (dag, r) = two_server_dag();
        let mut it = Interpreter::new(Brb::new(4, 1));
        assert_eq!(it.eligible(&dag, &r[0]), Ok(true));
        assert_eq!(it.eligible(&dag, &r[2]), Ok(false));
        assert_eq!(it.interpret_block(&dag, &r[2]), Err(InterpretError::NotEligible(r[2])));
        it.interpret_block(&dag, &r[0]).unwrap();
        assert_eq!(it.eligible(&dag, &r[0]), Ok(false));
        assert_eq!(it.eligible(&dag, &r[2]), Ok(false));
        let ghost = BlockRef(Digest::of(b"ghost"));
        assert_eq!(it.eligible(&dag, &ghost), Err(InterpretError::UnknownBlock(ghost)));
    }

    #[test]
    fn messages_route_to_the_receiver_only() {
        let (dag, r) = two_server_dag();
        let mut it = Interpreter::new(Brb::new(4, 1));
        assert_eq!(it.run_to_fixpoint(&dag).len(), 3);
        assert!(it.run_to_fixpoint(&dag).is_empty());
        let label = Label::new(0, 1);
        let s3 = it.slots(&r[2]).unwrap();
        assert_eq!(s3.ms_in[&label].len(), 1);
        assert!(s3.ms_in[&label].iter().all(|m| m.receiver == ServerId(1) && m.sender == ServerId(0)));
        assert_eq!(s3.ms_out[&label].len(), 4);
        assert!(it.slots(&r[1]).unwrap().ms_in.is_empty());
        assert!(it.take_indications().is_empty());
        it.audit(&dag).unwrap();
    }

    #[test]
    fn absent_instance_digests_like_a_fresh_one() {
        let (dag, r) = two_server_dag();
        let label = Label::new(0, 1);
        let mut lazy = Interpreter::new(Brb::new(4, 1));
        let mut eager = Interpreter::new(Brb::new(4, 1)).with_eager_labels([label, Label::new(3, 3)]);
        lazy.run_to_fixpoint(&dag);
        eager.run_to_fixpoint(&dag);
        for b in &r {
            for l in [label, Label::new(3, 3)] {
                assert_eq!(lazy.state_digest(b, &l), eager.state_digest(b, &l));
            }
        }
        assert!(matches!(
            Interpreter::new(Brb::new(4, 1)).state_digest(&r[0], &label),
            Err(InterpretError::NotInterpreted(_))
        ));
    }

    #[test]
    fn malformed_requests_are_skipped_not_fatal() {
        let (reg, h) = KeyRegistry::generate(SchemeId::KeyedMac, 4, 2);
        let mut dag = BlockDag::new(ServerId(0), Arc::new(reg));
        let good = Label::new(0, 1);
        let bad = Label::new(0, 2);
        let b = dag
            .insert(
                Block::genesis(
                    ServerId(0),
                    vec![(bad, crate::protocol::Request(vec![0xff])), (good, broadcast_request(1))],
                )
                .signed(&h[0]),
            )
            .unwrap();
        let mut it = Interpreter::new(Brb::new(4, 1));
        it.run_to_fixpoint(&dag);
        assert_eq!(it.stats().skipped_requests, 1);
        assert_eq!(it.slots(&b).unwrap().ms_out[&good].len(), 4);
        assert!(!it.slots(&b).unwrap().ms_out.contains_key(&bad));
    }

    #[test]
    fn sealed_slots_detect_tampering() {
        let (dag, r) = two_server_dag();
        let mut it = Interpreter::new(Brb::new(4, 1)).with_sealing(true);
        it.run_to_fixpoint(&dag);
        it.audit(&dag).unwrap();
        it.slots_mut(&r[0]).unwrap().ms_out.clear();
        assert_eq!(it.audit(&dag), Err(InterpretError::SealBroken(r[0])));
    }

    #[test]
    fn delivery_surfaces_with_builder_tag() {
        // Four servers; everyone echoes, readies, and delivers over a few layers.
        let (reg, h) = KeyRegistry::generate(SchemeId::KeyedMac, 4, 2);
        let mut dag = BlockDag::new(ServerId(0), Arc::new(reg));
        let label = Label::new(0, 1);
        let mut tips: Vec<BlockRef> = Vec::new();
        for s in 0..4u32 {
            let rs = if s == 0 { vec![(label, broadcast_request(7))] } else { vec![] };
            tips.push(dag.insert(Block::genesis(ServerId(s), rs).signed(&h[s as usize])).unwrap());
        }
        for k in 1..=3u64 {
            let prev = tips.clone();
            for s in 0..4usize {
                let mut preds = vec![prev[s]];
                preds.extend(prev.iter().enumerate().filter(|(i, _)| *i != s).map(|(_, r)| *r));
                tips[s] = dag
                    .insert(Block::new(ServerId(s as u32), k, preds, vec![]).signed(&h[s]))
                    .unwrap();
            }
        }
        let mut it = Interpreter::new(Brb::new(4, 1));
        it.run_to_fixpoint(&dag);
        let events = it.take_indications();
        let mut who: Vec<ServerId> = events.iter().map(|e| e.on_behalf_of).collect();
        who.sort();
        assert_eq!(who, ServerId::all(4).collect::<Vec<_>>());
        assert!(events.iter().all(|e| e.indication == deliver_indication(7) && e.label == label));
    }
}
