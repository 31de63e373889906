//! Small hand-built, signed block DAGs used by tests, benches and the CLI.
//!
//! Servers are numbered from zero: the first server is `ServerId(0)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::block::{Block, BlockRef, ServerId};
use crate::brb::{broadcast_request, Brb, BrbMessage};
use crate::crypto::{Digest, KeyRegistry, SchemeId, SigningHandle};
use crate::dag::BlockDag;
use crate::interpret::Interpreter;
use crate::simnet::trace::{Trace, TraceEvent, SCHEMA_VERSION};
use crate::simnet::Scenario;
use crate::protocol::{Label, Message, Request};

pub const FIXTURE_KEY_SEED: u64 = 0;

/// A dag together with the blocks under readable names.
pub struct Fixture {
    pub dag: BlockDag,
    pub blocks: BTreeMap<&'static str, BlockRef>,
    pub handles: Vec<SigningHandle>,
}

impl Fixture {
    pub fn get(&self, name: &str) -> BlockRef {
        *self.blocks.get(name).unwrap_or_else(|| panic!("no fixture block {name}"))
    }

    pub fn name_of(&self, r: &BlockRef) -> Option<&'static str> {
        self.blocks.iter().find(|(_, v)| *v == r).map(|(k, _)| *k)
    }
}

struct Builder {
    dag: BlockDag,
    blocks: BTreeMap<&'static str, BlockRef>,
    handles: Vec<SigningHandle>,
}

impl Builder {
    fn new(n: usize) -> Self {
        let (reg, handles) = KeyRegistry::generate(SchemeId::KeyedMac, n, FIXTURE_KEY_SEED);
        Self { dag: BlockDag::new(ServerId(0), Arc::new(reg)), blocks: BTreeMap::new(), handles }
    }

    fn add(&mut self, name: &'static str, n: u32, k: u64, preds: &[&str], rs: Vec<(Label, Request)>) -> BlockRef {
        let preds = preds.iter().map(|p| self.blocks[p]).collect();
        let b = Block::new(ServerId(n), k, preds, rs).signed(&self.handles[n as usize]);
        let r = self.dag.insert(b).unwrap_or_else(|e| panic!("fixture block {name}: {e}"));
        self.blocks.insert(name, r);
        r
    }

    fn finish(self) -> Fixture {
        Fixture { dag: self.dag, blocks: self.blocks, handles: self.handles }
    }
}

/// Two genesis blocks and one block referencing both:
/// `B1 = (s0, k0)`, `B2 = (s1, k0)`, `B3 = (s0, k1, [B1, B2])`.
pub fn join() -> Fixture {
    let mut b = Builder::new(4);
    b.add("B1", 0, 0, &[], vec![]);
    b.add("B2", 1, 0, &[], vec![]);
    b.add("B3", 0, 1, &["B1", "B2"], vec![]);
    b.finish()
}

/// [`join`] plus an equivocating `B4 = (s0, k1, [B1, B2])` that differs from
/// `B3` only in its requests.
pub fn fork() -> Fixture {
    let mut b = Builder::new(4);
    b.add("B1", 0, 0, &[], vec![]);
    b.add("B2", 1, 0, &[], vec![]);
    b.add("B3", 0, 1, &["B1", "B2"], vec![]);
    b.add("B4", 0, 1, &["B1", "B2"], vec![(broadcast_label(), broadcast_request(7))]);
    b.finish()
}

/// The label broadcast in [`broadcast`].
pub fn broadcast_label() -> Label {
    Label::new(0, 1)
}

pub const BROADCAST_VALUE: u64 = 42;

/// Four servers running one broadcast of 42 from `s0`.
///
/// | block | builder | k | preds           |
/// |-------|---------|---|-----------------|
/// | B1    | s0      | 0 | (broadcast 42)  |
/// | G2    | s1      | 0 |                 |
/// | G3    | s2      | 0 |                 |
/// | G4    | s3      | 0 |                 |
/// | B2    | s0      | 1 | B1              |
/// | B3    | s1      | 1 | G2, B1          |
/// | B4    | s2      | 1 | G3, B1          |
/// | B5    | s3      | 1 | G4, B1          |
/// | B6    | s0      | 2 | B2, B3, B4      |
/// | B7    | s1      | 2 | B3, B2, B4      |
/// | B8    | s2      | 2 | B4, B5, B3      |
///
/// With `with_next_round`, one more block per server references B6, B7 and
/// B8 on top of its own latest block (D1..D4), after which every server has
/// delivered.
pub fn broadcast(with_next_round: bool) -> Fixture {
    let mut b = Builder::new(4);
    b.add("B1", 0, 0, &[], vec![(broadcast_label(), broadcast_request(BROADCAST_VALUE))]);
    b.add("G2", 1, 0, &[], vec![]);
    b.add("G3", 2, 0, &[], vec![]);
    b.add("G4", 3, 0, &[], vec![]);
    b.add("B2", 0, 1, &["B1"], vec![]);
    b.add("B3", 1, 1, &["G2", "B1"], vec![]);
    b.add("B4", 2, 1, &["G3", "B1"], vec![]);
    b.add("B5", 3, 1, &["G4", "B1"], vec![]);
    b.add("B6", 0, 2, &["B2", "B3", "B4"], vec![]);
    b.add("B7", 1, 2, &["B3", "B2", "B4"], vec![]);
    b.add("B8", 2, 2, &["B4", "B5", "B3"], vec![]);
    if with_next_round {
        b.add("D1", 0, 3, &["B6", "B7", "B8"], vec![]);
        b.add("D2", 1, 3, &["B7", "B6", "B8"], vec![]);
        b.add("D3", 2, 3, &["B8", "B6", "B7"], vec![]);
        b.add("D4", 3, 2, &["B5", "B6", "B7", "B8"], vec![]);
    }
    b.finish()
}

/// The trace a correct server `s0` would record after interpreting `fx` with
/// BRB for n = 4: a header for an undrained run without adversaries, the
/// requests carried by its blocks, one interpretation record per block in
/// least-ref order, then the indications. Checkers can run on it directly;
/// negative tests edit it by hand.
pub fn interpretation_trace(fx: &Fixture) -> Trace {
    let mut sc = Scenario::new(4, 1, FIXTURE_KEY_SEED, 0);
    sc.drain = false;
    let mut trace = Trace::default();
    trace.push(TraceEvent::Header { schema_version: SCHEMA_VERSION, scenario: sc });
    for r in fx.dag.insertion_order() {
        let b = fx.dag.get(r).expect("ordered block present");
        for (label, request) in &b.rs {
            trace.push(TraceEvent::Request { step: 0, server: b.n, label: *label, request: request.clone() });
        }
    }
    let mut interpreter = Interpreter::new(Brb::new(4, 1));
    let me = ServerId(0);
    for b in interpreter.run_to_fixpoint(&fx.dag) {
        trace.events.extend(TraceEvent::interpret(0, me, &fx.dag, &interpreter, &b));
    }
    for e in interpreter.take_indications() {
        trace.push(TraceEvent::Indicate {
            step: 0,
            server: me,
            label: e.label,
            surfaced: e.on_behalf_of == me,
            indication: e.indication,
            on_behalf_of: e.on_behalf_of,
            block: e.block,
        });
    }
    trace.push(TraceEvent::snapshot(0, me, &fx.dag, true));
    trace
}

/// [`interpretation_trace`] of [`broadcast`] plus a forged second block of `s1`
/// that takes `s0`'s echo from B1 again. Exactly one no-duplication
/// violation.
pub fn duplicate_delivery_trace() -> Trace {
    let fx = broadcast(true);
    let mut trace = interpretation_trace(&fx);
    let b3 = fx.get("B3");
    let mut forged = trace
        .events
        .iter()
        .find(|e| matches!(e, TraceEvent::Interpret { block, .. } if *block == b3))
        .cloned()
        .expect("B3 is interpreted");
    if let TraceEvent::Interpret { block, k, .. } = &mut forged {
        *block = BlockRef(Digest::of(b"forged duplicate"));
        *k = 2;
    }
    let at = trace.events.iter().rposition(|e| matches!(e, TraceEvent::Interpret { .. })).expect("interpretations");
    trace.events.insert(at + 1, forged);
    trace
}

/// [`interpretation_trace`] of [`broadcast`] where B6's inbox holds a READY from
/// `s3` that no block of `s3` sent. Exactly one authenticity violation.
pub fn unauthentic_trace() -> Trace {
    let fx = broadcast(true);
    let mut trace = interpretation_trace(&fx);
    let b6 = fx.get("B6");
    for e in &mut trace.events {
        if let TraceEvent::Interpret { block, labels, .. } = e {
            if *block == b6 {
                let m = Message::new(ServerId(3), ServerId(0), BrbMessage::Ready(BROADCAST_VALUE).encode());
                labels[0].inbox.push(m);
            }
        }
    }
    trace
}
