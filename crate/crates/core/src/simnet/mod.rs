//! Deterministic discrete-event simulation of a full deployment.
//!
//! Correct servers run [`Shim`] over [`Brb`]; byzantine servers run a
//! scripted [`Adversary`]. Time is an integer step. Within a step:
//!
//! 1. packets due at this step are delivered,
//! 2. scheduled requests are injected,
//! 3. each correct server, in id order, promotes pending blocks, requests
//!    missing predecessors, disseminates on its cadence and interprets,
//! 4. adversaries act,
//! 5. snapshots are taken.
//!
//! After `max_steps`, a drained run continues in two phases. The settle phase
//! keeps everything running until correct interpreters stop materializing
//! messages and request buffers are empty for a quiet window. The flush phase
//! stops dissemination and adversaries and keeps delivering and answering
//! FWD requests until no traffic to correct servers remains for a second
//! quiet window.

pub mod adversary;
pub mod census;
pub mod check;
pub mod gen;
pub mod network;
pub mod scenario;
pub mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::block::{BlockRef, ServerId};
use crate::brb::{broadcast_request, Brb};
use crate::crypto::KeyRegistry;
use crate::dag::BlockDag;
use crate::gossip::{GossipConfig, Payload, ReceiveOutcome, WireEnvelope};
use crate::protocol::{Indication, Label};
use crate::shim::{Shim, ShimConfig};

use adversary::{Adversary, AdversaryParams};
use network::Network;
pub use scenario::{BehaviorSpec, ConfigError, Scenario, ScheduledRequest};
use trace::{DropReason, Trace, TraceEvent, WireKind, SCHEMA_VERSION};

enum Node {
    Correct(Box<Shim<Brb>>),
    Byzantine(Box<Adversary>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Main,
    Settle,
    Flush,
}

/// Everything a run produces besides the trace itself.
pub struct SimOutput {
    pub trace: Trace,
    /// Final dag of each correct server.
    pub finals: BTreeMap<ServerId, BlockDag>,
    /// Dag size of each correct server at each snapshot step.
    pub snapshots: BTreeMap<ServerId, Vec<(u64, usize)>>,
    /// Dag size of each correct server when the main phase ended.
    pub main_phase_len: BTreeMap<ServerId, usize>,
    pub delivered: BTreeMap<ServerId, Vec<(Label, Indication)>>,
    pub steps: u64,
    /// False if a drain phase hit its step limit.
    pub drained: bool,
}

impl SimOutput {
    /// A correct server's dag as it was at the end of the main phase.
    pub fn main_phase_dag(&self, s: ServerId) -> Option<BlockDag> {
        Some(self.finals.get(&s)?.prefix(*self.main_phase_len.get(&s)?))
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    nodes: Vec<Node>,
    net: Network,
    trace: Trace,
    snapshots: BTreeMap<ServerId, Vec<(u64, usize)>>,
    materialized: u64,
    delivered_to_correct: u64,
}

pub fn run(sc: &Scenario) -> Result<SimOutput, ConfigError> {
    sc.validate()?;
    let (registry, handles) = KeyRegistry::generate(sc.scheme, sc.n, sc.seed);
    let registry = Arc::new(registry);
    let gossip = GossipConfig {
        max_rs_per_block: sc.max_rs_per_block,
        fwd_interval: sc.fwd_interval,
        max_pending_per_builder: sc.max_pending_per_builder,
    };
    let nodes = handles
        .into_iter()
        .map(|h| match sc.byzantine.get(&h.server()) {
            None => Node::Correct(Box::new(Shim::new(
                Brb::new(sc.n, sc.f),
                h,
                registry.clone(),
                ShimConfig { every_k_steps: sc.every_k_steps, gossip },
            ))),
            Some(spec) => Node::Byzantine(Box::new(Adversary::new(
                spec.clone(),
                h,
                registry.clone(),
                AdversaryParams { gossip, seed: sc.seed, budget: sc.adversary_budget, every_k: sc.every_k_steps },
            ))),
        })
        .collect();
    let mut sim = Sim {
        sc,
        nodes,
        net: Network::new(sc.seed, sc.delay_bounds),
        trace: Trace::default(),
        snapshots: BTreeMap::new(),
        materialized: 0,
        delivered_to_correct: 0,
    };
    sim.trace.push(TraceEvent::Header { schema_version: SCHEMA_VERSION, scenario: sc.clone() });
    Ok(sim.run())
}

fn classify(bytes: &[u8]) -> (WireKind, Option<WireEnvelope>) {
    match WireEnvelope::decode(bytes) {
        Ok(env) => {
            let kind = match env.payload {
                Payload::Block(_) => WireKind::Block,
                Payload::Fwd(_) => WireKind::Fwd,
            };
            (kind, Some(env))
        }
        Err(_) => (WireKind::Raw, None),
    }
}

impl Sim<'_> {
    fn run(mut self) -> SimOutput {
        let sc = self.sc;
        let mut now = 0;
        while now < sc.max_steps {
            self.step(now, Phase::Main);
            now += 1;
        }
        let main_phase_len = self.correct().map(|s| (s.id(), s.gossip().dag().len())).collect();

        let mut drained = true;
        if sc.drain {
            let hop = sc.every_k_steps + 3 * sc.max_delay() + sc.fwd_interval;
            let settle_window = 2 * hop;
            let limit = now + sc.drain_limit;
            let mut quiet = 0;
            while quiet < settle_window && now < limit {
                self.materialized = 0;
                self.step(now, Phase::Settle);
                let busy = self.materialized > 0 || self.correct().any(|s| !s.gossip().requests().is_empty());
                quiet = if busy { 0 } else { quiet + 1 };
                now += 1;
            }
            drained &= quiet >= settle_window;

            let flush_window = sc.fwd_interval + 2 * sc.max_delay() + 1;
            let limit = now + sc.drain_limit;
            let mut quiet = 0;
            while quiet < flush_window && now < limit {
                self.delivered_to_correct = 0;
                self.step(now, Phase::Flush);
                let in_flight = self.net.in_flight_where(|p| sc.is_correct(p.to));
                let busy = self.delivered_to_correct > 0 || in_flight > 0;
                quiet = if busy { 0 } else { quiet + 1 };
                now += 1;
            }
            drained &= quiet >= flush_window;
        }

        let last = now.saturating_sub(1);
        let mut finals = BTreeMap::new();
        let mut delivered = BTreeMap::new();
        for node in &self.nodes {
            if let Node::Correct(s) = node {
                let dag = s.gossip().dag();
                self.trace.push(TraceEvent::snapshot(last, s.id(), dag, true));
                finals.insert(s.id(), dag.clone());
                delivered.insert(s.id(), s.delivered().to_vec());
            }
        }
        SimOutput {
            trace: self.trace,
            finals,
            snapshots: self.snapshots,
            main_phase_len,
            delivered,
            steps: now,
            drained,
        }
    }

    fn correct(&self) -> impl Iterator<Item = &Shim<Brb>> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Correct(s) => Some(s.as_ref()),
            Node::Byzantine(_) => None,
        })
    }

    fn send(&mut self, now: u64, from: ServerId, to: ServerId, bytes: Vec<u8>, forwarded: bool) {
        let (envelope, env) = classify(&bytes);
        let (block, fwd) = match env.map(|e| e.payload) {
            Some(Payload::Block(b)) => (Some(b.block_ref()), None),
            Some(Payload::Fwd(r)) => (None, Some(r)),
            None => (None, None),
        };
        let len = bytes.len();
        let p = self.net.send(from, to, bytes, now);
        let (id, deliver_at) = (p.id, p.deliver_at);
        self.trace.push(TraceEvent::Send { step: now, id, from, to, envelope, block, fwd, bytes: len, deliver_at, forwarded });
    }

    fn step(&mut self, now: u64, phase: Phase) {
        for pkt in self.net.take_due(now) {
            let (envelope, env) = classify(&pkt.bytes);
            self.trace.push(TraceEvent::Deliver {
                step: now,
                id: pkt.id,
                from: pkt.from,
                to: pkt.to,
                envelope,
                sent_at: pkt.sent_at,
            });
            match &mut self.nodes[pkt.to.index()] {
                Node::Correct(_) => {
                    self.delivered_to_correct += 1;
                    self.deliver_correct(now, pkt.from, pkt.to, env, &pkt.bytes);
                }
                Node::Byzantine(adv) => {
                    if phase != Phase::Flush {
                        adv.on_packet(now, pkt.from, &pkt.bytes);
                    }
                }
            }
        }

        let sc = self.sc;
        for r in sc.requests.iter().filter(|r| r.step == now) {
            let req = broadcast_request(r.value);
            self.trace.push(TraceEvent::Request { step: now, server: r.server, label: r.label, request: req.clone() });
            match &mut self.nodes[r.server.index()] {
                Node::Correct(s) => s.request(r.label, req),
                Node::Byzantine(a) => a.request(r.label, req),
            }
        }

        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i], Node::Correct(_)) {
                self.correct_step(now, i, phase);
            }
        }

        if phase != Phase::Flush {
            for i in 0..self.nodes.len() {
                let out = match &mut self.nodes[i] {
                    Node::Byzantine(adv) => adv.step(now),
                    Node::Correct(_) => continue,
                };
                for o in out {
                    self.send(now, ServerId(i as u32), o.to, o.bytes, false);
                }
            }
        }

        if phase == Phase::Main && sc.snapshot_steps.contains(&now) {
            let mut events = Vec::new();
            for s in self.correct() {
                events.push(TraceEvent::snapshot(now, s.id(), s.gossip().dag(), false));
            }
            for ev in events {
                if let TraceEvent::Snapshot { server, blocks, .. } = &ev {
                    self.snapshots.entry(*server).or_default().push((now, blocks.len()));
                }
                self.trace.push(ev);
            }
        }
    }

    fn shim_mut(&mut self, i: usize) -> &mut Shim<Brb> {
        match &mut self.nodes[i] {
            Node::Correct(s) => s,
            Node::Byzantine(_) => unreachable!("server {i} is byzantine"),
        }
    }

    fn deliver_correct(&mut self, now: u64, from: ServerId, me: ServerId, env: Option<WireEnvelope>, bytes: &[u8]) {
        let drop = |reason, block, detail| TraceEvent::Drop { step: now, server: me, reason, block, detail };
        let Some(env) = env else {
            let detail = WireEnvelope::decode(bytes).err().map(|e| e.to_string());
            self.trace.push(drop(DropReason::Undecodable, None, detail));
            return;
        };
        if env.to != me || env.from != from {
            let detail = Some(format!("envelope {}->{} on link {}->{}", env.from, env.to, from, me));
            self.trace.push(drop(DropReason::Misaddressed, None, detail));
            return;
        }
        match env.payload {
            Payload::Block(b) => {
                let r = b.block_ref();
                let shim = self.shim_mut(me.index());
                let evicted_before = shim.gossip().stats().evicted;
                let outcome = shim.gossip_mut().on_receive_block(b);
                let evicted = shim.gossip().stats().evicted - evicted_before;
                match outcome {
                    ReceiveOutcome::BadSignature => self.trace.push(drop(DropReason::BadSignature, Some(r), None)),
                    ReceiveOutcome::UnknownBuilder => self.trace.push(drop(DropReason::UnknownBuilder, Some(r), None)),
                    _ => {}
                }
                if evicted > 0 {
                    self.trace.push(drop(DropReason::Evicted, None, Some(format!("{evicted} pending blocks"))));
                }
            }
            Payload::Fwd(r) => {
                let reply = self.shim_mut(me.index()).gossip_mut().on_fwd_request(&r, from);
                if let Some(reply) = reply {
                    self.trace.push(TraceEvent::FwdResp { step: now, from: me, to: from, block: r });
                    self.send(now, me, from, reply.encode(), true);
                }
            }
        }
    }

    fn correct_step(&mut self, now: u64, i: usize, phase: Phase) {
        let me = ServerId(i as u32);
        let shim = self.shim_mut(i);
        let promotion = shim.gossip_mut().try_promote();
        let fwds = shim.gossip_mut().request_missing(now);
        let disseminated = if phase == Phase::Flush { None } else { shim.tick(now) };
        let round = shim.interpret();

        let shim = match &self.nodes[i] {
            Node::Correct(s) => s.as_ref(),
            Node::Byzantine(_) => unreachable!(),
        };
        let dag = shim.gossip().dag();
        let mut events = Vec::new();
        for r in &promotion.inserted {
            let b = dag.get(r).expect("promoted block is in the dag");
            events.push(TraceEvent::Promote { step: now, server: me, block: *r, builder: b.n, k: b.k });
        }
        for (r, reason) in &promotion.rejected {
            events.push(TraceEvent::Drop {
                step: now,
                server: me,
                reason: DropReason::Invalid,
                block: Some(*r),
                detail: Some(reason.to_string()),
            });
        }
        for env in &fwds {
            if let Payload::Fwd(missing) = env.payload {
                events.push(TraceEvent::FwdReq { step: now, from: me, to: env.to, missing });
            }
        }
        if let Some(d) = &disseminated {
            events.push(TraceEvent::Insert { step: now, server: me, block: trace::BlockInfo::of(&d.block) });
        }
        let mut materialized = 0;
        for b in &round.interpreted {
            if let Some(slots) = shim.interpreter().slots(b) {
                materialized += slots.ms_out.values().map(|s| s.len() as u64).sum::<u64>();
            }
            events.extend(TraceEvent::interpret(now, me, dag, shim.interpreter(), b));
        }
        let skipped = shim.interpreter().stats().skipped_requests;
        let mut indications: Vec<_> = round.surfaced.iter().map(|e| (e, true)).collect();
        indications.extend(round.filtered.iter().map(|e| (e, false)));
        indications.sort_by_key(|(e, _)| position(&round.interpreted, &e.block));
        for (e, surfaced) in indications {
            events.push(TraceEvent::Indicate {
                step: now,
                server: me,
                label: e.label,
                indication: e.indication.clone(),
                on_behalf_of: e.on_behalf_of,
                block: e.block,
                surfaced,
            });
        }
        self.materialized += materialized;
        self.trace.events.extend(events);
        let _ = skipped;

        for env in fwds {
            self.send(now, me, env.to, env.encode(), false);
        }
        if let Some(d) = disseminated {
            for env in d.envelopes {
                self.send(now, me, env.to, env.encode(), false);
            }
        }
    }
}

fn position(order: &[BlockRef], b: &BlockRef) -> usize {
    order.iter().position(|x| x == b).unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn honest(seed: u64) -> Scenario {
        let mut sc = Scenario::new(4, 1, seed, 15);
        sc.requests.push(ScheduledRequest { step: 0, server: ServerId(0), label: Label::new(0, 1), value: 42 });
        sc
    }

    #[test]
    fn honest_run_delivers_everywhere() {
        let out = run(&honest(1)).unwrap();
        assert!(out.drained);
        for (s, d) in &out.delivered {
            assert_eq!(d, &vec![(Label::new(0, 1), crate::brb::deliver_indication(42))], "server {s}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run(&honest(9)).unwrap().trace.to_jsonl();
        let b = run(&honest(9)).unwrap().trace.to_jsonl();
        assert_eq!(a, b);
        assert_ne!(a, run(&honest(10)).unwrap().trace.to_jsonl());
    }

    #[test]
    fn config_errors_surface_before_running() {
        let mut sc = honest(0);
        sc.n = 5;
        assert!(matches!(run(&sc), Err(ConfigError::BadQuorum { .. })));
    }
}
