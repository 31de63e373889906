//! Scripted byzantine servers.
//!
//! An adversary keeps a real [`Gossip`] so it can validate incoming blocks and
//! answer FWD requests, but builds its own blocks by hand so it can fork,
//! duplicate references or withhold. It holds only its own signing key.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{Block, BlockRef, ServerId};
use crate::brb::{broadcast_request, decode_request};
use crate::crypto::{Digest, KeyRegistry, SigningHandle};
use crate::gossip::{Gossip, GossipConfig, Payload, WireEnvelope};
use crate::protocol::{Label, Request};

use super::scenario::BehaviorSpec;

/// Queued envelopes beyond this are discarded.
const OUTBOX_CAP: usize = 256;

struct Chain {
    last: Option<BlockRef>,
    k: u64,
    targets: Vec<ServerId>,
    /// Refs inserted since this chain's last block.
    fresh: Vec<BlockRef>,
    /// Whether requests on this chain get their values perturbed.
    conflicting: bool,
    /// Requests added to this chain's next block only.
    extra: Vec<(Label, Request)>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdversaryParams {
    pub gossip: GossipConfig,
    pub seed: u64,
    /// Envelopes per step.
    pub budget: usize,
    pub every_k: u64,
}

/// Bytes an adversary wants to put on the wire.
pub struct Outgoing {
    pub to: ServerId,
    pub bytes: Vec<u8>,
}

pub struct Adversary {
    me: ServerId,
    n: usize,
    spec: BehaviorSpec,
    handle: SigningHandle,
    gossip: Gossip,
    rng: ChaCha8Rng,
    chains: Vec<Chain>,
    requests: Vec<(Label, Request)>,
    outbox: VecDeque<Outgoing>,
    budget: usize,
    every_k: u64,
    forked: bool,
}

impl Adversary {
    pub fn new(spec: BehaviorSpec, handle: SigningHandle, registry: Arc<KeyRegistry>, params: AdversaryParams) -> Self {
        let AdversaryParams { gossip: config, seed, budget, every_k } = params;
        let me = handle.server();
        let n = registry.len();
        let targets = match &spec {
            BehaviorSpec::SelectiveSend { targets } => targets.clone(),
            _ => ServerId::all(n).filter(|s| *s != me).collect(),
        };
        let gossip = Gossip::new(handle.clone(), registry, config);
        Self {
            me,
            n,
            handle,
            gossip,
            rng: ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(u64::from(me.0) + 1))),
            chains: vec![Chain { last: None, k: 0, targets, fresh: Vec::new(), conflicting: false, extra: Vec::new() }],
            requests: Vec::new(),
            outbox: VecDeque::new(),
            budget,
            every_k,
            spec,
            forked: false,
        }
    }

    pub fn id(&self) -> ServerId {
        self.me
    }

    pub fn spec(&self) -> &BehaviorSpec {
        &self.spec
    }

    fn active(&self, now: u64) -> bool {
        match self.spec {
            BehaviorSpec::Silent => false,
            BehaviorSpec::CrashAt { step } => now < step,
            _ => true,
        }
    }

    pub fn request(&mut self, label: Label, req: Request) {
        self.requests.push((label, req));
    }

    fn enqueue(&mut self, to: ServerId, env: &WireEnvelope) {
        self.enqueue_bytes(to, env.encode());
    }

    fn enqueue_bytes(&mut self, to: ServerId, bytes: Vec<u8>) {
        if self.outbox.len() < OUTBOX_CAP {
            self.outbox.push_back(Outgoing { to, bytes });
        }
    }

    fn may_send_to(&self, to: ServerId) -> bool {
        match &self.spec {
            BehaviorSpec::SelectiveSend { targets } => targets.contains(&to),
            _ => true,
        }
    }

    pub fn on_packet(&mut self, now: u64, from: ServerId, bytes: &[u8]) {
        if !self.active(now) {
            return;
        }
        let Ok(env) = WireEnvelope::decode(bytes) else {
            return;
        };
        match env.payload {
            Payload::Block(b) => {
                self.gossip.on_receive_block(b);
            }
            Payload::Fwd(r) => {
                if self.may_send_to(from) {
                    if let Some(reply) = self.gossip.on_fwd_request(&r, from) {
                        self.enqueue(from, &reply);
                    }
                }
            }
        }
    }

    /// One step of scripted behavior; returns what goes on the wire now.
    pub fn step(&mut self, now: u64) -> Vec<Outgoing> {
        if !self.active(now) {
            self.outbox.clear();
            return Vec::new();
        }
        let promoted = self.gossip.try_promote().inserted;
        for c in &mut self.chains {
            c.fresh.extend(promoted.iter().copied());
        }
        for env in self.gossip.request_missing(now) {
            if self.may_send_to(env.to) {
                self.enqueue(env.to, &env);
            }
        }
        if now.is_multiple_of(self.every_k) {
            self.build_round();
        }
        if self.spec == BehaviorSpec::Garbage {
            self.emit_garbage(now);
        }
        let take = self.budget.min(self.outbox.len());
        self.outbox.drain(..take).collect()
    }

    fn build_round(&mut self) {
        if self.spec == BehaviorSpec::Equivocate && !self.forked && self.chains[0].last.is_some() {
            self.fork();
        }
        let requests = std::mem::take(&mut self.requests);
        for i in 0..self.chains.len() {
            let mut rs: Vec<(Label, Request)> = if self.chains[i].conflicting {
                requests.iter().map(|(l, r)| (*l, perturb(r))).collect()
            } else {
                requests.clone()
            };
            let chain = &mut self.chains[i];
            rs.append(&mut chain.extra);
            let mut preds: Vec<BlockRef> = chain.last.into_iter().collect();
            preds.append(&mut chain.fresh);
            if self.spec == BehaviorSpec::DuplicateRefs {
                preds = preds.iter().flat_map(|p| [*p, *p]).collect();
            }
            let block = Block::new(self.me, chain.k, preds, rs).signed(&self.handle);
            let r = self.gossip.adopt(block.clone()).expect("adversary builds valid blocks");
            chain.last = Some(r);
            chain.k += 1;
            let targets = chain.targets.clone();
            for c in &mut self.chains {
                c.fresh.retain(|x| *x != r);
            }
            for to in targets {
                let env = WireEnvelope { from: self.me, to, payload: Payload::Block(block.clone()) };
                self.enqueue(to, &env);
            }
        }
    }

    /// Splits the single chain into two with the same parent, each sent to
    /// one half of the other servers. The second half sees perturbed requests
    /// plus an extra broadcast of its own.
    fn fork(&mut self) {
        let base = self.chains.pop().expect("one chain before forking");
        let others: Vec<ServerId> = ServerId::all(self.n).filter(|s| *s != self.me).collect();
        let half = others.len().div_ceil(2);
        let a = Chain {
            last: base.last,
            k: base.k,
            targets: others[..half].to_vec(),
            fresh: base.fresh.clone(),
            conflicting: false,
            extra: Vec::new(),
        };
        let b = Chain {
            last: base.last,
            k: base.k,
            targets: others[half..].to_vec(),
            fresh: base.fresh,
            conflicting: true,
            extra: vec![(Label { originator: self.me, nonce: u64::MAX }, broadcast_request(0))],
        };
        self.chains = vec![a, b];
        self.forked = true;
    }

    fn emit_garbage(&mut self, now: u64) {
        let to = ServerId(self.rng.gen_range(0..self.n as u32));
        let len = self.rng.gen_range(1..64);
        let mut junk = vec![0u8; len];
        self.rng.fill_bytes(&mut junk);
        self.enqueue_bytes(to, junk);

        if now % 3 == 1 {
            let mut bogus = [0u8; 32];
            self.rng.fill_bytes(&mut bogus);
            let mut b = Block::genesis(self.me, vec![]);
            b.k = 1 + now;
            b.sigma = Some(self.handle.sign(&Digest(bogus)));
            let env = WireEnvelope { from: self.me, to, payload: Payload::Block(b) };
            self.enqueue(to, &env);
        }
        if now % 5 == 2 {
            let mut ghost = [0u8; 32];
            self.rng.fill_bytes(&mut ghost);
            let b = Block::new(self.me, 1_000_000 + now, vec![BlockRef(Digest(ghost))], vec![])
                .signed(&self.handle);
            let env = WireEnvelope { from: self.me, to, payload: Payload::Block(b) };
            self.enqueue(to, &env);
        }
    }
}

fn perturb(req: &Request) -> Request {
    match decode_request(req) {
        Ok(v) => broadcast_request(v.wrapping_add(1)),
        Err(_) => req.clone(),
    }
}
