//! The user-facing server: requests in, indications out.
//!
//! Wires one [`Gossip`] and one [`Interpreter`] around a shared dag and
//! request buffer. The interpreter simulates every server's instances, so it
//! raises indications on behalf of everyone; only those for this server reach
//! the user.

use std::sync::Arc;

use crate::block::{BlockRef, ServerId};
use crate::crypto::{KeyRegistry, SigningHandle};
use crate::gossip::{Disseminated, Gossip, GossipConfig};
use crate::interpret::{IndicationEvent, Interpreter};
use crate::protocol::{Indication, Label, Protocol, Request};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShimConfig {
    /// Disseminate on every step divisible by this.
    pub every_k_steps: u64,
    pub gossip: GossipConfig,
}

impl Default for ShimConfig {
    fn default() -> Self {
        Self { every_k_steps: 3, gossip: GossipConfig::default() }
    }
}

/// Outcome of one interpretation pass.
#[derive(Debug, Clone, Default)]
pub struct InterpretRound {
    pub interpreted: Vec<BlockRef>,
    pub surfaced: Vec<IndicationEvent>,
    pub filtered: Vec<IndicationEvent>,
}

pub struct Shim<P: Protocol> {
    gossip: Gossip,
    interpreter: Interpreter<P>,
    config: ShimConfig,
    delivered: Vec<(Label, Indication)>,
    filtered: u64,
}

impl<P: Protocol> Shim<P> {
    pub fn new(protocol: P, handle: SigningHandle, registry: Arc<KeyRegistry>, config: ShimConfig) -> Self {
        assert!(config.every_k_steps > 0, "every_k_steps must be positive");
        Self {
            gossip: Gossip::new(handle, registry, config.gossip),
            interpreter: Interpreter::new(protocol),
            config,
            delivered: Vec::new(),
            filtered: 0,
        }
    }

    pub fn id(&self) -> ServerId {
        self.gossip.id()
    }

    pub fn gossip(&self) -> &Gossip {
        &self.gossip
    }

    pub fn gossip_mut(&mut self) -> &mut Gossip {
        &mut self.gossip
    }

    pub fn interpreter(&self) -> &Interpreter<P> {
        &self.interpreter
    }

    pub fn config(&self) -> &ShimConfig {
        &self.config
    }

    /// Indications surfaced to the user so far, in order.
    pub fn delivered(&self) -> &[(Label, Indication)] {
        &self.delivered
    }

    pub fn filtered_count(&self) -> u64 {
        self.filtered
    }

    pub fn request(&mut self, label: Label, req: Request) {
        self.gossip.put_request(label, req);
    }

    /// Disseminates when `now` falls on the cadence.
    pub fn tick(&mut self, now: u64) -> Option<Disseminated> {
        now.is_multiple_of(self.config.every_k_steps).then(|| self.gossip.disseminate())
    }

    /// Surfaces the indication iff it was raised on behalf of this server.
    pub fn on_interpret_indication(&mut self, ev: &IndicationEvent) -> Option<(Label, Indication)> {
        if ev.on_behalf_of == self.id() {
            let out = (ev.label, ev.indication.clone());
            self.delivered.push(out.clone());
            Some(out)
        } else {
            self.filtered += 1;
            None
        }
    }

    /// Interprets everything currently eligible and routes the indications.
    pub fn interpret(&mut self) -> InterpretRound {
        let interpreted = self.interpreter.run_to_fixpoint(self.gossip.dag());
        let mut round = InterpretRound { interpreted, ..InterpretRound::default() };
        for ev in self.interpreter.take_indications() {
            if self.on_interpret_indication(&ev).is_some() {
                round.surfaced.push(ev);
            } else {
                round.filtered.push(ev);
            }
        }
        round
    }
}
