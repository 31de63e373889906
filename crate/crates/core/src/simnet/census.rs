//! What went over the wire versus what the interpretation materialized.
//!
//! There is no envelope kind for protocol messages, so their wire count is
//! zero by construction; the census still counts it from the trace so the
//! claim is checked rather than assumed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::block::BlockRef;
use crate::protocol::Label;

use super::trace::{Trace, TraceEvent, WireKind};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    pub block_envelopes: u64,
    /// BLOCK envelopes sent by a builder disseminating its own block.
    pub disseminated: u64,
    /// BLOCK envelopes answering FWD requests.
    pub forwarded: u64,
    pub fwd_envelopes: u64,
    /// Packets that do not decode as an envelope; only byzantine servers
    /// send these.
    pub raw_packets: u64,
    /// Packets whose envelope carries a protocol message. Always zero.
    pub protocol_messages_on_wire: u64,
    /// Distinct (block, label, message) outbox entries across all
    /// interpreters, never sent anywhere.
    pub materialized: u64,
    pub materialized_by_label: BTreeMap<Label, u64>,
    /// Labels with at least one surfaced indication at some server.
    pub delivered_labels: BTreeSet<Label>,
    /// Blocks built by correct servers.
    pub correct_blocks: u64,
}

impl Census {
    /// Materialized messages per delivered label; `None` if nothing was
    /// delivered.
    pub fn materialized_per_delivery(&self) -> Option<f64> {
        (!self.delivered_labels.is_empty())
            .then(|| self.materialized as f64 / self.delivered_labels.len() as f64)
    }

    pub fn wire_envelopes(&self) -> u64 {
        self.block_envelopes + self.fwd_envelopes
    }
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "BLOCK envelopes: {} (disseminated {}, forwarded {})",
            self.block_envelopes, self.disseminated, self.forwarded
        )?;
        writeln!(f, "FWD envelopes: {}", self.fwd_envelopes)?;
        writeln!(f, "raw packets: {}", self.raw_packets)?;
        writeln!(f, "protocol messages on wire: {}", self.protocol_messages_on_wire)?;
        writeln!(f, "materialized messages: {}", self.materialized)?;
        writeln!(f, "delivered labels: {}", self.delivered_labels.len())?;
        write!(f, "correct blocks built: {}", self.correct_blocks)?;
        if let Some(r) = self.materialized_per_delivery() {
            write!(f, "\nmaterialized per delivered label: {r:.1}")?;
        }
        Ok(())
    }
}

pub fn message_census(trace: &Trace) -> Census {
    let mut c = Census::default();
    let correct: BTreeSet<_> = trace.scenario().map(|s| s.correct_servers().into_iter().collect()).unwrap_or_default();
    let mut counted: BTreeSet<BlockRef> = BTreeSet::new();
    for e in &trace.events {
        match e {
            TraceEvent::Send { envelope, forwarded, .. } => match envelope {
                WireKind::Block => {
                    c.block_envelopes += 1;
                    if *forwarded {
                        c.forwarded += 1;
                    } else {
                        c.disseminated += 1;
                    }
                }
                WireKind::Fwd => c.fwd_envelopes += 1,
                WireKind::Raw => c.raw_packets += 1,
            },
            TraceEvent::Interpret { block, labels, .. } => {
                if counted.insert(*block) {
                    for r in labels {
                        let n = r.outbox.len() as u64;
                        c.materialized += n;
                        *c.materialized_by_label.entry(r.label).or_default() += n;
                    }
                }
            }
            TraceEvent::Indicate { label, surfaced: true, .. } => {
                c.delivered_labels.insert(*label);
            }
            TraceEvent::Insert { server, .. } if correct.contains(server) => c.correct_blocks += 1,
            _ => {}
        }
    }
    c
}
