//! Simulation traces: one JSON object per line, tagged by `kind`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{Block, BlockRef, ServerId};
use crate::crypto::Digest;
use crate::dag::BlockDag;
use crate::dot::{self, DotNode};
use crate::interpret::Interpreter;
use crate::protocol::{Indication, Label, Message, Protocol, Request};

use super::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WireKind {
    Block,
    Fwd,
    /// Bytes that do not decode as an envelope.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Undecodable,
    Misaddressed,
    BadSignature,
    UnknownBuilder,
    Invalid,
    Evicted,
    SkippedRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub block: BlockRef,
    pub n: ServerId,
    pub k: u64,
    /// As listed by the builder, repeats included.
    pub preds: Vec<BlockRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rs: Vec<(Label, Request)>,
}

impl BlockInfo {
    pub fn of(b: &Block) -> Self {
        Self { block: b.block_ref(), n: b.n, k: b.k, preds: b.preds.clone(), rs: b.rs.clone() }
    }

    pub fn without_requests(b: &Block) -> Self {
        Self { rs: Vec::new(), ..Self::of(b) }
    }

    pub fn dot_node(&self) -> DotNode {
        let mut preds = self.preds.clone();
        let mut seen = std::collections::BTreeSet::new();
        preds.retain(|p| seen.insert(*p));
        DotNode { block: self.block, n: self.n, k: self.k, preds }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub label: Label,
    #[serde(default)]
    pub inbox: Vec<Message>,
    #[serde(default)]
    pub outbox: Vec<Message>,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Header {
        schema_version: u32,
        scenario: Scenario,
    },
    Request {
        step: u64,
        server: ServerId,
        label: Label,
        request: Request,
    },
    Send {
        step: u64,
        id: u64,
        from: ServerId,
        to: ServerId,
        envelope: WireKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<BlockRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fwd: Option<BlockRef>,
        bytes: usize,
        deliver_at: u64,
        /// A BLOCK envelope answering a FWD request.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        forwarded: bool,
    },
    Deliver {
        step: u64,
        id: u64,
        from: ServerId,
        to: ServerId,
        envelope: WireKind,
        sent_at: u64,
    },
    Drop {
        step: u64,
        server: ServerId,
        reason: DropReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<BlockRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    /// A server's own block, built and inserted.
    Insert {
        step: u64,
        server: ServerId,
        block: BlockInfo,
    },
    /// A received block moved from pending into the dag.
    Promote {
        step: u64,
        server: ServerId,
        block: BlockRef,
        builder: ServerId,
        k: u64,
    },
    FwdReq {
        step: u64,
        from: ServerId,
        to: ServerId,
        missing: BlockRef,
    },
    FwdResp {
        step: u64,
        from: ServerId,
        to: ServerId,
        block: BlockRef,
    },
    Interpret {
        step: u64,
        server: ServerId,
        block: BlockRef,
        builder: ServerId,
        k: u64,
        /// Distinct predecessors.
        preds: Vec<BlockRef>,
        labels: Vec<LabelRecord>,
    },
    Indicate {
        step: u64,
        server: ServerId,
        label: Label,
        indication: Indication,
        on_behalf_of: ServerId,
        block: BlockRef,
        surfaced: bool,
    },
    Snapshot {
        step: u64,
        server: ServerId,
        #[serde(rename = "final")]
        is_final: bool,
        blocks: Vec<BlockInfo>,
    },
}

impl TraceEvent {
    pub fn step(&self) -> Option<u64> {
        match self {
            TraceEvent::Header { .. } => None,
            TraceEvent::Request { step, .. }
            | TraceEvent::Send { step, .. }
            | TraceEvent::Deliver { step, .. }
            | TraceEvent::Drop { step, .. }
            | TraceEvent::Insert { step, .. }
            | TraceEvent::Promote { step, .. }
            | TraceEvent::FwdReq { step, .. }
            | TraceEvent::FwdResp { step, .. }
            | TraceEvent::Interpret { step, .. }
            | TraceEvent::Indicate { step, .. }
            | TraceEvent::Snapshot { step, .. } => Some(*step),
        }
    }

    /// The interpretation record of `b` as computed by `interpreter`.
    pub fn interpret<P: Protocol>(
        step: u64,
        server: ServerId,
        dag: &BlockDag,
        interpreter: &Interpreter<P>,
        b: &BlockRef,
    ) -> Option<TraceEvent> {
        let block = dag.get(b)?;
        let slots = interpreter.slots(b)?;
        let labels = slots
            .pis
            .keys()
            .map(|label| LabelRecord {
                label: *label,
                inbox: slots.ms_in.get(label).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
                outbox: slots.ms_out.get(label).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
                digest: interpreter.state_digest(b, label).expect("interpreted"),
            })
            .collect();
        Some(TraceEvent::Interpret {
            step,
            server,
            block: *b,
            builder: block.n,
            k: block.k,
            preds: block.distinct_preds(),
            labels,
        })
    }

    pub fn snapshot(step: u64, server: ServerId, dag: &BlockDag, is_final: bool) -> TraceEvent {
        let blocks = dag
            .insertion_order()
            .iter()
            .map(|r| BlockInfo::without_requests(dag.get(r).expect("ordered block present")))
            .collect();
        TraceEvent::Snapshot { step, server, is_final, blocks }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::Header { scenario, .. } => Some(scenario),
            _ => None,
        })
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("json is utf-8")
    }

    /// Parses JSON lines; blank lines are skipped. Errors carry the 1-based
    /// line number.
    pub fn read_jsonl(r: impl BufRead) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(&line)
                .map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            events.push(ev);
        }
        Ok(Trace { events })
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }

    /// Final dags per server, from `Snapshot` events marked final.
    pub fn final_snapshots(&self) -> Vec<(ServerId, &[BlockInfo])> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Snapshot { server, is_final: true, blocks, .. } => Some((*server, blocks.as_slice())),
                _ => None,
            })
            .collect()
    }

    /// DOT rendering of one server's final dag, or of every block inserted
    /// anywhere when `server` is `None`.
    pub fn to_dot(&self, server: Option<ServerId>) -> Option<String> {
        let mut nodes: std::collections::BTreeMap<BlockRef, DotNode> = std::collections::BTreeMap::new();
        for (s, blocks) in self.final_snapshots() {
            if server.is_none_or(|want| want == s) {
                for b in blocks {
                    nodes.entry(b.block).or_insert_with(|| b.dot_node());
                }
            }
        }
        if nodes.is_empty() {
            for e in &self.events {
                if let TraceEvent::Insert { server: s, block, .. } = e {
                    if server.is_none_or(|want| want == *s) {
                        nodes.entry(block.block).or_insert_with(|| block.dot_node());
                    }
                }
            }
        }
        if nodes.is_empty() {
            return None;
        }
        Some(dot::render(&nodes.into_values().collect::<Vec<_>>()))
    }
}
