//! Trace checkers. Each returns a [`Report`]; a violation is data, never a
//! panic, so a broken run can be inspected in full.
//!
//! All checkers look only at events of correct servers, as named by the
//! trace header. A trace without a header has no correct servers and every
//! check is vacuous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::block::{BlockRef, ServerId};
use crate::brb::{decode_indication, decode_request};
use crate::crypto::Digest;
use crate::graph::Digraph;
use crate::protocol::{Label, Message};

use super::scenario::Scenario;
use super::trace::{BlockInfo, LabelRecord, Trace, TraceEvent, WireKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub property: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub name: &'static str,
    /// Number of individual facts examined; zero means the check was vacuous.
    pub checked: u64,
    pub violations: Vec<Violation>,
}

impl Report {
    fn new(name: &'static str) -> Self {
        Self { name, checked: 0, violations: Vec::new() }
    }

    fn fail(&mut self, property: &'static str, detail: String) {
        self.violations.push(Violation { property, detail });
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, property: &str) -> usize {
        self.violations.iter().filter(|v| v.property == property).count()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if !self.is_clean() {
            "FAIL"
        } else if self.checked == 0 {
            "vacuous"
        } else {
            "ok"
        };
        write!(f, "{}: {status} (checked {}, violations {})", self.name, self.checked, self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {}: {}", v.property, v.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    /// Reliable delivery, no duplication and authenticity over interpretation.
    PointToPoint,
    Brb,
    Convergence,
    /// Equal state digests for shared (block, label) across servers.
    Digest,
    /// No correct server references a block twice.
    RefsOnce,
    /// Correct-to-correct packets arrive within the delay bound.
    Network,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::PointToPoint,
        Property::Brb,
        Property::Convergence,
        Property::Digest,
        Property::RefsOnce,
        Property::Network,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Property::PointToPoint => "ppl",
            Property::Brb => "brb",
            Property::Convergence => "conv",
            Property::Digest => "digest",
            Property::RefsOnce => "refs",
            Property::Network => "net",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.short_name() == s)
    }
}

pub fn check(trace: &Trace, property: Property) -> Report {
    match property {
        Property::PointToPoint => check_point_to_point(trace),
        Property::Brb => check_brb(trace),
        Property::Convergence => check_convergence(trace),
        Property::Digest => check_digest_agreement(trace),
        Property::RefsOnce => check_refs_once(trace),
        Property::Network => check_bounded_delay(trace),
    }
}

fn correct_set(trace: &Trace) -> (Option<&Scenario>, BTreeSet<ServerId>) {
    match trace.scenario() {
        Some(sc) => (Some(sc), sc.correct_servers().into_iter().collect()),
        None => (None, BTreeSet::new()),
    }
}

struct Interpreted<'a> {
    builder: ServerId,
    preds: &'a [BlockRef],
    labels: BTreeMap<Label, &'a LabelRecord>,
}

impl Interpreted<'_> {
    fn outbox_has(&self, label: &Label, m: &Message) -> bool {
        self.labels.get(label).is_some_and(|r| r.outbox.contains(m))
    }
}

/// Interpret events per correct interpreter, keyed by block.
fn interpretations<'a>(
    trace: &'a Trace,
    correct: &BTreeSet<ServerId>,
) -> BTreeMap<ServerId, BTreeMap<BlockRef, Interpreted<'a>>> {
    let mut out: BTreeMap<ServerId, BTreeMap<BlockRef, Interpreted<'a>>> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Interpret { server, block, builder, preds, labels, .. } = e {
            if correct.contains(server) {
                let labels = labels.iter().map(|r| (r.label, r)).collect();
                out.entry(*server).or_default().insert(*block, Interpreted { builder: *builder, preds, labels });
            }
        }
    }
    out
}

/// Reliable delivery, no duplication and authenticity of the link the
/// interpretation provides, restated over each correct interpreter's view.
///
/// Reliable delivery: a message in the outbox of a correct server's block,
/// addressed to correct `s2`, is in the inbox of every `s2` block that
/// references that block. In a drained trace at least one such block must
/// exist.
///
/// No duplication: along a correct receiver's chain, a message is taken from
/// a given source block at most once.
///
/// Authenticity: a message from a correct sender in a correct receiver's
/// inbox is in the outbox of a predecessor built by that sender.
pub fn check_point_to_point(trace: &Trace) -> Report {
    let mut report = Report::new("point-to-point");
    let (sc, correct) = correct_set(trace);
    let drained = sc.is_some_and(|s| s.drain);
    for (interpreter, view) in interpretations(trace, &correct) {
        // Blocks of each correct builder that reference a given block.
        let mut referrers: BTreeMap<(BlockRef, ServerId), Vec<BlockRef>> = BTreeMap::new();
        for (b, info) in &view {
            if correct.contains(&info.builder) {
                for p in info.preds {
                    referrers.entry((*p, info.builder)).or_default().push(*b);
                }
            }
        }

        for (b1, info) in &view {
            if !correct.contains(&info.builder) {
                continue;
            }
            for (label, rec) in &info.labels {
                for m in rec.outbox.iter().filter(|m| correct.contains(&m.receiver)) {
                    report.checked += 1;
                    let targets = referrers.get(&(*b1, m.receiver)).map(Vec::as_slice).unwrap_or_default();
                    if targets.is_empty() && drained {
                        report.fail(
                            "reliable_delivery",
                            format!("at {interpreter}: no block of {} references {} carrying {m:?} ({label})", m.receiver, b1.short()),
                        );
                    }
                    for b2 in targets {
                        let got = view[b2].labels.get(label).is_some_and(|r| r.inbox.contains(m));
                        if !got {
                            report.fail(
                                "reliable_delivery",
                                format!("at {interpreter}: {m:?} ({label}) from {} missing in {}", b1.short(), b2.short()),
                            );
                        }
                    }
                }
            }
        }

        let mut fed: BTreeMap<(Label, BlockRef, &Message), BlockRef> = BTreeMap::new();
        for (b2, info) in &view {
            if !correct.contains(&info.builder) {
                continue;
            }
            for (label, rec) in &info.labels {
                for m in &rec.inbox {
                    report.checked += 1;
                    let sources: Vec<BlockRef> = info
                        .preds
                        .iter()
                        .filter(|p| view.get(p).is_some_and(|pi| pi.outbox_has(label, m)))
                        .copied()
                        .collect();
                    if correct.contains(&m.sender)
                        && !sources.iter().any(|p| view[p].builder == m.sender)
                    {
                        report.fail(
                            "authenticity",
                            format!("at {interpreter}: {m:?} ({label}) in {} has no source block built by {}", b2.short(), m.sender),
                        );
                    }
                    for src in sources {
                        if let Some(first) = fed.insert((*label, src, m), *b2) {
                            report.fail(
                                "no_duplication",
                                format!(
                                    "at {interpreter}: {m:?} ({label}) from {} fed to both {} and {}",
                                    src.short(),
                                    first.short(),
                                    b2.short()
                                ),
                            );
                        }
                    }
                }
            }
        }
    }
    report
}

/// Validity, no duplication, integrity, consistency and totality of
/// broadcast, over indications surfaced at correct servers. Validity and
/// totality need a drained trace and are skipped otherwise.
pub fn check_brb(trace: &Trace) -> Report {
    let mut report = Report::new("brb");
    let (sc, correct) = correct_set(trace);
    let drained = sc.is_some_and(|s| s.drain);

    let mut broadcast: BTreeMap<Label, BTreeSet<u64>> = BTreeMap::new();
    let mut delivered: BTreeMap<Label, BTreeMap<ServerId, Vec<Option<u64>>>> = BTreeMap::new();
    for e in &trace.events {
        match e {
            TraceEvent::Request { server, label, request, .. } if correct.contains(server) => {
                if let (true, Ok(v)) = (label.originator == *server, decode_request(request)) {
                    broadcast.entry(*label).or_default().insert(v);
                }
            }
            TraceEvent::Indicate { server, label, indication, surfaced: true, .. } if correct.contains(server) => {
                delivered.entry(*label).or_default().entry(*server).or_default().push(decode_indication(indication).ok());
            }
            _ => {}
        }
    }

    if drained {
        for (label, values) in &broadcast {
            for v in values {
                for s in &correct {
                    report.checked += 1;
                    let got = delivered.get(label).and_then(|d| d.get(s));
                    if !got.is_some_and(|vs| vs.contains(&Some(*v))) {
                        report.fail("validity", format!("{s} did not deliver {v} for {label}"));
                    }
                }
            }
        }
    }

    for (label, per_server) in &delivered {
        let mut seen: BTreeMap<Option<u64>, ServerId> = BTreeMap::new();
        for (s, vs) in per_server {
            report.checked += 1;
            if vs.len() > 1 {
                report.fail("no_duplication", format!("{s} delivered {} times for {label}", vs.len()));
            }
            for v in vs {
                seen.entry(*v).or_insert(*s);
                if correct.contains(&label.originator) {
                    let ok = v.is_some_and(|v| broadcast.get(label).is_some_and(|b| b.contains(&v)));
                    if !ok {
                        report.fail("integrity", format!("{s} delivered {v:?} for {label}, never broadcast"));
                    }
                }
            }
        }
        if seen.len() > 1 {
            let parts: Vec<String> = seen.iter().map(|(v, s)| format!("{s} -> {v:?}")).collect();
            report.fail("consistency", format!("{label}: {}", parts.join(", ")));
        }
        if drained {
            for s in &correct {
                report.checked += 1;
                if !per_server.contains_key(s) {
                    report.fail("totality", format!("{s} never delivered for {label}"));
                }
            }
        }
    }
    report
}

fn digraph_of(blocks: &[BlockInfo]) -> Result<Digraph<BlockRef>, BlockRef> {
    let mut g = Digraph::new();
    for b in blocks {
        g.insert(b.block, b.dot_node().preds).map_err(|_| b.block)?;
    }
    Ok(g)
}

/// Every correct server's final dag extends the union of any two mid-run
/// snapshots taken at distinct correct servers.
pub fn check_convergence(trace: &Trace) -> Report {
    let mut report = Report::new("convergence");
    let (_, correct) = correct_set(trace);
    let mut snaps: BTreeMap<ServerId, Vec<(u64, Digraph<BlockRef>)>> = BTreeMap::new();
    let mut finals: BTreeMap<ServerId, Digraph<BlockRef>> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Snapshot { step, server, is_final, blocks } = e {
            if !correct.contains(server) {
                continue;
            }
            let g = match digraph_of(blocks) {
                Ok(g) => g,
                Err(b) => {
                    report.fail("convergence", format!("snapshot of {server} at {step} lists {} before its preds", b.short()));
                    continue;
                }
            };
            if *is_final {
                finals.insert(*server, g);
            } else {
                snaps.entry(*server).or_default().push((*step, g));
            }
        }
    }
    for (s, final_s) in &finals {
        for (a, sa) in &snaps {
            for (b, sb) in snaps.range(a..) {
                if a == b {
                    continue;
                }
                for (ta, ga) in sa {
                    for (tb, gb) in sb {
                        report.checked += 1;
                        if !ga.union(gb).extends_to(final_s) {
                            report.fail(
                                "convergence",
                                format!("final dag of {s} does not extend {a}@{ta} union {b}@{tb}"),
                            );
                        }
                    }
                }
            }
        }
    }
    report
}

/// Correct interpreters agree on the state digest of every (block, label)
/// they both interpreted.
pub fn check_digest_agreement(trace: &Trace) -> Report {
    let mut report = Report::new("digest-agreement");
    let (_, correct) = correct_set(trace);
    let mut first: BTreeMap<(BlockRef, Label), (ServerId, Digest)> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Interpret { server, block, labels, .. } = e {
            if !correct.contains(server) {
                continue;
            }
            for r in labels {
                report.checked += 1;
                let (s0, d0) = *first.entry((*block, r.label)).or_insert((*server, r.digest));
                if d0 != r.digest {
                    report.fail(
                        "digest_agreement",
                        format!("{} {}: {s0} has {}, {server} has {}", block.short(), r.label, d0.short(), r.digest.short()),
                    );
                }
            }
        }
    }
    report
}

/// No correct server lists a block as predecessor twice, within one block or
/// across its own blocks.
pub fn check_refs_once(trace: &Trace) -> Report {
    let mut report = Report::new("refs-once");
    let (_, correct) = correct_set(trace);
    let mut seen: BTreeMap<(ServerId, BlockRef), BlockRef> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::Insert { server, block, .. } = e {
            if !correct.contains(server) {
                continue;
            }
            for p in &block.preds {
                report.checked += 1;
                if let Some(prev) = seen.insert((*server, *p), block.block) {
                    report.fail(
                        "refs_once",
                        format!("{server} references {} from both {} and {}", p.short(), prev.short(), block.block.short()),
                    );
                }
            }
        }
    }
    report
}

/// Every packet between correct servers is delivered within the delay bound;
/// in a drained trace, none is left undelivered.
pub fn check_bounded_delay(trace: &Trace) -> Report {
    let mut report = Report::new("bounded-delay");
    let (sc, correct) = correct_set(trace);
    let Some(sc) = sc else {
        return report;
    };
    let mut sent: BTreeMap<u64, (u64, ServerId, ServerId)> = BTreeMap::new();
    for e in &trace.events {
        match e {
            TraceEvent::Send { step, id, from, to, envelope, .. }
                if correct.contains(from) && correct.contains(to) =>
            {
                if *envelope == WireKind::Raw {
                    report.fail("wire_kind", format!("packet {id} from correct {from} is not an envelope"));
                }
                sent.insert(*id, (*step, *from, *to));
            }
            TraceEvent::Deliver { step, id, .. } => {
                if let Some((at, from, to)) = sent.remove(id) {
                    report.checked += 1;
                    if step - at > sc.max_delay() {
                        report.fail("bounded_delay", format!("packet {id} {from}->{to} took {} steps", step - at));
                    }
                }
            }
            _ => {}
        }
    }
    if sc.drain {
        for (id, (at, from, to)) in sent {
            report.fail("bounded_delay", format!("packet {id} {from}->{to} sent at {at} never delivered"));
        }
    }
    report
}
