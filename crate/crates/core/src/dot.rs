//! Graphviz export of block DAGs.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::block::{BlockRef, ServerId};

/// The parts of a block needed to draw it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotNode {
    pub block: BlockRef,
    pub n: ServerId,
    pub k: u64,
    pub preds: Vec<BlockRef>,
}

fn node_id(r: &BlockRef) -> String {
    format!("b{}", r.short())
}

/// Renders nodes ordered by `(builder, k, ref)`. Nodes are labeled `n/k`;
/// parent edges are bold, other predecessor edges dashed. Predecessors not
/// among `nodes` are drawn as small anonymous points.
pub fn render(nodes: &[DotNode]) -> String {
    let mut sorted: Vec<&DotNode> = nodes.iter().collect();
    sorted.sort_by_key(|d| (d.n, d.k, d.block));
    let by_ref: BTreeMap<BlockRef, &DotNode> = sorted.iter().map(|d| (d.block, *d)).collect();

    let mut out = String::new();
    out.push_str("digraph blockdag {\n  rankdir=LR;\n  node [shape=box, fontname=\"monospace\"];\n");
    for d in &sorted {
        writeln!(out, "  {} [label=\"{}/{}\"];", node_id(&d.block), d.n.0, d.k).unwrap();
    }
    let mut dangling: Vec<BlockRef> = Vec::new();
    for d in &sorted {
        for p in &d.preds {
            let style = match by_ref.get(p) {
                Some(pd) if pd.n == d.n && pd.k + 1 == d.k => "bold",
                Some(_) => "dashed",
                None => {
                    dangling.push(*p);
                    "dotted"
                }
            };
            writeln!(out, "  {} -> {} [style={style}];", node_id(p), node_id(&d.block)).unwrap();
        }
    }
    dangling.sort();
    dangling.dedup();
    for p in dangling {
        writeln!(out, "  {} [shape=point];", node_id(&p)).unwrap();
    }
    out.push_str("}\n");
    out
}
