//! Validated block DAGs.
//!
//! A [`BlockDag`] holds only valid blocks. Because edges are fixed by each
//! block's `preds`, a dag grows solely by inserting blocks whose predecessors
//! are already present; that makes every dag acyclic and every insertion an
//! extension.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::block::{Block, BlockRef, ServerId};
use crate::crypto::KeyRegistry;
use crate::dot::{self, DotNode};
use crate::graph::{Digraph, Reach};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("signature does not verify")]
    BadSignature,
    #[error("builder {0} is not a known server")]
    UnknownBuilder(ServerId),
    #[error("predecessor {0} is not in the dag")]
    MissingPredecessor(BlockRef),
    #[error("non-genesis block has no parent")]
    NoParent,
    #[error("block has {0} parents")]
    MultipleParents(usize),
}

impl RejectReason {
    /// A block rejected for a missing predecessor may become valid later;
    /// every other reason is final.
    pub fn is_permanent(&self) -> bool {
        !matches!(self, RejectReason::MissingPredecessor(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("block {0} is not in the dag")]
    UnknownBlock(BlockRef),
    #[error("block {block} rejected: {reason}")]
    Rejected { block: BlockRef, reason: RejectReason },
}

/// A set of valid blocks with the induced predecessor graph. Edges run from a
/// predecessor to the block that references it.
#[derive(Clone)]
pub struct BlockDag {
    owner: ServerId,
    registry: Arc<KeyRegistry>,
    blocks: BTreeMap<BlockRef, Block>,
    graph: Digraph<BlockRef>,
    order: Vec<BlockRef>,
}

impl fmt::Debug for BlockDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockDag")
            .field("owner", &self.owner)
            .field("blocks", &self.blocks.len())
            .field("edges", &self.graph.edge_count())
            .finish()
    }
}

impl BlockDag {
    pub fn new(owner: ServerId, registry: Arc<KeyRegistry>) -> Self {
        Self {
            owner,
            registry,
            blocks: BTreeMap::new(),
            graph: Digraph::new(),
            order: Vec::new(),
        }
    }

    pub fn owner(&self) -> ServerId {
        self.owner
    }

    pub fn registry(&self) -> &Arc<KeyRegistry> {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, r: &BlockRef) -> bool {
        self.blocks.contains_key(r)
    }

    pub fn get(&self, r: &BlockRef) -> Option<&Block> {
        self.blocks.get(r)
    }

    pub fn graph(&self) -> &Digraph<BlockRef> {
        &self.graph
    }

    /// Blocks in insertion order; every block appears after its predecessors.
    pub fn insertion_order(&self) -> &[BlockRef] {
        &self.order
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockRef, &Block)> {
        self.blocks.iter()
    }

    /// The predecessor of `b` built by the same server at `k - 1`, if any.
    /// Predecessors missing from the dag are skipped.
    pub fn parent(&self, b: &Block) -> Result<Option<BlockRef>, RejectReason> {
        if b.is_genesis() {
            return Ok(None);
        }
        let parents: Vec<BlockRef> = b
            .distinct_preds()
            .into_iter()
            .filter(|p| self.blocks.get(p).is_some_and(|pb| pb.n == b.n && pb.k + 1 == b.k))
            .collect();
        match parents.len() {
            0 => Ok(None),
            1 => Ok(Some(parents[0])),
            many => Err(RejectReason::MultipleParents(many)),
        }
    }

    /// Checks the three validity conditions, reporting the first that fails
    /// in the order: signature, predecessors present, parent.
    pub fn validate(&self, b: &Block) -> Result<(), RejectReason> {
        match b.verify_signature(&self.registry) {
            Ok(true) => {}
            Ok(false) => return Err(RejectReason::BadSignature),
            Err(_) => return Err(RejectReason::UnknownBuilder(b.n)),
        }
        if let Some(missing) = b.preds.iter().find(|p| !self.contains(p)) {
            return Err(RejectReason::MissingPredecessor(*missing));
        }
        match self.parent(b)? {
            None if !b.is_genesis() => Err(RejectReason::NoParent),
            _ => Ok(()),
        }
    }

    pub fn valid(&self, b: &Block) -> bool {
        self.validate(b).is_ok()
    }

    /// Inserts a valid block. Inserting a block already present is a no-op.
    pub fn insert(&mut self, b: Block) -> Result<BlockRef, DagError> {
        let r = b.block_ref();
        if self.contains(&r) {
            return Ok(r);
        }
        self.validate(&b).map_err(|reason| DagError::Rejected { block: r, reason })?;
        self.graph
            .insert(r, b.distinct_preds())
            .expect("validated predecessors are present");
        self.blocks.insert(r, b);
        self.order.push(r);
        Ok(r)
    }

    pub fn reaches(&self, a: &BlockRef, b: &BlockRef, mode: Reach) -> bool {
        self.graph.reaches(a, b, mode)
    }

    /// `self ≤ other`. Edges are determined by block content, so vertex
    /// inclusion already implies edge agreement; the graph check is kept as a
    /// guard against corrupted state.
    pub fn extends_to(&self, other: &BlockDag) -> bool {
        self.blocks.keys().all(|r| other.contains(r)) && self.graph.extends_to(&other.graph)
    }

    /// Union of two dags. The result keeps `self`'s owner and insertion order,
    /// followed by `other`'s new blocks in `other`'s order.
    pub fn union(&self, other: &BlockDag) -> BlockDag {
        let mut out = self.clone();
        for r in &other.order {
            if !out.contains(r) {
                let b = other.blocks[r].clone();
                out.graph.insert(*r, b.distinct_preds()).expect("prefix-closed order");
                out.blocks.insert(*r, b);
                out.order.push(*r);
            }
        }
        out
    }

    /// The dag formed by the first `len` inserted blocks.
    pub fn prefix(&self, len: usize) -> BlockDag {
        let mut out = BlockDag::new(self.owner, self.registry.clone());
        for r in &self.order[..len.min(self.order.len())] {
            let b = self.blocks[r].clone();
            out.graph.insert(*r, b.distinct_preds()).expect("prefix-closed order");
            out.blocks.insert(*r, b);
            out.order.push(*r);
        }
        out
    }

    /// Full structural audit: every block valid against the blocks inserted
    /// before it, the graph matching the blocks, and no cycles.
    pub fn self_check(&self) -> Result<(), String> {
        let mut replay = BlockDag::new(self.owner, self.registry.clone());
        for r in &self.order {
            replay
                .insert(self.blocks[r].clone())
                .map_err(|e| format!("replay failed: {e}"))?;
        }
        if replay.graph != self.graph {
            return Err("graph does not match block predecessors".into());
        }
        if replay.blocks.len() != self.blocks.len() {
            return Err("insertion order does not cover every block".into());
        }
        if !self.graph.is_acyclic() {
            return Err("cycle detected".into());
        }
        Ok(())
    }

    pub fn dot_nodes(&self) -> Vec<DotNode> {
        self.blocks
            .iter()
            .map(|(r, b)| DotNode { block: *r, n: b.n, k: b.k, preds: b.distinct_preds() })
            .collect()
    }

    pub fn to_dot(&self) -> String {
        dot::render(&self.dot_nodes())
    }
}
