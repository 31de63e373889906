//! Workloads shared by the benchmarks.

use std::sync::Arc;

use dagbft_core::brb::broadcast_request;
use dagbft_core::{Block, BlockDag, BlockRef, KeyRegistry, Label, SchemeId, ServerId};

/// A fully connected round-based dag: in every round each of `n` servers
/// builds one block referencing all blocks of the previous round. The first
/// `broadcasts` servers each start a broadcast in round 0.
pub struct RoundDag {
    pub registry: Arc<KeyRegistry>,
    pub blocks: Vec<Block>,
}

impl RoundDag {
    pub fn build(scheme: SchemeId, n: usize, rounds: u64, broadcasts: usize) -> Self {
        let (registry, handles) = KeyRegistry::generate(scheme, n, 1);
        let mut blocks = Vec::with_capacity(n * rounds as usize);
        let mut prev: Vec<BlockRef> = Vec::new();
        for k in 0..rounds {
            let mut this = Vec::with_capacity(n);
            for (i, h) in handles.iter().enumerate() {
                let rs = if k == 0 && i < broadcasts {
                    vec![(Label::new(i as u32, 0), broadcast_request(i as u64))]
                } else {
                    Vec::new()
                };
                let b = Block::new(ServerId(i as u32), k, prev.clone(), rs).signed(h);
                this.push(b.block_ref());
                blocks.push(b);
            }
            prev = this;
        }
        RoundDag { registry: Arc::new(registry), blocks }
    }

    /// A fresh dag owned by server 0 holding every block.
    pub fn dag(&self) -> BlockDag {
        let mut dag = BlockDag::new(ServerId(0), self.registry.clone());
        for b in &self.blocks {
            dag.insert(b.clone()).expect("round dag is valid");
        }
        dag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dagbft_core::brb::Brb;
    use dagbft_core::Interpreter;

    #[test]
    fn every_block_is_interpreted() {
        let w = RoundDag::build(SchemeId::KeyedMac, 4, 5, 1);
        let dag = w.dag();
        let mut i = Interpreter::new(Brb::new(4, 1));
        assert_eq!(i.run_to_fixpoint(&dag).len(), 20);
        assert_eq!(i.take_indications().len(), 4);
    }
}
