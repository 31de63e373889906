//! Helpers shared by integration test targets.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use dagbft_core::{Block, BlockRef, ServerId, SigningHandle};

/// Signed blocks forming a valid dag, in creation order. Each block extends
/// its builder's chain and references a random subset of earlier blocks by
/// other builders.
pub fn random_blocks(rng: &mut impl Rng, handles: &[SigningHandle], count: usize) -> Vec<Block> {
    let n = handles.len();
    let mut last: Vec<Option<(BlockRef, u64)>> = vec![None; n];
    let mut made: Vec<(BlockRef, ServerId)> = Vec::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = rng.gen_range(0..n);
        let me = ServerId(s as u32);
        let (mut preds, k) = match last[s] {
            Some((r, k)) => (vec![r], k + 1),
            None => (Vec::new(), 0),
        };
        for (r, by) in &made {
            if *by != me && rng.gen_bool(0.3) {
                preds.push(*r);
            }
        }
        preds.shuffle(rng);
        let b = Block::new(me, k, preds, Vec::new()).signed(&handles[s]);
        let r = b.block_ref();
        last[s] = Some((r, k));
        made.push((r, me));
        out.push(b);
    }
    out
}

/// A random order of `blocks` in which every block comes after its
/// predecessors. `blocks` must be in some such order already.
pub fn random_topological(rng: &mut impl Rng, blocks: &[Block]) -> Vec<Block> {
    let mut placed = std::collections::BTreeSet::new();
    let mut left: Vec<&Block> = blocks.iter().collect();
    let mut out = Vec::with_capacity(blocks.len());
    while !left.is_empty() {
        let ready: Vec<usize> = (0..left.len())
            .filter(|i| left[*i].preds.iter().all(|p| placed.contains(p)))
            .collect();
        let i = *ready.choose(rng).expect("creation order is topological");
        let b = left.swap_remove(i);
        placed.insert(b.block_ref());
        out.push(b.clone());
    }
    out
}
