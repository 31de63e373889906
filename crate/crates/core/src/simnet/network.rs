//! Bounded-delay point-to-point network.
//!
//! Each packet's delay is drawn uniformly from the inclusive delay bounds
//! with `ChaCha8Rng::seed_from_u64(seed)` and `gen_range(min..=max)`, one draw
//! per send in send order. Packets due at the same step are delivered in
//! `(receiver, sender, send step, payload hash, send sequence)` order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::ServerId;
use crate::crypto::Digest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub from: ServerId,
    pub to: ServerId,
    pub sent_at: u64,
    pub deliver_at: u64,
    pub bytes: Vec<u8>,
}

type Key = (u64, ServerId, ServerId, u64, Digest, u64);

pub struct Network {
    rng: ChaCha8Rng,
    bounds: (u64, u64),
    queue: BTreeMap<Key, Packet>,
    next_id: u64,
}

impl Network {
    pub fn new(seed: u64, bounds: (u64, u64)) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), bounds, queue: BTreeMap::new(), next_id: 0 }
    }

    /// Schedules a packet and returns it as queued.
    pub fn send(&mut self, from: ServerId, to: ServerId, bytes: Vec<u8>, now: u64) -> &Packet {
        let delay = self.rng.gen_range(self.bounds.0..=self.bounds.1);
        let id = self.next_id;
        self.next_id += 1;
        let deliver_at = now + delay;
        let key = (deliver_at, to, from, now, Digest::of(&bytes), id);
        self.queue.entry(key).or_insert(Packet { id, from, to, sent_at: now, deliver_at, bytes })
    }

    /// Removes and returns every packet due at or before `now`, in order.
    pub fn take_due(&mut self, now: u64) -> Vec<Packet> {
        let later = self.queue.split_off(&(now + 1, ServerId(0), ServerId(0), 0, Digest::default(), 0));
        let due = std::mem::replace(&mut self.queue, later);
        due.into_values().collect()
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight_where(&self, pred: impl Fn(&Packet) -> bool) -> usize {
        self.queue.values().filter(|p| pred(p)).count()
    }

    /// Drops queued packets matching `pred`; returns them.
    pub fn discard_where(&mut self, pred: impl Fn(&Packet) -> bool) -> Vec<Packet> {
        let keys: Vec<Key> = self.queue.iter().filter(|(_, p)| pred(p)).map(|(k, _)| *k).collect();
        keys.into_iter().filter_map(|k| self.queue.remove(&k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delays_stay_within_bounds_and_order_is_total() {
        let mut net = Network::new(3, (1, 4));
        for i in 0..50u32 {
            net.send(ServerId(i % 3), ServerId(i % 4), vec![i as u8], 10);
        }
        let mut seen = 0;
        for step in 10..=14 {
            let due = net.take_due(step);
            for w in due.windows(2) {
                assert!((w[0].deliver_at, w[0].to, w[0].from) <= (w[1].deliver_at, w[1].to, w[1].from));
            }
            for p in &due {
                assert!(p.deliver_at >= 11 && p.deliver_at <= 14 && p.deliver_at <= step);
            }
            seen += due.len();
        }
        assert_eq!(seen, 50);
        assert_eq!(net.in_flight(), 0);
    }

    #[test]
    fn same_seed_same_schedule() {
        let schedule = |seed| {
            let mut net = Network::new(seed, (1, 9));
            (0..20).map(|i| net.send(ServerId(0), ServerId(1), vec![i], 0).deliver_at).collect::<Vec<_>>()
        };
        assert_eq!(schedule(1), schedule(1));
        assert_ne!(schedule(1), schedule(2));
    }
}
