//! Seeded random scenarios for sweeps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::ServerId;
use crate::protocol::Label;

use super::scenario::{BehaviorSpec, Scenario, ScheduledRequest};

/// Budget of blocks built in the main phase across all servers.
pub const MAIN_PHASE_BLOCKS: u64 = 60;

/// The kinds [`random_scenario`] draws from, by name.
pub const KINDS: [&str; 6] = ["EQUIVOCATE", "SILENT", "SELECTIVE_SEND", "GARBAGE", "CRASH_AT", "DUPLICATE_REFS"];

fn behavior(kind: &str, me: ServerId, n: usize, max_steps: u64, rng: &mut ChaCha8Rng) -> BehaviorSpec {
    match kind {
        "EQUIVOCATE" => BehaviorSpec::Equivocate,
        "SILENT" => BehaviorSpec::Silent,
        "SELECTIVE_SEND" => {
            let mut others: Vec<ServerId> = ServerId::all(n).filter(|s| *s != me).collect();
            others.shuffle(rng);
            let keep = rng.gen_range(1..others.len());
            others.truncate(keep);
            others.sort();
            BehaviorSpec::SelectiveSend { targets: others }
        }
        "GARBAGE" => BehaviorSpec::Garbage,
        "CRASH_AT" => BehaviorSpec::CrashAt { step: rng.gen_range(1..max_steps) },
        "DUPLICATE_REFS" => BehaviorSpec::DuplicateRefs,
        other => panic!("unknown behavior kind {other}"),
    }
}

/// A scenario with `n` servers (4 or 7), up to `f` byzantine servers and one
/// to three broadcasts. With `force_kind`, at least one byzantine server has
/// that behavior. The main phase is sized so that at most
/// [`MAIN_PHASE_BLOCKS`] blocks are built by all servers together; snapshots
/// are taken halfway and at its last step.
pub fn random_scenario(seed: u64, n: usize, force_kind: Option<&str>) -> Scenario {
    assert!(n % 3 == 1, "n must be 3f + 1");
    let f = (n - 1) / 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut servers: Vec<ServerId> = ServerId::all(n).collect();
    servers.shuffle(&mut rng);
    let count = match force_kind {
        Some(_) => rng.gen_range(1..=f),
        None => rng.gen_range(0..=f),
    };
    let kinds: Vec<&str> = (0..count)
        .map(|i| match force_kind {
            Some(k) if i == 0 => k,
            _ => KINDS[rng.gen_range(0..KINDS.len())],
        })
        .collect();

    // An equivocator builds two blocks per round once forked.
    let per_round = n as u64 + kinds.iter().filter(|k| **k == "EQUIVOCATE").count() as u64;
    let every_k = 3;
    let max_steps = MAIN_PHASE_BLOCKS / per_round * every_k;
    let mut sc = Scenario::new(n, f, seed, max_steps);
    sc.every_k_steps = every_k;
    sc.delay_bounds = (1, rng.gen_range(1..=4));
    for (s, kind) in servers.iter().zip(&kinds) {
        sc.byzantine.insert(*s, behavior(kind, *s, n, max_steps, &mut rng));
    }

    let broadcasts = rng.gen_range(1..=3);
    for nonce in 0..broadcasts {
        let server = ServerId(rng.gen_range(0..n as u32));
        sc.requests.push(ScheduledRequest {
            step: rng.gen_range(0..max_steps / 2),
            server,
            label: Label { originator: server, nonce },
            value: rng.gen(),
        });
    }
    sc.snapshot_steps = vec![max_steps / 2, max_steps - 1];
    sc
}

/// `count` scenarios cycling through n = 4 and n = 7 and through every
/// behavior kind, so each kind appears in both sizes.
pub fn sweep(base_seed: u64, count: u64) -> Vec<Scenario> {
    (0..count)
        .map(|i| {
            let n = if i % 2 == 0 { 4 } else { 7 };
            let kind = KINDS[(i / 2) as usize % KINDS.len()];
            random_scenario(base_seed.wrapping_add(i), n, Some(kind))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_are_valid() {
        for seed in 0..50 {
            for n in [4, 7] {
                let sc = random_scenario(seed, n, None);
                sc.validate().unwrap();
                let forks = sc.byzantine.values().filter(|b| **b == BehaviorSpec::Equivocate).count() as u64;
                let rounds = sc.max_steps / sc.every_k_steps;
                assert!(rounds * n as u64 + forks * rounds.saturating_sub(1) <= MAIN_PHASE_BLOCKS);
            }
        }
    }

    #[test]
    fn sweep_covers_every_kind_in_both_sizes() {
        let scs = sweep(0, 24);
        for kind in KINDS {
            for n in [4, 7] {
                assert!(scs.iter().any(|s| s.n == n && s.byzantine.values().any(|b| b.name() == kind)), "{kind} n={n}");
            }
        }
    }
}
