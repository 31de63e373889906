use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::ServerId;
use crate::crypto::SchemeId;
use crate::protocol::Label;

/// How a byzantine server misbehaves. No behavior can sign for another server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BehaviorSpec {
    /// Forks its own chain at k = 1 and feeds each half of the servers one
    /// branch.
    Equivocate,
    /// Never sends anything.
    Silent,
    /// Behaves honestly but only ever sends to `targets`.
    SelectiveSend { targets: Vec<ServerId> },
    /// Emits undecodable bytes, wrongly signed blocks and blocks referencing
    /// nonexistent predecessors, alongside an honest chain.
    Garbage,
    /// Honest until `step`, silent afterwards.
    CrashAt { step: u64 },
    /// Lists every predecessor twice.
    DuplicateRefs,
}

impl BehaviorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorSpec::Equivocate => "EQUIVOCATE",
            BehaviorSpec::Silent => "SILENT",
            BehaviorSpec::SelectiveSend { .. } => "SELECTIVE_SEND",
            BehaviorSpec::Garbage => "GARBAGE",
            BehaviorSpec::CrashAt { .. } => "CRASH_AT",
            BehaviorSpec::DuplicateRefs => "DUPLICATE_REFS",
        }
    }
}

/// A user request injected at `step` on `server`: broadcast `value` under
/// `label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledRequest {
    pub step: u64,
    pub server: ServerId,
    pub label: Label,
    pub value: u64,
}

/// JSON object keys are strings. Parsing them explicitly keeps the map
/// readable when the scenario is nested in a tagged trace event, where serde
/// would otherwise refuse to turn a buffered string key into a `u32`.
mod server_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{BehaviorSpec, ServerId};

    pub fn serialize<S: Serializer>(map: &BTreeMap<ServerId, BehaviorSpec>, s: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, &BehaviorSpec> = map.iter().map(|(k, v)| (k.0.to_string(), v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ServerId, BehaviorSpec>, D::Error> {
        BTreeMap::<String, BehaviorSpec>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                let id = k.parse().map_err(|_| D::Error::custom(format!("server id {k:?} is not a number")))?;
                Ok((ServerId(id), v))
            })
            .collect()
    }
}

fn default_true() -> bool {
    true
}

fn default_every_k() -> u64 {
    3
}

fn default_fwd_interval() -> u64 {
    5
}

fn default_max_rs() -> usize {
    8
}

fn default_max_pending() -> usize {
    1024
}

fn default_budget() -> usize {
    4
}

fn default_drain_limit() -> u64 {
    2000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub f: usize,
    #[serde(default, with = "server_keys")]
    pub byzantine: BTreeMap<ServerId, BehaviorSpec>,
    /// Inclusive bounds on envelope delay, in steps.
    pub delay_bounds: (u64, u64),
    pub seed: u64,
    #[serde(default)]
    pub requests: Vec<ScheduledRequest>,
    pub max_steps: u64,
    #[serde(default = "default_true")]
    pub drain: bool,
    /// Steps after which each correct server's dag is recorded.
    #[serde(default)]
    pub snapshot_steps: Vec<u64>,
    #[serde(default = "default_every_k")]
    pub every_k_steps: u64,
    #[serde(default = "default_fwd_interval")]
    pub fwd_interval: u64,
    #[serde(default = "default_max_rs")]
    pub max_rs_per_block: usize,
    #[serde(default = "default_max_pending")]
    pub max_pending_per_builder: usize,
    /// Envelopes a byzantine server may emit per step.
    #[serde(default = "default_budget")]
    pub adversary_budget: usize,
    /// Extra steps the drain phase may take before giving up.
    #[serde(default = "default_drain_limit")]
    pub drain_limit: u64,
    #[serde(default)]
    pub scheme: SchemeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n = {n} must equal 3f + 1 (f = {f})")]
    BadQuorum { n: usize, f: usize },
    #[error("{count} byzantine servers exceed f = {f}")]
    TooManyByzantine { count: usize, f: usize },
    #[error("server {0} is out of range")]
    UnknownServer(ServerId),
    #[error("delay bounds ({0}, {1}) must satisfy 1 <= min <= max")]
    BadDelay(u64, u64),
    #[error("label {0} is requested more than once")]
    DuplicateLabel(Label),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl Scenario {
    /// A scenario with default parameters and no requests or adversaries.
    pub fn new(n: usize, f: usize, seed: u64, max_steps: u64) -> Self {
        Self {
            n,
            f,
            byzantine: BTreeMap::new(),
            delay_bounds: (1, 3),
            seed,
            requests: Vec::new(),
            max_steps,
            drain: true,
            snapshot_steps: Vec::new(),
            every_k_steps: default_every_k(),
            fwd_interval: default_fwd_interval(),
            max_rs_per_block: default_max_rs(),
            max_pending_per_builder: default_max_pending(),
            adversary_budget: default_budget(),
            drain_limit: default_drain_limit(),
            scheme: SchemeId::KeyedMac,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n != 3 * self.f + 1 {
            return Err(ConfigError::BadQuorum { n: self.n, f: self.f });
        }
        if self.byzantine.len() > self.f {
            return Err(ConfigError::TooManyByzantine { count: self.byzantine.len(), f: self.f });
        }
        let in_range = |s: &ServerId| -> Result<(), ConfigError> {
            if s.index() < self.n {
                Ok(())
            } else {
                Err(ConfigError::UnknownServer(*s))
            }
        };
        for (s, spec) in &self.byzantine {
            in_range(s)?;
            if let BehaviorSpec::SelectiveSend { targets } = spec {
                targets.iter().try_for_each(in_range)?;
            }
        }
        let (lo, hi) = self.delay_bounds;
        if lo == 0 || lo > hi {
            return Err(ConfigError::BadDelay(lo, hi));
        }
        let mut labels = BTreeSet::new();
        for r in &self.requests {
            in_range(&r.server)?;
            if !labels.insert(r.label) {
                return Err(ConfigError::DuplicateLabel(r.label));
            }
        }
        if self.every_k_steps == 0 {
            return Err(ConfigError::NonPositive("every_k_steps"));
        }
        if self.max_rs_per_block == 0 {
            return Err(ConfigError::NonPositive("max_rs_per_block"));
        }
        if self.max_pending_per_builder == 0 {
            return Err(ConfigError::NonPositive("max_pending_per_builder"));
        }
        Ok(())
    }

    pub fn is_correct(&self, s: ServerId) -> bool {
        !self.byzantine.contains_key(&s)
    }

    pub fn correct_servers(&self) -> Vec<ServerId> {
        ServerId::all(self.n).filter(|s| self.is_correct(*s)).collect()
    }

    pub fn max_delay(&self) -> u64 {
        self.delay_bounds.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = Scenario::new(4, 1, 0, 10);
        ok.validate().unwrap();
        assert_eq!(Scenario::new(5, 1, 0, 10).validate(), Err(ConfigError::BadQuorum { n: 5, f: 1 }));
        let mut s = ok.clone();
        s.byzantine.insert(ServerId(0), BehaviorSpec::Silent);
        s.byzantine.insert(ServerId(1), BehaviorSpec::Silent);
        assert!(matches!(s.validate(), Err(ConfigError::TooManyByzantine { .. })));
        let mut s = ok.clone();
        s.delay_bounds = (0, 2);
        assert_eq!(s.validate(), Err(ConfigError::BadDelay(0, 2)));
        let mut s = ok.clone();
        let r = ScheduledRequest { step: 0, server: ServerId(0), label: Label::new(0, 1), value: 1 };
        s.requests = vec![r.clone(), r];
        assert!(matches!(s.validate(), Err(ConfigError::DuplicateLabel(_))));
        let mut s = ok;
        s.byzantine.insert(ServerId(3), BehaviorSpec::SelectiveSend { targets: vec![ServerId(4)] });
        assert_eq!(s.validate(), Err(ConfigError::UnknownServer(ServerId(4))));
    }

    #[test]
    fn json_shape() {
        let json = r#"{
            "n": 4, "f": 1, "seed": 7, "delay_bounds": [1, 2], "max_steps": 12,
            "byzantine": {"3": {"kind": "CRASH_AT", "step": 5}},
            "requests": [{"step": 0, "server": 0, "label": {"originator": 0, "nonce": 1}, "value": 42}]
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert_eq!(s.byzantine[&ServerId(3)], BehaviorSpec::CrashAt { step: 5 });
        assert!(s.drain);
        assert_eq!(s.every_k_steps, 3);
        s.validate().unwrap();
        let back: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
