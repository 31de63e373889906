//! Blocks and block references.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer, ENCODING_VERSION};
use crate::crypto::{CryptoError, Digest, KeyRegistry, Signature, SigningHandle};
use crate::protocol::{Label, Request};

const BLOCK_DOMAIN: &[u8] = b"dagbft/block/v1";

/// Server identifier, `0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl ServerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all(n: usize) -> impl Iterator<Item = ServerId> {
        (0..n as u32).map(ServerId)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl Encode for ServerId {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.0);
    }
}

impl Decode for ServerId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(r.u32()?))
    }
}

/// Hash of a block's content excluding its signature. Ordered
/// lexicographically by digest bytes; that order is the deterministic
/// tie-breaker used throughout.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockRef(pub Digest);

impl BlockRef {
    pub fn short(&self) -> String {
        self.0.short()
    }
}

impl fmt::Debug for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0.short())
    }
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.short())
    }
}

impl Serialize for BlockRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Digest::deserialize(d).map(BlockRef)
    }
}

impl Encode for BlockRef {
    fn encode_to(&self, w: &mut Writer) {
        self.0.encode_to(w);
    }
}

impl Decode for BlockRef {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Digest::decode_from(r).map(BlockRef)
    }
}

/// A block built by server `n` at sequence number `k`.
///
/// `preds` keeps the order and multiplicity chosen by the builder because
/// both are covered by the reference; graph edges use the distinct set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub n: ServerId,
    pub k: u64,
    pub preds: Vec<BlockRef>,
    pub rs: Vec<(Label, Request)>,
    pub sigma: Option<Signature>,
}

impl Block {
    pub fn new(n: ServerId, k: u64, preds: Vec<BlockRef>, rs: Vec<(Label, Request)>) -> Self {
        Self { n, k, preds, rs, sigma: None }
    }

    pub fn genesis(n: ServerId, rs: Vec<(Label, Request)>) -> Self {
        Self::new(n, 0, Vec::new(), rs)
    }

    pub fn is_genesis(&self) -> bool {
        self.k == 0
    }

    fn encode_core(&self, w: &mut Writer) {
        w.u8(ENCODING_VERSION).put(&self.n).u64(self.k).list(&self.preds);
        w.len_prefix(self.rs.len());
        for (label, req) in &self.rs {
            w.put(label).put(req);
        }
    }

    /// Canonical encoding of `(n, k, preds, rs)`.
    pub fn core_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_core(&mut w);
        w.finish()
    }

    pub fn block_ref(&self) -> BlockRef {
        BlockRef(Digest::tagged(BLOCK_DOMAIN, &self.core_bytes()))
    }

    pub fn sign(&mut self, handle: &SigningHandle) {
        self.sigma = Some(handle.sign(&self.block_ref().0));
    }

    pub fn signed(mut self, handle: &SigningHandle) -> Self {
        self.sign(handle);
        self
    }

    /// `Ok(false)` for a missing or wrong signature.
    pub fn verify_signature(&self, registry: &KeyRegistry) -> Result<bool, CryptoError> {
        match &self.sigma {
            None if registry.contains(self.n) => Ok(false),
            None => Err(CryptoError::UnknownServer(self.n)),
            Some(sig) => registry.verify(self.n, &self.block_ref().0, sig),
        }
    }

    /// Predecessor references without repeats, in first-occurrence order.
    pub fn distinct_preds(&self) -> Vec<BlockRef> {
        let mut seen = std::collections::BTreeSet::new();
        self.preds.iter().copied().filter(|p| seen.insert(*p)).collect()
    }
}

impl Encode for Block {
    fn encode_to(&self, w: &mut Writer) {
        self.encode_core(w);
        match &self.sigma {
            None => {
                w.u8(0);
            }
            Some(sig) => {
                w.u8(1).put(sig);
            }
        }
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let version = r.u8()?;
        if version != ENCODING_VERSION {
            return Err(DecodeError::BadVersion(version));
        }
        let n = ServerId::decode_from(r)?;
        let k = r.u64()?;
        let preds = r.list::<BlockRef>(32)?;
        let rs_len = r.list_len(16)?;
        let mut rs = Vec::with_capacity(rs_len);
        for _ in 0..rs_len {
            let label = Label::decode_from(r)?;
            let req = Request::decode_from(r)?;
            rs.push((label, req));
        }
        let sigma = match r.u8()? {
            0 => None,
            1 => Some(Signature::decode_from(r)?),
            tag => return Err(DecodeError::BadTag { what: "signature option", tag }),
        };
        Ok(Self { n, k, preds, rs, sigma })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SchemeId;

    fn label(o: u32, nonce: u64) -> Label {
        Label { originator: ServerId(o), nonce }
    }

    #[test]
    fn reference_ignores_signature() {
        let (_, handles) = KeyRegistry::generate(SchemeId::KeyedMac, 2, 0);
        let b = Block::genesis(ServerId(0), vec![]);
        let signed = b.clone().signed(&handles[0]);
        assert_eq!(b.block_ref(), signed.block_ref());
    }

    #[test]
    fn reference_covers_every_core_field() {
        let base = Block::new(ServerId(1), 1, vec![BlockRef(Digest::of(b"p"))], vec![]);
        let mut variants = vec![base.clone()];
        let mut v = base.clone();
        v.n = ServerId(2);
        variants.push(v);
        let mut v = base.clone();
        v.k = 2;
        variants.push(v);
        let mut v = base.clone();
        v.preds.push(v.preds[0]);
        variants.push(v);
        let mut v = base.clone();
        v.rs.push((label(1, 0), Request(vec![1])));
        variants.push(v);
        let refs: std::collections::BTreeSet<_> = variants.iter().map(Block::block_ref).collect();
        assert_eq!(refs.len(), variants.len());
    }

    #[test]
    fn signature_verification() {
        let (reg, handles) = KeyRegistry::generate(SchemeId::KeyedMac, 2, 0);
        let b = Block::genesis(ServerId(0), vec![]);
        assert_eq!(b.verify_signature(&reg), Ok(false));
        assert_eq!(b.clone().signed(&handles[0]).verify_signature(&reg), Ok(true));
        assert_eq!(b.clone().signed(&handles[1]).verify_signature(&reg), Ok(false));
        let stranger = Block::genesis(ServerId(7), vec![]).signed(&handles[0]);
        assert!(stranger.verify_signature(&reg).is_err());
    }

    #[test]
    fn wire_roundtrip() {
        let (_, handles) = KeyRegistry::generate(SchemeId::Ed25519, 1, 0);
        let b = Block::new(
            ServerId(0),
            3,
            vec![BlockRef(Digest::of(b"a")), BlockRef(Digest::of(b"b"))],
            vec![(label(0, 5), Request(vec![0x10, 1, 2]))],
        )
        .signed(&handles[0]);
        let bytes = b.to_canonical_bytes();
        assert_eq!(Block::from_canonical_bytes(&bytes).unwrap(), b);
        assert!(Block::from_canonical_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn distinct_preds_keeps_first_occurrence_order() {
        let a = BlockRef(Digest::of(b"a"));
        let b = BlockRef(Digest::of(b"b"));
        let blk = Block::new(ServerId(0), 1, vec![b, a, b, a], vec![]);
        assert_eq!(blk.distinct_preds(), vec![b, a]);
    }
}
