//! Hashing and signatures.
//!
//! Two signature schemes share one interface. `Ed25519` is real public-key
//! signing. `KeyedMac` is a fast deterministic stand-in for simulation: a
//! signature is `SHA-256(secret || digest)`, so verification needs the
//! registry to hold the secret. That is fine inside a simulator where the
//! registry is trusted infrastructure and adversaries only ever receive their
//! own [`SigningHandle`].

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::block::ServerId;
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};

pub const DIGEST_LEN: usize = 32;

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    /// Hash of a domain tag followed by `bytes`; keeps hashes of different
    /// kinds of objects apart.
    pub fn tagged(domain: &[u8], bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update((domain.len() as u32).to_be_bytes());
        h.update(domain);
        h.update(bytes);
        Self(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }

    /// First 8 bytes in hex, for display.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..8])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Encode for Digest {
    fn encode_to(&self, w: &mut Writer) {
        w.raw(&self.0);
    }
}

impl Decode for Digest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(r.array()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    #[default]
    KeyedMac,
    Ed25519,
}

impl SchemeId {
    fn tag(self) -> u8 {
        match self {
            SchemeId::KeyedMac => 1,
            SchemeId::Ed25519 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, DecodeError> {
        match tag {
            1 => Ok(SchemeId::KeyedMac),
            2 => Ok(SchemeId::Ed25519),
            tag => Err(DecodeError::BadTag { what: "signature scheme", tag }),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub scheme: SchemeId,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = &self.bytes[..self.bytes.len().min(6)];
        write!(f, "Signature({:?}, {}..)", self.scheme, hex::encode(head))
    }
}

impl Encode for Signature {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.scheme.tag()).bytes(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let scheme = SchemeId::from_tag(r.u8()?)?;
        let bytes = r.bytes()?;
        Ok(Self { scheme, bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("no key registered for server {0}")]
    UnknownServer(ServerId),
}

#[derive(Clone)]
enum Secret {
    Mac([u8; 32]),
    Ed25519(Box<SigningKey>),
}

enum PublicKey {
    Mac([u8; 32]),
    Ed25519(VerifyingKey),
}

/// The only object able to produce signatures for one server.
#[derive(Clone)]
pub struct SigningHandle {
    server: ServerId,
    secret: Secret,
}

impl fmt::Debug for SigningHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningHandle").field("server", &self.server).finish_non_exhaustive()
    }
}

impl SigningHandle {
    pub fn server(&self) -> ServerId {
        self.server
    }

    pub fn sign(&self, digest: &Digest) -> Signature {
        match &self.secret {
            Secret::Mac(key) => Signature {
                scheme: SchemeId::KeyedMac,
                bytes: mac(key, digest).to_vec(),
            },
            Secret::Ed25519(key) => Signature {
                scheme: SchemeId::Ed25519,
                bytes: key.sign(digest.as_bytes()).to_bytes().to_vec(),
            },
        }
    }
}

fn mac(key: &[u8; 32], digest: &Digest) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(digest.as_bytes());
    h.finalize().into()
}

/// Verification keys for servers `0..n`.
pub struct KeyRegistry {
    scheme: SchemeId,
    keys: Vec<PublicKey>,
}

impl fmt::Debug for KeyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRegistry")
            .field("scheme", &self.scheme)
            .field("servers", &self.keys.len())
            .finish()
    }
}

impl KeyRegistry {
    /// Deterministically derives keys for `n` servers from `seed`.
    pub fn generate(scheme: SchemeId, n: usize, seed: u64) -> (Self, Vec<SigningHandle>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keys = Vec::with_capacity(n);
        let mut handles = Vec::with_capacity(n);
        for i in 0..n {
            let mut material = [0u8; 32];
            rng.fill_bytes(&mut material);
            let server = ServerId(i as u32);
            let (public, secret) = match scheme {
                SchemeId::KeyedMac => (PublicKey::Mac(material), Secret::Mac(material)),
                SchemeId::Ed25519 => {
                    let sk = SigningKey::from_bytes(&material);
                    (PublicKey::Ed25519(sk.verifying_key()), Secret::Ed25519(Box::new(sk)))
                }
            };
            keys.push(public);
            handles.push(SigningHandle { server, secret });
        }
        (Self { scheme, keys }, handles)
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, server: ServerId) -> bool {
        (server.0 as usize) < self.keys.len()
    }

    /// `Ok(false)` for a signature that does not verify, including one from
    /// the wrong scheme; `Err` only when the server is unknown.
    pub fn verify(&self, server: ServerId, digest: &Digest, sig: &Signature) -> Result<bool, CryptoError> {
        let key = self
            .keys
            .get(server.0 as usize)
            .ok_or(CryptoError::UnknownServer(server))?;
        Ok(match (key, sig.scheme) {
            (PublicKey::Mac(k), SchemeId::KeyedMac) => sig.bytes.as_slice() == mac(k, digest),
            (PublicKey::Ed25519(vk), SchemeId::Ed25519) => {
                let Ok(raw) = <[u8; 64]>::try_from(sig.bytes.as_slice()) else {
                    return Ok(false);
                };
                let sig = ed25519_dalek::Signature::from_bytes(&raw);
                vk.verify(digest.as_bytes(), &sig).is_ok()
            }
            _ => false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(scheme: SchemeId) {
        let (reg, handles) = KeyRegistry::generate(scheme, 4, 9);
        let d = Digest::of(b"block");
        let sig = handles[2].sign(&d);
        assert_eq!(reg.verify(ServerId(2), &d, &sig), Ok(true));
        assert_eq!(reg.verify(ServerId(1), &d, &sig), Ok(false));
        assert_eq!(reg.verify(ServerId(2), &Digest::of(b"other"), &sig), Ok(false));
        assert_eq!(
            reg.verify(ServerId(4), &d, &sig),
            Err(CryptoError::UnknownServer(ServerId(4)))
        );
    }

    #[test]
    fn mac_sign_verify() {
        roundtrip(SchemeId::KeyedMac);
    }

    #[test]
    fn ed25519_sign_verify() {
        roundtrip(SchemeId::Ed25519);
    }

    #[test]
    fn key_generation_is_seeded() {
        let (_, a) = KeyRegistry::generate(SchemeId::KeyedMac, 2, 1);
        let (_, b) = KeyRegistry::generate(SchemeId::KeyedMac, 2, 1);
        let (_, c) = KeyRegistry::generate(SchemeId::KeyedMac, 2, 2);
        let d = Digest::of(b"x");
        assert_eq!(a[0].sign(&d), b[0].sign(&d));
        assert_ne!(a[0].sign(&d), c[0].sign(&d));
    }

    #[test]
    fn cross_scheme_signature_is_rejected() {
        let (mac_reg, _) = KeyRegistry::generate(SchemeId::KeyedMac, 1, 3);
        let (_, ed) = KeyRegistry::generate(SchemeId::Ed25519, 1, 3);
        let d = Digest::of(b"x");
        assert_eq!(mac_reg.verify(ServerId(0), &d, &ed[0].sign(&d)), Ok(false));
    }

    #[test]
    fn tagged_hashes_separate_domains() {
        assert_ne!(Digest::tagged(b"a", b"bc"), Digest::tagged(b"ab", b"c"));
    }

    #[test]
    fn digest_hex_roundtrip() {
        let d = Digest::of(b"hello");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
