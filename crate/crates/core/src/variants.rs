//! Protocol variants that replace the write-side masking of `P` with a
//! probabilistic read-side check: a cross-check against the last writer
//! (`pcv`) or against fingerprints spread with the write acknowledgements
//! (`phash`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::register::{Timestamp, Triple, Value};
use crate::simnet::ServerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    P,
    Pcv,
    Phash,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::P, Protocol::Pcv, Protocol::Phash];

    /// Writes issue dummy reads and check the replies only under `P`.
    pub fn masks_writes(self) -> bool {
        self == Protocol::P
    }

    pub fn uses_fingerprints(self) -> bool {
        self == Protocol::Phash
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::P => "p",
            Protocol::Pcv => "pcv",
            Protocol::Phash => "phash",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Protocol::P),
            "pcv" => Ok(Protocol::Pcv),
            "phash" => Ok(Protocol::Phash),
            other => Err(Error::Scenario(format!("unknown protocol tag {other:?}"))),
        }
    }
}

/// Seeded biased coin deciding whether a failed read runs the extra check.
#[derive(Debug, Clone)]
pub struct Coin {
    p: f64,
    rng: ChaCha8Rng,
}

impl Coin {
    pub const DEFAULT_P: f64 = 0.5;

    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidCoin(p));
        }
        Ok(Self { p, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn flip(&mut self) -> bool {
        self.rng.random_bool(self.p)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Digest(out))
    }
}

/// Length-prefixed encoding of a `(value, timestamp)` pair.
fn encode_pair(value: Value, ts: Timestamp) -> [u8; 17] {
    let mut buf = [0u8; 17];
    buf[0] = 16;
    buf[1..9].copy_from_slice(&value.0.to_be_bytes());
    buf[9..17].copy_from_slice(&ts.0.to_be_bytes());
    buf
}

/// Deterministic map from a written pair to a fixed-width digest.
pub trait Fingerprinter: fmt::Debug + Send + Sync {
    fn digest(&self, value: Value, ts: Timestamp) -> Digest;
}

/// Injective, readable encoding for tests: the pair itself, zero padded.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransparentFingerprint;

impl Fingerprinter for TransparentFingerprint {
    fn digest(&self, value: Value, ts: Timestamp) -> Digest {
        let mut out = [0u8; 32];
        out[..17].copy_from_slice(&encode_pair(value, ts));
        Digest(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256Fingerprint;

impl Fingerprinter for Sha256Fingerprint {
    fn digest(&self, value: Value, ts: Timestamp) -> Digest {
        let h = Sha256::digest(encode_pair(value, ts));
        let mut out = [0u8; 32];
        out.copy_from_slice(&h);
        Digest(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerprintKind {
    #[default]
    Transparent,
    Sha256,
}

impl FingerprintKind {
    pub fn build(self) -> std::sync::Arc<dyn Fingerprinter> {
        match self {
            FingerprintKind::Transparent => std::sync::Arc::new(TransparentFingerprint),
            FingerprintKind::Sha256 => std::sync::Arc::new(Sha256Fingerprint),
        }
    }
}

/// Fingerprints of the most recent writes, learnt from acknowledgements.
/// Only the last two timestamps are retained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FingerprintBook(BTreeMap<Timestamp, Digest>);

impl FingerprintBook {
    pub const CAPACITY: usize = 2;

    pub fn insert(&mut self, ts: Timestamp, digest: Digest) {
        self.0.insert(ts, digest);
        while self.0.len() > Self::CAPACITY {
            self.0.pop_first();
        }
    }

    pub fn get(&self, ts: Timestamp) -> Option<&Digest> {
        self.0.get(&ts)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Writes of a client, stamped with its fingerprint when the protocol uses them.
pub fn hash_write_decorate(
    protocol: Protocol,
    fp: &dyn Fingerprinter,
    value: Value,
    ts: Timestamp,
) -> Option<Digest> {
    protocol.uses_fingerprints().then(|| fp.digest(value, ts))
}

/// Result of checking collected replies against fingerprints.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HashVerification {
    pub detected: Vec<ServerId>,
    pub fingerprint_ops: u64,
}

/// Recompute the fingerprint of every reply triple from a server still
/// believed honest, and flag the servers whose triple does not match the
/// fingerprint known for its timestamp. Triples whose timestamp is not in
/// `known` are left to the timestamp rules.
pub fn hash_read_verify(
    replies: &BTreeSet<Triple>,
    honest: &BTreeSet<ServerId>,
    known: &FingerprintBook,
    fp: &dyn Fingerprinter,
) -> HashVerification {
    let mut detected = BTreeSet::new();
    let mut ops = 0;
    for t in replies.iter().filter(|t| honest.contains(&t.server)) {
        let Some(expected) = known.get(t.ts) else { continue };
        let mut matches = t.val.len() == 1;
        for v in &t.val {
            ops += 1;
            if fp.digest(*v, t.ts) != *expected {
                matches = false;
            }
        }
        if !matches {
            detected.insert(t.server);
        }
    }
    HashVerification { detected: detected.into_iter().collect(), fingerprint_ops: ops }
}

/// Outcome of cross-checking replies against witness answers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WitnessCheck {
    pub detected: Vec<ServerId>,
    /// Highest-timestamp witness that can be returned.
    pub chosen: Option<(Timestamp, Value)>,
}

/// Witnesses are clients whose last write carries a requested timestamp. A
/// witness is only trusted for timestamps at or above the reader's
/// `last_ts`; older writes could be stale. Every server still believed
/// honest that reported a trusted timestamp with another value is flagged.
pub fn witness_cross_check(
    replies: &BTreeSet<Triple>,
    honest: &BTreeSet<ServerId>,
    witnesses: &BTreeSet<(Timestamp, Value)>,
    last_ts: Timestamp,
) -> WitnessCheck {
    let trusted: BTreeMap<Timestamp, Value> = witnesses
        .iter()
        .filter(|(ts, _)| *ts >= last_ts)
        .map(|(ts, v)| (*ts, *v))
        .collect();
    let mut detected = BTreeSet::new();
    for t in replies.iter().filter(|t| honest.contains(&t.server)) {
        if let Some(v) = trusted.get(&t.ts) {
            if t.val.len() != 1 || !t.val.contains(v) {
                detected.insert(t.server);
            }
        }
    }
    WitnessCheck {
        detected: detected.into_iter().collect(),
        chosen: trusted.iter().next_back().map(|(ts, v)| (*ts, *v)),
    }
}
