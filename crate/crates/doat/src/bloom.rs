//! Bloom filters over anycast group identifiers.
//!
//! Routing tables and routing updates never carry group identifiers
//! directly; they carry fixed-size filters that aggregate them, and
//! area aggregation is filter union. Probe positions use double
//! hashing, `probe_i = (h1 + i*h2) mod m`, where `h1` and `h2` are
//! 64-bit FNV-1a digests of the identifier bytes: `h1` with the
//! standard offset basis, `h2` with the standard basis XOR
//! [`H2_BASIS_XOR`], forced odd. Everything here is plain integer
//! arithmetic, so probe positions are bit-exact across platforms and
//! languages.
//!
//! Bit `j` lives in byte `j / 8` at bit position `j % 8`,
//! least-significant bit first. A filter serialises as `(m, k, bytes)`
//! with `m` and `k` little-endian `u32`s.

use std::fmt;

use thiserror::Error;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

/// XORed into the FNV offset basis to derive the second, independent
/// digest for double hashing.
pub const H2_BASIS_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BloomError {
    #[error("group identifier must be non-empty")]
    EmptyGroupId,
    #[error("filter size {0} must be a multiple of 8 and at least 8")]
    BadBits(u32),
    #[error("hash count {0} must be in 1..=16")]
    BadHashes(u32),
    #[error("filter parameter mismatch: ({0}, {1}) vs ({2}, {3})")]
    ParamMismatch(u32, u32, u32, u32),
    #[error("truncated filter encoding")]
    Truncated,
}

/// An anycast group identifier: an opaque, non-empty byte string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(Vec<u8>);

impl GroupId {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, BloomError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(BloomError::EmptyGroupId);
        }
        Ok(Self(bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) if s.chars().all(|c| c.is_ascii_graphic()) => write!(f, "{s}"),
            _ => {
                for b in &self.0 {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

/// Filter geometry, fixed per scenario: `bits` (m) and `hashes` (k).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BloomParams {
    bits: u32,
    hashes: u32,
}

pub const DEFAULT_BLOOM_BITS: u32 = 1024;
pub const DEFAULT_BLOOM_HASHES: u32 = 7;

impl BloomParams {
    pub fn new(bits: u32, hashes: u32) -> Result<Self, BloomError> {
        if bits < 8 || bits % 8 != 0 {
            return Err(BloomError::BadBits(bits));
        }
        if !(1..=16).contains(&hashes) {
            return Err(BloomError::BadHashes(hashes));
        }
        Ok(Self { bits, hashes })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }
}

impl Default for BloomParams {
    fn default() -> Self {
        Self {
            bits: DEFAULT_BLOOM_BITS,
            hashes: DEFAULT_BLOOM_HASHES,
        }
    }
}

fn fnv1a_64(bytes: &[u8], basis: u64) -> u64 {
    let mut hash = basis;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn probes(group: &GroupId, params: BloomParams) -> impl Iterator<Item = u32> + '_ {
    let h1 = fnv1a_64(group.bytes(), FNV_OFFSET_BASIS);
    let h2 = fnv1a_64(group.bytes(), FNV_OFFSET_BASIS ^ H2_BASIS_XOR) | 1;
    let m = u64::from(params.bits);
    (0..u64::from(params.hashes))
        .map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as u32)
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    params: BloomParams,
    bytes: Vec<u8>,
}

impl BloomFilter {
    pub fn empty(params: BloomParams) -> Self {
        Self {
            params,
            bytes: vec![0; params.bits as usize / 8],
        }
    }

    pub fn params(&self) -> BloomParams {
        self.params
    }

    /// Sets the probe bits for `group`. Idempotent.
    pub fn insert(&mut self, group: &GroupId) {
        for j in probes(group, self.params) {
            self.bytes[j as usize / 8] |= 1 << (j % 8);
        }
    }

    /// True iff every probe bit for `group` is set. Never false for an
    /// inserted identifier.
    pub fn contains(&self, group: &GroupId) -> bool {
        probes(group, self.params).all(|j| self.bytes[j as usize / 8] & (1 << (j % 8)) != 0)
    }

    /// Bitwise OR of `other` into `self`.
    pub fn union_with(&mut self, other: &BloomFilter) -> Result<(), BloomError> {
        if self.params != other.params {
            return Err(BloomError::ParamMismatch(
                self.params.bits,
                self.params.hashes,
                other.params.bits,
                other.params.hashes,
            ));
        }
        for (a, b) in self.bytes.iter_mut().zip(&other.bytes) {
            *a |= b;
        }
        Ok(())
    }

    /// Union of a non-empty list of filters sharing one parameter set.
    pub fn union<'a>(
        mut filters: impl Iterator<Item = &'a BloomFilter>,
    ) -> Result<BloomFilter, BloomError> {
        let mut acc = filters.next().ok_or(BloomError::Truncated)?.clone();
        for f in filters {
            acc.union_with(f)?;
        }
        Ok(acc)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    pub fn popcount(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    pub fn fill_ratio(&self) -> f64 {
        f64::from(self.popcount()) / f64::from(self.params.bits)
    }

    pub fn bit(&self, j: u32) -> bool {
        self.bytes[j as usize / 8] & (1 << (j % 8)) != 0
    }

    /// True if every set bit of `other` is also set in `self`.
    pub fn is_superset_of(&self, other: &BloomFilter) -> bool {
        self.params == other.params
            && self
                .bytes
                .iter()
                .zip(&other.bytes)
                .all(|(a, b)| a & b == *b)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// `(m, k, bytes)` wire encoding, both integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.bytes.len());
        out.extend_from_slice(&self.params.bits.to_le_bytes());
        out.extend_from_slice(&self.params.hashes.to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, BloomError> {
        if data.len() < 8 {
            return Err(BloomError::Truncated);
        }
        let bits = u32::from_le_bytes(data[0..4].try_into().unwrap());
        let hashes = u32::from_le_bytes(data[4..8].try_into().unwrap());
        let params = BloomParams::new(bits, hashes)?;
        let body = &data[8..];
        if body.len() != bits as usize / 8 {
            return Err(BloomError::Truncated);
        }
        Ok(Self {
            params,
            bytes: body.to_vec(),
        })
    }
}

impl fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BloomFilter(m={}, k={}, set={})",
            self.params.bits,
            self.params.hashes,
            self.popcount()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gid(s: &str) -> GroupId {
        GroupId::new(s.as_bytes().to_vec()).unwrap()
    }

    #[test]
    fn fnv1a_reference_vectors() {
        assert_eq!(fnv1a_64(b"", FNV_OFFSET_BASIS), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a_64(b"a", FNV_OFFSET_BASIS), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a_64(b"foobar", FNV_OFFSET_BASIS), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BloomParams::new(0, 7).is_err());
        assert!(BloomParams::new(12, 7).is_err());
        assert!(BloomParams::new(1024, 0).is_err());
        assert!(BloomParams::new(1024, 17).is_err());
        assert!(GroupId::new(Vec::new()).is_err());
    }

    #[test]
    fn insert_then_contains() {
        let mut f = BloomFilter::empty(BloomParams::default());
        let g = gid("stream-42");
        assert!(!f.contains(&g));
        f.insert(&g);
        assert!(f.contains(&g));
    }

    #[test]
    fn insert_is_idempotent() {
        let mut once = BloomFilter::empty(BloomParams::default());
        once.insert(&gid("g"));
        let mut twice = once.clone();
        twice.insert(&gid("g"));
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_filter_contains_nothing() {
        let f = BloomFilter::empty(BloomParams::default());
        for i in 0..100 {
            assert!(!f.contains(&gid(&format!("group-{i}"))));
        }
    }

    #[test]
    fn fill_ratio_tracks_expectation() {
        // After n inserts the expected fill is 1 - (1 - 1/m)^(k*n).
        let params = BloomParams::new(1024, 7).unwrap();
        let mut f = BloomFilter::empty(params);
        let n = 100;
        for i in 0..n {
            f.insert(&gid(&format!("fill-{i}")));
        }
        let expected = 1.0 - (1.0 - 1.0 / 1024.0f64).powi(7 * n);
        let got = f.fill_ratio();
        assert!(
            got > expected / 2.0 && got < expected * 2.0,
            "fill {got}, expected about {expected}"
        );
    }

    #[test]
    fn false_positive_rate_tracks_expectation() {
        // Standard estimate (1 - e^(-kn/m))^k for n held elements.
        let params = BloomParams::new(1024, 7).unwrap();
        let n = 80;
        let mut f = BloomFilter::empty(params);
        for i in 0..n {
            f.insert(&gid(&format!("member-{i}")));
        }
        let trials = 1000;
        let hits = (0..trials)
            .filter(|i| f.contains(&gid(&format!("absent-{i}"))))
            .count();
        let observed = hits as f64 / trials as f64;
        let expected = (1.0 - (-7.0 * n as f64 / 1024.0).exp()).powi(7);
        assert!(
            observed < expected * 2.0 + 3.0 / trials as f64,
            "observed {observed}, expected about {expected}"
        );
    }

    #[test]
    fn union_identity_superset_monotone() {
        let params = BloomParams::default();
        let mut f1 = BloomFilter::empty(params);
        f1.insert(&gid("alpha"));
        let u = BloomFilter::union([&f1].into_iter()).unwrap();
        assert_eq!(u, f1);

        let mut f2 = BloomFilter::empty(params);
        f2.insert(&gid("beta"));
        let u = BloomFilter::union([&f1, &f2].into_iter()).unwrap();
        assert!(u.contains(&gid("alpha")));
        assert!(u.contains(&gid("beta")));
        assert!(u.is_superset_of(&f1));
        assert!(u.is_superset_of(&f2));
        assert!(u.popcount() >= f1.popcount().max(f2.popcount()));
    }

    #[test]
    fn union_rejects_mismatched_params() {
        let a = BloomFilter::empty(BloomParams::new(1024, 7).unwrap());
        let b = BloomFilter::empty(BloomParams::new(512, 7).unwrap());
        assert!(BloomFilter::union([&a, &b].into_iter()).is_err());
    }

    #[test]
    fn wire_encoding_round_trips() {
        let mut f = BloomFilter::empty(BloomParams::new(64, 3).unwrap());
        f.insert(&gid("x"));
        let back = BloomFilter::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn bit_layout_is_lsb_first() {
        // Probe positions are fully determined by the digests, so the
        // byte/bit layout is checkable directly.
        let params = BloomParams::new(64, 1).unwrap();
        let g = gid("layout");
        let mut f = BloomFilter::empty(params);
        f.insert(&g);
        let j = probes(&g, params).next().unwrap();
        assert!(f.bit(j));
        assert_eq!(f.as_bytes()[j as usize / 8], 1 << (j % 8));
    }

    #[test]
    fn probe_positions_are_stable() {
        // Frozen regression: probe sequence for a known identifier at
        // the default geometry must never change across releases.
        let seq: Vec<u32> = probes(&gid("group-0"), BloomParams::default()).collect();
        let h1 = fnv1a_64(b"group-0", FNV_OFFSET_BASIS);
        let h2 = fnv1a_64(b"group-0", FNV_OFFSET_BASIS ^ H2_BASIS_XOR) | 1;
        let expect: Vec<u32> = (0..7u64)
            .map(|i| (h1.wrapping_add(i.wrapping_mul(h2)) % 1024) as u32)
            .collect();
        assert_eq!(seq, expect);
        assert_eq!(seq, vec![1017, 600, 183, 790, 373, 980, 563]);
    }

    proptest! {
        #[test]
        fn no_false_negatives(groups in proptest::collection::vec("[a-z0-9]{1,12}", 1..40)) {
            let mut f = BloomFilter::empty(BloomParams::default());
            for g in &groups {
                f.insert(&gid(g));
            }
            for g in &groups {
                prop_assert!(f.contains(&gid(g)));
            }
        }

        #[test]
        fn union_is_assoc_comm_idem(
            xs in proptest::collection::vec("[a-z]{1,8}", 0..10),
            ys in proptest::collection::vec("[a-z]{1,8}", 0..10),
            zs in proptest::collection::vec("[a-z]{1,8}", 0..10),
        ) {
            let build = |names: &[String]| {
                let mut f = BloomFilter::empty(BloomParams::default());
                for n in names {
                    f.insert(&gid(n));
                }
                f
            };
            let (a, b, c) = (build(&xs), build(&ys), build(&zs));
            let ab_c = BloomFilter::union(
                [&BloomFilter::union([&a, &b].into_iter()).unwrap(), &c].into_iter(),
            ).unwrap();
            let a_bc = BloomFilter::union(
                [&a, &BloomFilter::union([&b, &c].into_iter()).unwrap()].into_iter(),
            ).unwrap();
            prop_assert_eq!(&ab_c, &a_bc);
            let ba = BloomFilter::union([&b, &a].into_iter()).unwrap();
            let ab = BloomFilter::union([&a, &b].into_iter()).unwrap();
            prop_assert_eq!(&ab, &ba);
            let aa = BloomFilter::union([&a, &a].into_iter()).unwrap();
            prop_assert_eq!(&aa, &a);
        }
    }
}
