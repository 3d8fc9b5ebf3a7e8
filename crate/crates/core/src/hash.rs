//! Stable hashing used for cassette keys, seed splitting and the echo provider.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a path of labels.
///
/// Parts are separated by a 0xff byte, which never occurs in UTF-8 text.
pub fn derive_seed(root: u64, parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::with_capacity(8 + parts.iter().map(|p| p.len() + 1).sum::<usize>());
    buf.extend_from_slice(&root.to_le_bytes());
    for part in parts {
        buf.push(0xff);
        buf.extend_from_slice(part);
    }
    mix64(fnv1a64(&buf))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
