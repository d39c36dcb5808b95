//! FNV-1a 64-bit hashing and bucket assignment.

const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

/// Number of assignment buckets.
pub const BUCKETS: u64 = 10_000;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(OFFSET_BASIS, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Hash of several byte strings joined by a 0x1f separator.
pub fn fnv1a64_parts(parts: &[&[u8]]) -> u64 {
    let mut h = OFFSET_BASIS;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h = (h ^ 0x1f).wrapping_mul(PRIME);
        }
        h = p.iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(PRIME));
    }
    h
}

pub fn bucket(id: &str) -> u64 {
    fnv1a64(id.as_bytes()) % BUCKETS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn parts_match_joined_bytes() {
        assert_eq!(fnv1a64_parts(&[b"s1", b"q2"]), fnv1a64(b"s1\x1fq2"));
        assert_eq!(fnv1a64_parts(&[b"abc"]), fnv1a64(b"abc"));
    }
}
