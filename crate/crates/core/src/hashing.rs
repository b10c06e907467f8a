use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// First 16 hex digits of the SHA-256, used as a compact fingerprint.
pub fn short_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..16].to_string()
}

/// Fingerprint of a value's canonical JSON encoding.
pub fn json_hash<T: serde::Serialize>(value: &T) -> String {
    short_hash(serde_json::to_string(value).expect("serializable").as_bytes())
}

/// SplitMix64 finalizer; a stable 64-bit mixer independent of std's hasher.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(short_hash(b"abc"), "ba7816bf8f01cfea");
    }

    #[test]
    fn mix64_spreads_neighbours() {
        assert_ne!(mix64(1) % 10, mix64(2) % 10);
        assert_eq!(mix64(7), mix64(7));
    }
}
