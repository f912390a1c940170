use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `data`.
pub(crate) fn sha256_hex(data: &[u8]) -> String {
    hex_prefix(data, 32)
}

/// First `bytes` bytes of the SHA-256 of `data`, as lower-case hex.
pub(crate) fn hex_prefix(data: &[u8], bytes: usize) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(bytes * 2);
    for b in digest.iter().take(bytes) {
        let _ = write!(out, "{:02x}", b);
    }
    out
}
