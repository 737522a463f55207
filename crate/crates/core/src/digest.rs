// SPDX-License-Identifier: MIT OR Apache-2.0

//! Content hashing shared by the weight format, caches and reports.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of length-prefixed fields, so `("ab","c")` and `("a","bc")` differ.
pub fn fields_hash<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> String {
    hex::encode(fields_digest(fields))
}

/// Raw digest behind [`fields_hash`].
pub fn fields_digest<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut h = Sha256::new();
    for f in fields {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f);
    }
    h.finalize().into()
}
