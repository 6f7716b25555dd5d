//! Small deterministic helpers shared across the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Base seed for all pseudo-random start vectors. Every consumer derives its
/// stream from this plus a purpose tag, so reruns are bit-reproducible.
const SEED_BASE: u64 = 0x5eed_2d_ba2d_64_97;

/// Deterministic RNG for a given purpose tag.
pub fn seeded_rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED_BASE ^ tag)
}

/// Deterministic start vector with entries uniform in [-1, 1].
pub fn seeded_vector(n: usize, tag: u64) -> Vec<f64> {
    let mut rng = seeded_rng(tag);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Format a float with 17 significant digits (round-trip exact for f64).
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

/// Canonical JSON text: keys sorted, no insignificant whitespace.
///
/// `serde_json::Value` already stores objects in a `BTreeMap` (the
/// `preserve_order` feature is off), so plain serialization is canonical;
/// this wrapper documents the invariant at call sites that hash the result.
pub fn canonical_json(v: &serde_json::Value) -> String {
    serde_json::to_string(v).expect("serializing a Value cannot fail")
}

/// Least-squares slope and intercept of y against x.
pub fn lsq_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}
