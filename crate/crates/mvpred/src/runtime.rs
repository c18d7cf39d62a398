//! Data-parallel helpers. With the `parallel` feature (default) `par_map`
//! fans work out over rayon; without it the same call runs sequentially.
//! Both paths preserve input order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map over a slice, parallel when the feature is on.
#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    items.par_iter().map(|t| f(t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(|t| f(t)).collect()
}

/// Always-sequential map, kept for benchmarking against `par_map`.
pub fn seq_map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(|t| f(t)).collect()
}

/// Splitmix64-style seed derivation so independent tasks get independent,
/// reproducible RNG streams from one root seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x = x.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(t);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        x = z ^ (z >> 31);
    }
    x
}

/// Stable small tag for string ids (FNV-1a).
pub fn tag(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
