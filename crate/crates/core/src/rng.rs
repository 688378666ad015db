//! Seeded, named RNG streams.
//!
//! All randomness in the workspace flows from a single root seed through
//! [`stream`], which derives an independent ChaCha8 generator per stream
//! name. Modules that must stay in lockstep (e.g. the RO-TS trainer and the
//! plain SGD trainer it degenerates to) share a stream name from
//! [`streams`], while unrelated randomness (alignment subsets, attack noise)
//! lives on its own stream so adding or removing it cannot shift anyone
//! else's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names with cross-module contracts.
pub mod streams {
    /// Minibatch index draws for iteration-based trainers.
    pub const MINIBATCH: &str = "train/minibatch";
    /// Epoch shuffles for epoch-based trainers.
    pub const SHUFFLE: &str = "train/shuffle";
    /// Alignment-subset draws inside RO-TS.
    pub const ALIGN: &str = "rots/align";
    /// Moving-average warm start inside RO-TS.
    pub const WARM_START: &str = "rots/warm-start";
    /// Bandwidth estimation subsampling.
    pub const NU: &str = "nu-estimate";
    /// Model weight initialization.
    pub const INIT: &str = "net/init";
    /// Attack randomness (PGD starts, Gaussian noise) during training.
    pub const ATTACK: &str = "attack";
    /// Synthetic dataset generation.
    pub const SYNTH: &str = "data/synth";
    /// SCAGDA solver index draws.
    pub const SCAGDA: &str = "scagda";
    /// Fresh alignment subsets inside objective evaluation.
    pub const OBJECTIVE: &str = "rots/objective";
}

/// FNV-1a over the stream name; stable across platforms and releases.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer to spread correlated seeds apart.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the substream `name` of the root seed.
pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mixed = splitmix64(root_seed ^ fnv1a64(name.as_bytes()));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Derive a substream further keyed by an integer index (per-sample, per-repeat...).
pub fn stream_indexed(root_seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(root_seed ^ fnv1a64(name.as_bytes()) ^ splitmix64(index));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Draw `s` distinct indices from `0..n`, uniformly without replacement, by a
/// partial Fisher-Yates shuffle. Consumes exactly `s` RNG values, so trainers
/// that must stay in RNG lockstep can share the draw sequence.
pub fn sample_without_replacement(rng: &mut impl rand::Rng, n: usize, s: usize) -> Vec<usize> {
    assert!(s <= n, "cannot draw {s} distinct indices from 0..{n}");
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..s {
        let j = rng.random_range(k..n);
        idx.swap(k, j);
    }
    idx.truncate(s);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_name_same_draws() {
        let mut a = stream(7, "x");
        let mut b = stream(7, "x");
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn different_names_diverge() {
        let mut a = stream(7, "x");
        let mut b = stream(7, "y");
        let da: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let db: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_ne!(da, db);
    }

    #[test]
    fn different_roots_diverge() {
        let mut a = stream(7, "x");
        let mut b = stream(8, "x");
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn indexed_streams_distinct() {
        let mut a = stream_indexed(7, "x", 0);
        let mut b = stream_indexed(7, "x", 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn without_replacement_draws_are_distinct_and_in_range() {
        let mut r = stream(11, "t");
        for _ in 0..50 {
            let mut got = sample_without_replacement(&mut r, 10, 6);
            assert!(got.iter().all(|&i| i < 10));
            got.sort_unstable();
            got.dedup();
            assert_eq!(got.len(), 6);
        }
    }

    #[test]
    fn without_replacement_covers_the_full_range_when_s_equals_n() {
        let mut r = stream(11, "t");
        let mut got = sample_without_replacement(&mut r, 7, 7);
        got.sort_unstable();
        assert_eq!(got, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn without_replacement_is_roughly_uniform() {
        let mut r = stream(13, "t");
        let mut counts = [0usize; 8];
        let draws = 20_000;
        for _ in 0..draws {
            for i in sample_without_replacement(&mut r, 8, 3) {
                counts[i] += 1;
            }
        }
        let expect = draws as f64 * 3.0 / 8.0;
        for &c in &counts {
            assert!(
                (c as f64 - expect).abs() < 5.0 * (expect * (1.0 - 3.0 / 8.0)).sqrt(),
                "count {c} too far from {expect}"
            );
        }
    }
}
