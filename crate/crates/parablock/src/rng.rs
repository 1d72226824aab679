//! Master-seed derivation for every random stream in a run.
//!
//! All randomness in an experiment flows from one master seed. Each
//! consumer derives its own ChaCha8 stream keyed by
//! `(master, client, round, tag)`, so two runs with the same configuration
//! are bit-identical and results never depend on the order in which
//! clients or rounds are evaluated.
//!
//! Tags in use across the crate:
//!
//! * `"init"` — global model initialization (client slot 0, round 0)
//! * `"center"` / `"curvature"` — per-client quadratic objective shape
//! * `"dataset"` — synthetic dataset generation (client slot 0)
//! * `"dirichlet"` — data partition draws (client slot 0)
//! * `"shuffle"` — per-client minibatch order (round slot 0, persistent)
//! * `"noise"` — per-client per-round stochastic gradient noise
//! * `"scheduler"` — random block scheduler (client slot 0, round 0)
//! * `"cohort"` — per-round participation draw (client slot 0)

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit subseed for one `(master, client, round, tag)` stream.
///
/// FNV-1a over the little-endian bytes of the three integers and the tag,
/// finished with a splitmix64 avalanche so that near-identical inputs land
/// far apart. The function is pure and fixed for the life of the crate;
/// changing it would silently invalidate every frozen fixture.
pub fn subseed(master: u64, client: u64, round: u64, tag: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for chunk in [master, client, round] {
        for byte in chunk.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    }
    for byte in tag.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(PRIME);
    }
    // splitmix64 finalizer
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream for one `(master, client, round, tag)`.
pub fn stream(master: u64, client: u64, round: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, client, round, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn subseed_is_stable_across_runs() {
        // Frozen value: guards against accidental changes to the hash,
        // which would invalidate every seed-pinned fixture in the crate.
        let s = subseed(42, 3, 17, "noise");
        assert_eq!(s, subseed(42, 3, 17, "noise"));
        assert_eq!(s, 0x41d3_17ec_e4e9_3ed8);
    }

    #[test]
    fn subseed_separates_nearby_keys() {
        let base = subseed(1, 2, 3, "noise");
        assert_ne!(base, subseed(1, 2, 3, "shuffle"));
        assert_ne!(base, subseed(1, 2, 4, "noise"));
        assert_ne!(base, subseed(1, 3, 3, "noise"));
        assert_ne!(base, subseed(2, 2, 3, "noise"));
        // client/round must not be interchangeable
        assert_ne!(subseed(1, 2, 3, "noise"), subseed(1, 3, 2, "noise"));
    }

    #[test]
    fn streams_replay_identically() {
        let a: Vec<u64> = stream(7, 1, 5, "noise").random_iter().take(32).collect();
        let b: Vec<u64> = stream(7, 1, 5, "noise").random_iter().take(32).collect();
        assert_eq!(a, b);
        let c: Vec<u64> = stream(7, 1, 6, "noise").random_iter().take(32).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_for_different_clients_are_independent_looking() {
        let mut r0 = stream(7, 0, 0, "noise");
        let mut r1 = stream(7, 1, 0, "noise");
        let mut agree = 0;
        for _ in 0..64 {
            if r0.random::<u64>() == r1.random::<u64>() {
                agree += 1;
            }
        }
        assert_eq!(agree, 0);
    }
}
