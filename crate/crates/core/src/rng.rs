//! Seeded, portable random streams.
//!
//! Every component draws from its own ChaCha8 stream derived from the run
//! seed and a stream name (`"init"`, `"dropout"`, `"batch"`, ...), so that
//! changing how often one component draws does not shift another's values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// FNV-1a over the name, mixed with the seed through splitmix64.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, name: &str) -> Stream {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |name: &str| {
            let mut r = stream(5, name);
            (0..4).map(|_| r.gen::<u32>()).collect::<Vec<_>>()
        };
        let (a, b, c) = (draw("init"), draw("init"), draw("dropout"));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
