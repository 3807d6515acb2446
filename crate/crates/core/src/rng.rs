//! Named, per-entity RNG substreams derived from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Generation,
    Campaigns,
    PostbackDelay,
    UdSchema,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Generation => 0x67656e,
            Stream::Campaigns => 0x63616d70,
            Stream::PostbackDelay => 0x706f7374,
            Stream::UdSchema => 0x7564,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Generation => "generation",
            Stream::Campaigns => "campaigns",
            Stream::PostbackDelay => "postback-delay",
            Stream::UdSchema => "ud-schema",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `(seed, stream, id)` into an independent 64-bit seed.
pub fn substream_seed(seed: u64, stream: Stream, id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream.tag()) ^ id)
}

pub fn substream(seed: u64, stream: Stream, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, stream, id))
}

/// Seed of a named child stream, e.g. the UD schema seed of a run.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    substream_seed(seed, stream, u64::MAX)
}
