//! Seeded random streams.
//!
//! One 64-bit run seed fans out into independent ChaCha streams, one per
//! consumer, so adding a consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env,
    PolicyInit,
    CriticInit,
    BufferSampling,
    Eval,
    Data,
    Collector(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Env => 1,
            Stream::PolicyInit => 2,
            Stream::CriticInit => 3,
            Stream::BufferSampling => 4,
            Stream::Eval => 5,
            Stream::Data => 6,
            Stream::Collector(i) => 1_000 + u64::from(i),
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
