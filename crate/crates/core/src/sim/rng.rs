//! Named random streams derived from one master seed.
//!
//! Every stream shares the ChaCha8 key expanded from the seed by
//! `SeedableRng::seed_from_u64` and differs in the ChaCha stream id, so the
//! streams are independent and each one depends only on `(seed, name)`. The
//! ids below are part of the reproducibility contract and never renumbered.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamName {
    Process,
    Measurement,
    ScLoss,
    ScDelay,
    CaLoss,
    CaDelay,
    Solver,
}

impl StreamName {
    pub const ALL: [StreamName; 7] = [
        StreamName::Process,
        StreamName::Measurement,
        StreamName::ScLoss,
        StreamName::ScDelay,
        StreamName::CaLoss,
        StreamName::CaDelay,
        StreamName::Solver,
    ];

    pub fn id(self) -> u64 {
        match self {
            StreamName::Process => 1,
            StreamName::Measurement => 2,
            StreamName::ScLoss => 3,
            StreamName::ScDelay => 4,
            StreamName::CaLoss => 5,
            StreamName::CaDelay => 6,
            StreamName::Solver => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StreamName::Process => "process",
            StreamName::Measurement => "measurement",
            StreamName::ScLoss => "sc_loss",
            StreamName::ScDelay => "sc_delay",
            StreamName::CaLoss => "ca_loss",
            StreamName::CaDelay => "ca_delay",
            StreamName::Solver => "solver",
        }
    }
}

/// The stream `name` of master seed `seed`.
pub fn stream(seed: u64, name: StreamName) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name.id());
    rng
}

/// One generator per purpose.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub process: ChaCha8Rng,
    pub measurement: ChaCha8Rng,
    pub sc_loss: ChaCha8Rng,
    pub sc_delay: ChaCha8Rng,
    pub ca_loss: ChaCha8Rng,
    pub ca_delay: ChaCha8Rng,
    /// Reserved for randomized solver components; the shipped solvers are
    /// deterministic and never draw from it.
    pub solver: ChaCha8Rng,
}

pub fn rng_streams(seed: u64) -> RngStreams {
    RngStreams {
        process: stream(seed, StreamName::Process),
        measurement: stream(seed, StreamName::Measurement),
        sc_loss: stream(seed, StreamName::ScLoss),
        sc_delay: stream(seed, StreamName::ScDelay),
        ca_loss: stream(seed, StreamName::CaLoss),
        ca_delay: stream(seed, StreamName::CaDelay),
        solver: stream(seed, StreamName::Solver),
    }
}
