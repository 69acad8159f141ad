//! Hierarchical, order-independent random streams.
//!
//! Every stochastic draw in a build comes from a substream whose 256-bit
//! ChaCha seed is the SHA-256 digest of its coordinates
//! `(master seed, family, setting bits, replicate id, purpose)`. Any replicate
//! can therefore be regenerated alone, on any thread, in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha12Rng;

const DOMAIN: &[u8] = b"selbench/substream/v1";

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Treatment,
    Outcome,
    Group,
    Covariates,
    Verification,
}

impl Purpose {
    fn tag(self) -> &'static str {
        match self {
            Purpose::Treatment => "treatment",
            Purpose::Outcome => "outcome",
            Purpose::Group => "group",
            Purpose::Covariates => "covariates",
            Purpose::Verification => "verification",
        }
    }
}

/// Coordinates of a substream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey<'a> {
    pub master_seed: u64,
    pub family: &'a str,
    pub bits: &'a str,
    /// 0 addresses the DGP-level stream shared by all replicates.
    pub replicate_id: u32,
    pub purpose: Purpose,
}

impl StreamKey<'_> {
    pub fn seed(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        // length-prefixed fields keep the encoding injective
        for field in [
            DOMAIN,
            self.family.as_bytes(),
            self.bits.as_bytes(),
            self.purpose.tag().as_bytes(),
        ] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field);
        }
        h.update(self.master_seed.to_le_bytes());
        h.update(self.replicate_id.to_le_bytes());
        h.finalize().into()
    }

    pub fn stream(&self) -> Stream {
        Stream::from_seed(self.seed())
    }
}

/// Stream for draws not tied to a DGP (covariate synthesis, oracle checks).
pub fn global_stream(seed: u64, purpose: Purpose) -> Stream {
    StreamKey {
        master_seed: seed,
        family: "",
        bits: "",
        replicate_id: 0,
        purpose,
    }
    .stream()
}
