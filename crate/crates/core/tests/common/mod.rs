#![allow(dead_code)]

use botstance::corpus::Corpus;
use botstance::synth::{self, ClassCounts, GroundTruth, SynthSpec};

/// Synthetic spec scaled down to `regular` regular accounts (80/20 split)
/// and `bots` bots.
pub fn small_spec(regular: usize, bots: usize) -> SynthSpec {
    SynthSpec {
        counts: ClassCounts {
            regular_apruebo: regular * 4 / 5,
            regular_rechazo: regular - regular * 4 / 5,
            bot_apruebo: bots / 2,
            bot_rechazo: bots - bots / 2,
        },
        ..SynthSpec::default()
    }
}

pub fn small_corpus(regular: usize, bots: usize, seed: u64) -> (Corpus, GroundTruth) {
    synth::generate_corpus(&small_spec(regular, bots), seed).expect("valid spec")
}
