//! Building blocks for simulating multi-device wakeword recordings and
//! learning room-acoustic representations for device arbitration.
//!
//! The crate is organised bottom-up:
//!
//! - [`scene`] samples shoebox rooms with devices, a talker and noise sources.
//! - [`rir`] synthesises image-source room impulse responses.
//! - [`synth`] renders per-device recordings from source audio and RIRs.
//! - [`features`] turns waveforms into normalised log-filterbank energies.
//! - [`nn`] is a small reverse-mode autodiff engine with the encoder,
//!   summariser, speech encoder, decoder and arbitration classifier.
//! - [`objectives`] holds the contrastive, reconstructive and supervised
//!   losses plus the relative error rate metric.

pub mod error;
pub mod features;
pub mod nn;
pub mod objectives;
pub mod rir;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};

/// Derives a per-item seed from a global seed and an index.
///
/// Stable across platforms and independent of scheduling, so parallel
/// generation yields the same items as sequential generation.
pub fn derive_seed(global: u64, index: u64) -> u64 {
    let mut z = global
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
