//! Seeded random streams with a documented Gaussian transform.
//!
//! All randomness in the crate flows through [`GaussianStream`]: a ChaCha8
//! counter-mode generator plus the polar-free Box-Muller transform.  The
//! construction is spelled out so another implementation can reproduce the
//! statistics (not the samples) and so results are stable across releases of
//! the `rand` ecosystem:
//!
//! * uniforms are `(next_u64() >> 11) * 2^-53`, i.e. 53-bit mantissa values
//!   in `[0, 1)`;
//! * Gaussian pairs are `sqrt(-2 ln u1) * (cos, sin)(2 pi u2)` with
//!   `u1 in (0, 1]` (the complement of a `[0, 1)` uniform), the second
//!   element cached for the next call.
//!
//! Independent substreams (per training loop, per channel) come from
//! ChaCha's 64-bit stream counter, so a single master seed fans out into any
//! number of mutually independent, individually reproducible streams.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic Gaussian/uniform sample stream.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    /// Stream for `seed` on the default substream 0.
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Stream for `seed` on substream `stream` (independent of other substreams).
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, pair cached).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Bernoulli draw with success probability `p`.
    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }
}
