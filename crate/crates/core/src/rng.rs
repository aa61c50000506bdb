//! Counter-based random numbers keyed by `(seed, particle, slot)`.
//!
//! Every particle owns a ChaCha8 stream; slot `s` of that stream holds the
//! two 64-bit words consumed by one draw. Random access by position makes the
//! draws independent of evaluation order and thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words reserved per slot (two `u64`).
const WORDS_PER_SLOT: u128 = 4;

#[derive(Debug, Clone)]
pub struct CounterRng {
    base: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { base: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Two raw words at `(stream, slot)`.
    #[inline]
    pub fn words(&self, stream: u64, slot: u64) -> [u64; 2] {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
        [rng.next_u64(), rng.next_u64()]
    }

    /// Two uniforms in `[0, 1)` with 53 bits each.
    #[inline]
    pub fn uniform_pair(&self, stream: u64, slot: u64) -> [f64; 2] {
        let [a, b] = self.words(stream, slot);
        [to_unit(a), to_unit(b)]
    }

    /// Two independent standard normals (Box-Muller), consuming exactly one
    /// slot.
    #[inline]
    pub fn normal_pair(&self, stream: u64, slot: u64) -> [f64; 2] {
        let [u1, u2] = self.uniform_pair(stream, slot);
        box_muller(1.0 - u1, u2)
    }

    /// Sequential reader of `stream` starting at `slot`. Reading `k` pairs
    /// yields the same values as random access at slots `slot..slot + k`.
    pub fn cursor(&self, stream: u64, slot: u64) -> StreamCursor {
        let mut rng = self.base.clone();
        rng.set_stream(stream);
        rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
        StreamCursor { rng }
    }
}

/// Position inside one stream, advanced one slot per draw.
#[derive(Debug, Clone)]
pub struct StreamCursor {
    rng: ChaCha8Rng,
}

impl StreamCursor {
    #[inline]
    pub fn next_uniform_pair(&mut self) -> [f64; 2] {
        [to_unit(self.rng.next_u64()), to_unit(self.rng.next_u64())]
    }

    #[inline]
    pub fn next_normal_pair(&mut self) -> [f64; 2] {
        let [u1, u2] = self.next_uniform_pair();
        box_muller(1.0 - u1, u2)
    }

    /// Slot the next draw will read.
    pub fn slot(&self) -> u64 {
        (self.rng.get_word_pos() / WORDS_PER_SLOT) as u64
    }
}

#[inline]
fn to_unit(w: u64) -> f64 {
    (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `u1` must lie in `(0, 1]`.
#[inline]
fn box_muller(u1: f64, u2: f64) -> [f64; 2] {
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
    [r * c, r * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_position_addressed() {
        let rng = CounterRng::new(7);
        let a = rng.normal_pair(3, 10);
        let _ = rng.normal_pair(5, 2);
        assert_eq!(a, rng.normal_pair(3, 10));
        assert_eq!(a, CounterRng::new(7).normal_pair(3, 10));
        assert_ne!(a, rng.normal_pair(3, 11));
        assert_ne!(a, rng.normal_pair(4, 10));
        assert_ne!(a, CounterRng::new(8).normal_pair(3, 10));
    }

    #[test]
    fn slots_do_not_overlap() {
        let rng = CounterRng::new(1);
        let mut seq = ChaCha8Rng::seed_from_u64(1);
        seq.set_stream(9);
        for slot in 0..5 {
            let w = rng.words(9, slot);
            assert_eq!(w, [seq.next_u64(), seq.next_u64()]);
        }
    }

    #[test]
    fn cursor_matches_random_access() {
        let rng = CounterRng::new(3);
        let mut c = rng.cursor(12, 5);
        for slot in 5..40 {
            assert_eq!(c.slot(), slot);
            assert_eq!(c.next_normal_pair(), rng.normal_pair(12, slot));
        }
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(42);
        let n = 200_000u64;
        let (mut s1, mut s2, mut cross) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let [a, b] = rng.normal_pair(i, 0);
            s1 += a + b;
            s2 += a * a + b * b;
            cross += a * b;
        }
        let m = 2.0 * n as f64;
        let mean = s1 / m;
        let var = s2 / m - mean * mean;
        assert!(mean.abs() < 5.0 / m.sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / m).sqrt());
        assert!((cross / n as f64).abs() < 5.0 / (n as f64).sqrt());
    }
}
