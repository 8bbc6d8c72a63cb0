//! Seeded sampling helpers shared by augmentation, dataset splitting, and
//! weight init. Hand-rolled (top-53-bit uniforms, Box-Muller normals,
//! Fisher-Yates) so the exact streams are pinned by this crate, not by a
//! dependency's distribution internals.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

/// Uniform draw in [0, 1) from the top 53 bits of one `next_u64` call.
pub(crate) fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Standard-normal draw via Box-Muller: z = sqrt(-2 ln u1) * cos(2*pi*u2),
/// with u1 = 1 - unit_f64 so the log argument is never zero. Exactly two
/// `next_u64` calls per sample; the sine twin is discarded.
pub(crate) fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - unit_f64(rng);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fisher-Yates shuffle drawing one `next_u64` per swap.
pub(crate) fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
