//! Seeded, splittable random streams.
//!
//! Every sampler takes an explicit `&mut Stream`. Independent streams are
//! derived from a master seed with [`stream`]: the master seed keys a ChaCha8
//! generator and the stream index selects one of its 2^64 disjoint streams.
//! Parallel work is always split into indexed batches, so results depend on
//! the seed and the batch layout but never on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// The split function: stream `index` of master seed `seed`.
pub fn stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard exponential variable.
#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -open01(rng).ln()
}

/// Geometric number of failures before the first success, success probability `1 - w`.
#[inline]
pub fn geometric_failures<R: Rng + ?Sized>(rng: &mut R, w: f64) -> u64 {
    if w <= 0.0 {
        return 0;
    }
    let g = (open01(rng).ln() / w.ln()).floor();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

/// Default number of independent batches in a Monte Carlo run.
pub const DEFAULT_BATCHES: u64 = 64;

/// Runs `f(b, stream(seed, b))` for `b = 0..batches` on the rayon pool and
/// returns the results in batch order.
pub fn par_batches<T, F>(seed: u64, batches: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut Stream) -> T + Sync,
{
    use rayon::prelude::*;
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b);
            f(b, &mut rng)
        })
        .collect()
}

/// Splits `total` items over `batches` as evenly as possible.
pub fn batch_size(total: u64, batches: u64, b: u64) -> u64 {
    total / batches + u64::from(b < total % batches)
}
