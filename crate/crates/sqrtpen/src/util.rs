//! Small numeric and RNG helpers shared across the crate.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compensated (Kahan) accumulator for long sums of small terms.
#[derive(Default, Clone, Copy, Debug)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let y = value - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = KahanSum::default();
    for v in iter {
        acc.add(v);
    }
    acc.value()
}

/// Seeded generator on a numbered substream.
///
/// Replicates, restarts and workers each take their own counter so that
/// parallel execution reproduces the serial stream exactly.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Substream counter for two-level replication (e.g. grid point x replicate).
pub fn stream_id(major: u64, minor: u64) -> u64 {
    (major << 32) | (minor & 0xffff_ffff)
}

/// Derives an independent seed from a base seed and a counter.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn kahan_keeps_terms_a_naive_sum_loses() {
        // 100 terms of 1e-16 vanish against 1.0 in naive summation.
        let xs = std::iter::once(1.0)
            .chain(std::iter::repeat(1e-16).take(100))
            .chain(std::iter::once(-1.0));
        let naive: f64 = xs.clone().sum();
        assert_eq!(naive, 0.0);
        let compensated = kahan_sum(xs);
        assert!((compensated - 1e-14).abs() < 1e-16, "got {compensated}");
    }

    #[test]
    fn stream_rng_is_deterministic_and_stream_separated() {
        let a: f64 = stream_rng(7, 0).random();
        let b: f64 = stream_rng(7, 0).random();
        let c: f64 = stream_rng(7, 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
