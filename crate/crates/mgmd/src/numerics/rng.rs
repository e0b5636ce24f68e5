use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random source used everywhere randomness is needed.
///
/// The uniform stream comes from ChaCha8 keyed by the seed. Every derived
/// quantity is a fixed, documented transform of that stream:
///   uniform:  top 53 bits of next_u64, scaled by 2^-53, giving [0, 1)
///   normal:   Box-Muller on two uniforms (second variate cached)
///   index:    modulo rejection sampling, no bias
/// so a seed pins the entire experiment.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    chacha: ChaCha8Rng,
    cached_normal: Option<f64>,
}

/// splitmix64 finalizer; scrambles substream ids into fresh seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> SeededRng {
        SeededRng {
            seed,
            chacha: ChaCha8Rng::seed_from_u64(seed),
            cached_normal: None,
        }
    }

    /// Independent substream. Identity depends only on (base seed, stream id),
    /// not on how far this generator has advanced, so per-pair streams can be
    /// handed out in any order without changing results.
    pub fn derive(&self, stream: u64) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.chacha.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Standard normal draw via Box-Muller. Consumes two uniforms per pair;
    /// the sine variate is cached and returned on the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // 1 - uniform() lies in (0, 1], keeping ln away from zero.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in [0, n). Rejection sampling on the raw stream keeps
    /// the distribution exact for every n.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() needs a non-empty range");
        let bound = n as u64;
        let limit = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < limit {
                return (v % bound) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.index(i + 1);
            slice.swap(i, j);
        }
    }
}
