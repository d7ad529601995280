//! Deterministic, splittable random number generation.
//!
//! Every random draw in the crate flows from a [`CounterRng`] keyed by
//! `(seed, step, purpose)`. Streams with different keys are independent;
//! the same key always replays the same sequence, which is what makes
//! training runs and dataset generation bit-reproducible.
//!
//! The generator hashes a 128-bit key state plus a draw counter through the
//! SplitMix64 finalizer, so it is stateless apart from the counter.

/// SplitMix64 avalanche step: a well-mixed 64 -> 64 bit permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a, then one avalanche round.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    splitmix64(h)
}

/// Counter-based generator keyed by `(seed, step, purpose)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    /// Spare normal deviate from the last Box-Muller pair.
    cached_normal: Option<f64>,
}

impl CounterRng {
    pub fn keyed(seed: u64, step: u64, purpose: &str) -> Self {
        let key = splitmix64(seed ^ splitmix64(step ^ hash_str(purpose)));
        CounterRng {
            key,
            counter: 0,
            cached_normal: None,
        }
    }

    /// Derive an independent child stream without disturbing this one.
    pub fn split(&self, index: u64, purpose: &str) -> Self {
        CounterRng {
            key: splitmix64(self.key ^ splitmix64(index ^ hash_str(purpose))),
            counter: 0,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.key.wrapping_add(splitmix64(self.counter)));
        self.counter += 1;
        out
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection, bias-free.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is meaningless");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn int_range(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal deviate via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fill a fresh vector with standard normal deviates.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
