//! Counter-based deterministic randomness.
//!
//! Every draw is a pure function of (key, counter), so sampling work can be
//! split across questions or threads in any order without changing results.
//! Keys are derived by hashing a master seed with context values such as the
//! question id and the draw index.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective mixer with good avalanche behavior.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `i`-th value of the SplitMix64 stream keyed by `key`.
#[inline]
pub fn stream(key: u64, i: u64) -> u64 {
    mix64(key.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Fold extra context values into a key.
pub fn derive_key(master: u64, parts: &[u64]) -> u64 {
    let mut key = mix64(master ^ GOLDEN_GAMMA);
    for &p in parts {
        key = mix64(key.wrapping_add(GOLDEN_GAMMA) ^ mix64(p));
    }
    key
}

/// FNV-1a hash for string context (question ids).
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Map 64 random bits to a double in [0, 1).
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential convenience wrapper over the counter stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Key derived from a master seed plus context parts.
    pub fn from_parts(master: u64, parts: &[u64]) -> Self {
        Self::new(derive_key(master, parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = stream(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn next_open_f64(&mut self) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free modulo bias is negligible for the small n used here,
        // but widening multiply avoids it outright.
        let wide = (u128::from(self.next_u64()) * n as u128) >> 64;
        wide as usize
    }
}
