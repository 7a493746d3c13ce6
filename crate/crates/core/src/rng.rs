//! Deterministic random streams keyed by provenance.
//!
//! A stream is identified by `(global_seed, epoch, worker_id, purpose)`. The
//! tuple is folded into a 64-bit state with the SplitMix64 finalizer, and the
//! stream itself is a SplitMix64 generator started from that state. All
//! constants are listed below so other implementations can reproduce every
//! draw bit for bit.
//!
//! ```text
//! GOLDEN   = 0x9E37_79B9_7F4A_7C15
//! mix(z)   : z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//!            z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//!            z ^ (z >> 31)                      (wrapping arithmetic)
//! tag(s)   = FNV-1a 64 over the UTF-8 bytes of s
//!            (offset 0xCBF2_9CE4_8422_2325, prime 0x0000_0100_0000_01B3)
//! state    = mix(seed + GOLDEN)
//! state    = mix((state + GOLDEN) ^ epoch)
//! state    = mix((state + GOLDEN) ^ worker_id)
//! state    = mix((state + GOLDEN) ^ tag(purpose))
//! next()   : state += GOLDEN; return mix(state)
//! ```
//!
//! Derived draws:
//! * `next_f64`: `(next() >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * `below(n)`: Lemire's multiply-shift with rejection, unbiased on `[0, n)`.
//! * `normal`: Box-Muller cosine branch with `u1 = 1 - next_f64()`, one
//!   variate per two uniforms.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn tag_hash(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Where a stream came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub global_seed: u64,
    pub epoch: u64,
    pub worker_id: u64,
    pub purpose: String,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    provenance: Provenance,
}

impl RngStream {
    pub fn new(global_seed: u64, epoch: u64, worker_id: u64, purpose: &str) -> Self {
        let mut state = mix64(global_seed.wrapping_add(GOLDEN));
        for component in [epoch, worker_id, tag_hash(purpose)] {
            state = mix64(state.wrapping_add(GOLDEN) ^ component);
        }
        Self {
            state,
            provenance: Provenance {
                global_seed,
                epoch,
                worker_id,
                purpose: purpose.to_owned(),
            },
        }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p`. `p <= 0` never fires, `p >= 1` always does.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer on `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle, high index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
