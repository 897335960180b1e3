//! Seeded pseudo-random numbers.
//!
//! The generator is xoshiro256++ with its 256-bit state filled from successive
//! splitmix64 outputs of the 64-bit seed. Every draw used by the simulator goes
//! through this type so a run is a pure function of its seeds.

use std::f64::consts::TAU;

/// One splitmix64 step on `x`: advance by the golden gamma, then finalize.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: [u64; 4],
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut x = seed;
        let mut state = [0u64; 4];
        for s in &mut state {
            *s = splitmix64(x);
            x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        }
        Self { state, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` from the high 24 bits of one draw.
    pub fn uniform_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform_f32()
    }

    /// Integer in `[0, n)` by multiply-shift. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fill `out` with standard normals.
    ///
    /// Box-Muller, one pair per two uniforms: `u1` then `u2`, emitting the cosine
    /// branch before the sine branch. An odd-length request drops the final sine
    /// value; nothing is cached between calls.
    pub fn fill_normal(&mut self, out: &mut [f32]) {
        let mut chunks = out.chunks_mut(2);
        for pair in &mut chunks {
            // 1 - u keeps the log argument in (0, 1].
            let u1 = 1.0 - self.uniform_f32() as f64;
            let u2 = self.uniform_f32() as f64;
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = TAU * u2;
            pair[0] = (radius * angle.cos()) as f32;
            if let Some(second) = pair.get_mut(1) {
                *second = (radius * angle.sin()) as f32;
            }
        }
    }

    pub fn normal(&mut self) -> f32 {
        let mut v = [0.0f32; 1];
        self.fill_normal(&mut v);
        v[0]
    }

    /// Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Derive an independent child generator; the parent advances by one draw.
    pub fn fork(&mut self) -> Rng {
        Rng::new(splitmix64(self.next_u64()))
    }
}
