//! Counter-based SplitMix64 generator.
//!
//! The stream is fixed forever: output `i` of a generator seeded with `s` is
//! `mix(s + (i + 1) * GOLDEN)`. Transcendental functions go through `libm` so
//! samples are identical across platforms.

use serde::{Deserialize, Serialize};

use super::Array;
use crate::error::{invalid, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream addressed by `seed` and a path of keys.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let mut s = mix(seed ^ 0x6A09_E667_F3BC_C908);
        for &k in keys {
            s = mix(s ^ mix(k.wrapping_add(GOLDEN)));
        }
        Self::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        // (0, 1] so the log is finite
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Uniform integer in `0..n` by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

/// Fills an array of `shape` from `dist`; a pure function of its arguments.
pub fn rng_fill(seed: u64, shape: &[usize], dist: Distribution) -> Result<Array> {
    let len = shape.iter().product();
    let mut rng = Rng::new(seed);
    let data = match dist {
        Distribution::Uniform { low, high } => {
            if !(low <= high) || !low.is_finite() || !high.is_finite() {
                return invalid(format!("uniform bounds must satisfy a <= b, got ({low}, {high})"));
            }
            (0..len).map(|_| low + (high - low) * rng.uniform()).collect()
        }
        Distribution::Normal { mean, std } => {
            if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                return invalid(format!("normal std must be >= 0, got {std}"));
            }
            (0..len).map(|_| mean + std * rng.normal()).collect()
        }
    };
    Array::new(shape.to_vec(), data)
}
