//! Seeded random streams split by label.
//!
//! Every stochastic consumer asks for its own stream (`"init/mstf"`,
//! `"train-mask/epoch-3"`, ...). Streams with different labels are
//! independent ChaCha streams of the same seed, so adding a consumer never
//! shifts the numbers another consumer sees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

/// 64-bit FNV-1a, used to turn a stream label into a ChaCha stream id.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRoot(pub u64);

impl SeedRoot {
    pub fn stream(&self, label: &str) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(label_hash(label));
        rng
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-limit..=limit))
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}
