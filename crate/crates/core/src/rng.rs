//! Counter-based random numbers.
//!
//! Every random quantity in the pipeline is a pure function of
//! `(seed, stream, index)`. There is no generator state to thread through
//! parallel code, so results do not depend on evaluation order or on the
//! number of worker threads.
//!
//! The mixing function is the SplitMix64 finalizer applied to a combination
//! of the three inputs, each pre-multiplied by a distinct odd constant.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;
const INDEX_MUL: u64 = 0xCA5A_8263_9512_1157;

#[inline]
fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `(seed, stream, index)` to 64 uniformly distributed bits.
#[inline]
pub fn hash3(seed: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix_finalize(seed.wrapping_add(GOLDEN));
    let b = a ^ stream.wrapping_mul(STREAM_MUL);
    let c = splitmix_finalize(b).wrapping_add(index.wrapping_mul(INDEX_MUL));
    splitmix_finalize(c ^ GOLDEN)
}

/// FNV-1a over a label, used to turn stage and stream names into stream ids.
pub fn label_id(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives an independent seed for a named stage from a top-level seed.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    hash3(seed, label_id(stage), 0)
}

/// Uniform double in `[0, 1)` built from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n` by multiply-high (no modulo bias beyond 2^-64).
#[inline]
pub fn below(bits: u64, n: usize) -> usize {
    ((u128::from(bits) * n as u128) >> 64) as usize
}

/// A stateless view over one `(seed, stream)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    pub seed: u64,
    pub stream: u64,
}

impl Stream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self {
            seed,
            stream: label_id(label),
        }
    }

    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        hash3(self.seed, self.stream, index)
    }

    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        unit_f64(self.bits(index))
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&self, index: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(index)
    }

    /// Standard normal via Box-Muller on draws `2*index` and `2*index + 1`.
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = 1.0 - self.uniform(2 * index); // (0, 1]
        let u2 = self.uniform(2 * index + 1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// A permutation of `0..n`, obtained by sorting indices on hashed keys.
    pub fn permutation(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by_key(|&i| (self.bits(i as u64), i));
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_pure() {
        assert_eq!(hash3(1, 2, 3), hash3(1, 2, 3));
        assert_ne!(hash3(1, 2, 3), hash3(1, 2, 4));
        assert_ne!(hash3(1, 2, 3), hash3(1, 3, 3));
        assert_ne!(hash3(1, 2, 3), hash3(2, 2, 3));
    }

    #[test]
    fn uniform_mean_and_range() {
        let s = Stream::new(7, "test");
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let u = s.uniform(i);
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let s = Stream::new(11, "normal");
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|i| s.normal(i)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn permutation_is_bijective() {
        let p = Stream::new(3, "perm").permutation(1000);
        let mut seen = vec![false; 1000];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert_ne!(p, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn below_stays_in_range() {
        for i in 0..10_000 {
            assert!(below(hash3(0, 0, i), 7) < 7);
        }
        assert_eq!(below(u64::MAX, 3), 2);
    }

    #[test]
    fn derived_seeds_differ_by_stage() {
        assert_ne!(derive_seed(42, "synth"), derive_seed(42, "perturb"));
        assert_eq!(derive_seed(42, "synth"), derive_seed(42, "synth"));
    }
}
