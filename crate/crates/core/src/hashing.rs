//! Seeded hash family shared by every sketch.
//!
//! All hashing is integer-only: a 64-bit multiply/xor-shift finalizer keyed by
//! `seed ^ domain_tag`. Range reduction uses the high word of a 64x64 multiply,
//! so no division or floating point is involved on the per-packet path.

use crate::error::{Error, Result};

/// Default master seed.
pub const DEFAULT_MASTER_SEED: u64 = 0x5EED;

/// Role discriminators for the hash family.
pub mod tag {
    /// Sampling hash applied to the opposite IP.
    pub const H1: u8 = 0x01;
    /// Bit selector inside a short estimator.
    pub const H2: u8 = 0x02;
    /// Bit selector inside a linear distinct counter.
    pub const H3: u8 = 0x03;
    /// First per-row column hash of the LDCA; row `i` uses `LH_BASE + i`.
    pub const LH_BASE: u8 = 0x10;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One member of the hash family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashSeed {
    seed: u64,
    domain_tag: u8,
    key: u64,
}

impl HashSeed {
    pub fn new(seed: u64, domain_tag: u8) -> Self {
        let key = mix64(seed ^ (domain_tag as u64).wrapping_mul(GOLDEN));
        HashSeed {
            seed,
            domain_tag,
            key,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn domain_tag(&self) -> u8 {
        self.domain_tag
    }

    // scan-path:begin
    #[inline]
    fn hash64(&self, key: u32) -> u64 {
        mix64((key as u64 ^ self.key).wrapping_mul(GOLDEN))
    }

    /// Maps a 32-bit key onto the full 32-bit range.
    #[inline]
    pub fn hash_full(&self, key: u32) -> u32 {
        (self.hash64(key) >> 32) as u32
    }

    /// Range reduction for callers that have already validated `m >= 1`.
    #[inline]
    pub(crate) fn hash_range_unchecked(&self, key: u32, m: u64) -> u64 {
        ((self.hash64(key) as u128 * m as u128) >> 64) as u64
    }
    // scan-path:end

    /// Maps a 32-bit key into `[0, m)`.
    pub fn hash_range(&self, key: u32, m: u64) -> Result<u64> {
        if m == 0 {
            return Err(Error::invalid("hash_range modulus must be at least 1"));
        }
        Ok(self.hash_range_unchecked(key, m))
    }
}

/// Free-function form of [`HashSeed::hash_full`].
pub fn hash_full(key: u32, seed: &HashSeed) -> u32 {
    seed.hash_full(key)
}

/// Free-function form of [`HashSeed::hash_range`].
pub fn hash_range(key: u32, seed: &HashSeed, m: u64) -> Result<u64> {
    seed.hash_range(key, m)
}

/// Index of the lowest set bit; `lsb(0) == 32`.
// scan-path:begin
#[inline]
pub fn lsb(x: u32) -> u32 {
    x.trailing_zeros()
}
// scan-path:end

/// Every hash function used by one detector, expanded from a master seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    master: u64,
    pub h1: HashSeed,
    pub h2: HashSeed,
    pub h3: HashSeed,
    pub lh: Vec<HashSeed>,
}

impl SeedSet {
    /// Expands `master` into H1, H2, H3 and `rows` LDCA row hashes.
    pub fn new(master: u64, rows: usize) -> Result<Self> {
        let max_rows = (u8::MAX - tag::LH_BASE) as usize + 1;
        if rows > max_rows {
            return Err(Error::invalid(format!(
                "at most {max_rows} LDCA rows are supported, got {rows}"
            )));
        }
        Ok(SeedSet {
            master,
            h1: HashSeed::new(master, tag::H1),
            h2: HashSeed::new(master, tag::H2),
            h3: HashSeed::new(master, tag::H3),
            lh: (0..rows)
                .map(|i| HashSeed::new(master, tag::LH_BASE + i as u8))
                .collect(),
        })
    }

    pub fn master(&self) -> u64 {
        self.master
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_keys(n: usize, seed: u64) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn deterministic() {
        let s = HashSeed::new(7, tag::H1);
        for k in [0u32, 1, 0xdead_beef, u32::MAX] {
            assert_eq!(s.hash_full(k), s.hash_full(k));
            assert_eq!(s.hash_range(k, 97).unwrap(), s.hash_range(k, 97).unwrap());
        }
        assert_eq!(HashSeed::new(7, tag::H1), HashSeed::new(7, tag::H1));
    }

    #[test]
    fn output_bytes_pass_chi_square() {
        // 255 degrees of freedom, p = 0.001.
        const CRITICAL: f64 = 330.5;
        let s = HashSeed::new(DEFAULT_MASTER_SEED, tag::H1);
        let keys = random_keys(1_000_000, 11);
        let mut counts = [[0u64; 256]; 4];
        for &k in &keys {
            let h = s.hash_full(k);
            for (b, c) in counts.iter_mut().enumerate() {
                c[((h >> (8 * b)) & 0xff) as usize] += 1;
            }
        }
        let expected = keys.len() as f64 / 256.0;
        for (b, c) in counts.iter().enumerate() {
            let chi: f64 = c
                .iter()
                .map(|&o| (o as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi < CRITICAL, "byte {b}: chi-square {chi}");
        }
    }

    #[test]
    fn distinct_seeds_are_uncorrelated() {
        let a = HashSeed::new(1, tag::H1);
        let b = HashSeed::new(2, tag::H1);
        let c = HashSeed::new(1, tag::H2);
        let keys = random_keys(1_000_000, 12);
        for (x, y) in [(a, b), (a, c)] {
            let xs: Vec<f64> = keys.iter().map(|&k| x.hash_full(k) as f64).collect();
            let ys: Vec<f64> = keys.iter().map(|&k| y.hash_full(k) as f64).collect();
            let rho = correlation(&xs, &ys);
            assert!(rho.abs() < 0.01, "rho = {rho}");
        }
    }

    fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn hash_range_edges() {
        let s = HashSeed::new(3, tag::H2);
        assert!(matches!(s.hash_range(5, 0), Err(Error::InvalidArgument(_))));
        for k in random_keys(1000, 3) {
            assert_eq!(s.hash_range(k, 1).unwrap(), 0);
        }
    }

    #[test]
    fn hash_range_buckets_near_uniform() {
        let s = HashSeed::new(DEFAULT_MASTER_SEED, tag::H2);
        let keys = random_keys(1_000_000, 13);
        let mut counts = [0u64; 8];
        for &k in &keys {
            counts[s.hash_range(k, 8).unwrap() as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / keys.len() as f64;
            assert!((f - 0.125).abs() <= 0.125 * 0.01, "bucket frequency {f}");
        }
    }

    #[test]
    fn lsb_values() {
        assert_eq!(lsb(1), 0);
        assert_eq!(lsb(8), 3);
        assert_eq!(lsb(0), 32);
        assert_eq!(lsb(0x8000_0000), 31);
    }

    #[test]
    fn lsb_is_geometric() {
        let s = HashSeed::new(DEFAULT_MASTER_SEED, tag::H1);
        let keys = random_keys(1_000_000, 14);
        let n = keys.len() as f64;
        let lsbs: Vec<u32> = keys.iter().map(|&k| lsb(s.hash_full(k))).collect();
        for tau in 0..=10u32 {
            let p = 0.5f64.powi(tau as i32);
            let hits = lsbs.iter().filter(|&&l| l >= tau).count() as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!(
                (hits - p).abs() <= 3.0 * se + 1e-12,
                "tau {tau}: {hits} vs {p}"
            );
        }
    }

    #[test]
    fn seed_set_rows() {
        let s = SeedSet::new(DEFAULT_MASTER_SEED, 8).unwrap();
        assert_eq!(s.lh.len(), 8);
        assert_eq!(s.lh[3].domain_tag(), tag::LH_BASE + 3);
        assert_ne!(s.lh[0], s.lh[1]);
        assert!(SeedSet::new(1, 1000).is_err());
    }
}
