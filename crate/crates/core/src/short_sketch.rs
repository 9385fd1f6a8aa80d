//! Short estimators and the SEA vector (SEAV).
//!
//! A short estimator (SE) is a `g`-bit register. An opposite IP is sampled into
//! it when the lowest set bit of `H1(oip)` is at least `tau`, in which case bit
//! `H2(oip) mod g` is set. Weight >= 3 marks the register as hot.
//!
//! The SEAV holds `2^r` arrays, selected by the low `r` bits of the host IP
//! (the right part, RP). Each array has `SR` rows; row `i` is indexed by
//! `IBN(i)` consecutive bits of the left part (LP) starting at `ISB(i)`,
//! wrapping modulo the LP width. Because every LP bit is covered by some row
//! and adjacent rows share bits, a host's LP can be rebuilt from the column
//! indices of hot registers at the end of a window.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashing::{lsb, HashSeed, SeedSet};

/// A register reaching this weight is hot.
pub const HOT_WEIGHT: u32 = 3;

/// Upper bound on `IBN(i)`; keeps one row under 16 Mi registers.
pub const MAX_INDEX_BITS: u32 = 24;

/// Default cap on surviving candidate tuples per SEA during restore.
pub const DEFAULT_RESTORE_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShortEstimator {
    bits: u64,
    width: u32,
}

impl ShortEstimator {
    pub fn new(width: u32) -> Result<Self> {
        if width == 0 || width > 64 {
            return Err(Error::invalid(format!(
                "short estimator width must be in 1..=64, got {width}"
            )));
        }
        Ok(ShortEstimator { bits: 0, width })
    }

    pub fn from_bits(bits: u64, width: u32) -> Result<Self> {
        let se = Self::new(width)?;
        if width < 64 && bits >> width != 0 {
            return Err(Error::invalid(format!(
                "bits {bits:#x} do not fit in a {width}-bit register"
            )));
        }
        Ok(ShortEstimator { bits, ..se })
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn weight(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_hot(&self) -> bool {
        self.weight() >= HOT_WEIGHT
    }

    /// Records `oip` if it passes the `tau` sampling threshold.
    pub fn update(&mut self, oip: u32, tau: u32, h1: &HashSeed, h2: &HashSeed) {
        if lsb(h1.hash_full(oip)) >= tau {
            self.bits |= 1 << h2.hash_range_unchecked(oip, self.width as u64);
        }
    }

    /// Row-union test operator.
    pub fn and(&self, other: &Self) -> Result<Self> {
        self.check_width(other)?;
        Ok(ShortEstimator {
            bits: self.bits & other.bits,
            width: self.width,
        })
    }

    /// Cross-watch-point merge operator.
    pub fn or(&self, other: &Self) -> Result<Self> {
        self.check_width(other)?;
        Ok(ShortEstimator {
            bits: self.bits | other.bits,
            width: self.width,
        })
    }

    fn check_width(&self, other: &Self) -> Result<()> {
        if self.width != other.width {
            return Err(Error::invalid(format!(
                "short estimator width mismatch: {} vs {}",
                self.width, other.width
            )));
        }
        Ok(())
    }
}

/// Functional form of [`ShortEstimator::update`].
pub fn se_update(
    se: ShortEstimator,
    oip: u32,
    tau: u32,
    h1: &HashSeed,
    h2: &HashSeed,
) -> ShortEstimator {
    let mut se = se;
    se.update(oip, tau, h1, h2);
    se
}

/// Smallest `tau >= 0` with `g * 2^tau >= theta`, i.e. `ceil(log2(theta / g))`
/// floored at zero.
pub fn tau_from_theta(theta: u64, g: u32) -> Result<u32> {
    if theta == 0 {
        return Err(Error::invalid("theta must be at least 1"));
    }
    if g == 0 {
        return Err(Error::invalid("register width must be at least 1"));
    }
    let mut tau = 0;
    while (g as u128) << tau < theta as u128 {
        tau += 1;
    }
    Ok(tau)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeavConfig {
    r: u32,
    overlap: u32,
    theta: u64,
    g: u32,
    tau: u32,
    isb: Vec<u32>,
    ibn: Vec<u32>,
}

impl Default for SeavConfig {
    fn default() -> Self {
        SeavConfig::new(4, 4, 2, 1024, 8).expect("default SEAV layout is valid")
    }
}

impl SeavConfig {
    /// Standard layout: with `c = ceil((32 - r) / rows)`, row `i` starts at
    /// bit `i * c` and spans `c + overlap` bits.
    pub fn new(r: u32, rows: u32, overlap: u32, theta: u64, g: u32) -> Result<Self> {
        if r > 16 {
            return Err(Error::ConfigInvalid {
                constraint: "r",
                detail: format!("r must be in 0..=16, got {r}"),
            });
        }
        if rows < 2 {
            return Err(Error::ConfigInvalid {
                constraint: "rows",
                detail: format!("at least 2 rows are needed for overlap pruning, got {rows}"),
            });
        }
        if overlap < 1 {
            return Err(Error::ConfigInvalid {
                constraint: "overlap",
                detail: "overlap bit count must be at least 1".into(),
            });
        }
        let lp_width = 32 - r;
        let step = lp_width.div_ceil(rows);
        let isb = (0..rows).map(|i| i * step).collect();
        let ibn = vec![step + overlap; rows as usize];
        Self::from_layout(r, overlap, theta, g, isb, ibn)
    }

    pub(crate) fn from_layout(
        r: u32,
        overlap: u32,
        theta: u64,
        g: u32,
        isb: Vec<u32>,
        ibn: Vec<u32>,
    ) -> Result<Self> {
        if g == 0 || g > 64 || !g.is_multiple_of(8) {
            return Err(Error::ConfigInvalid {
                constraint: "g",
                detail: format!("register width must be a multiple of 8 in 8..=64, got {g}"),
            });
        }
        let tau = tau_from_theta(theta, g)?;
        let cfg = SeavConfig {
            r,
            overlap,
            theta,
            g,
            tau,
            isb,
            ibn,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let lp_width = self.lp_width();
        if self.isb.len() != self.ibn.len() || self.isb.len() < 2 {
            return Err(Error::ConfigInvalid {
                constraint: "rows",
                detail: "ISB and IBN must describe the same number (>= 2) of rows".into(),
            });
        }
        for (i, (&start, &bits)) in self.isb.iter().zip(&self.ibn).enumerate() {
            if bits == 0 || bits > lp_width || bits > MAX_INDEX_BITS {
                return Err(Error::ConfigInvalid {
                    constraint: "width bound",
                    detail: format!(
                        "row {i} uses {bits} index bits; must be in 1..={}",
                        lp_width.min(MAX_INDEX_BITS)
                    ),
                });
            }
            if start >= lp_width {
                return Err(Error::ConfigInvalid {
                    constraint: "width bound",
                    detail: format!("row {i} starts at bit {start}, beyond LP width {lp_width}"),
                });
            }
        }
        let masks: Vec<u64> = (0..self.rows()).map(|i| self.row_mask(i)).collect();
        let covered = masks.iter().fold(0u64, |acc, m| acc | m);
        if covered != low_mask(lp_width) {
            let missing = (low_mask(lp_width) & !covered).trailing_zeros();
            return Err(Error::ConfigInvalid {
                constraint: "constraint 1 (coverage)",
                detail: format!("LP bit {missing} is not covered by any row index"),
            });
        }
        for i in 0..self.rows() {
            let next = (i + 1) % self.rows();
            let shared = (masks[i] & masks[next]).count_ones();
            if shared < self.overlap {
                return Err(Error::ConfigInvalid {
                    constraint: "constraint 2 (overlap)",
                    detail: format!(
                        "rows {i} and {next} share {shared} bits, need at least {}",
                        self.overlap
                    ),
                });
            }
        }
        Ok(())
    }

    /// LP bit positions covered by row `i`.
    fn row_mask(&self, i: usize) -> u64 {
        let lp_width = self.lp_width();
        (0..self.ibn[i]).fold(0u64, |m, j| m | 1 << ((self.isb[i] + j) % lp_width))
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn rows(&self) -> usize {
        self.isb.len()
    }

    pub fn overlap(&self) -> u32 {
        self.overlap
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    pub fn g(&self) -> u32 {
        self.g
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn isb(&self) -> &[u32] {
        &self.isb
    }

    pub fn ibn(&self) -> &[u32] {
        &self.ibn
    }

    /// Row widths `SC(i) = 2^IBN(i)`.
    pub fn sc(&self) -> Vec<u64> {
        self.ibn.iter().map(|&b| 1u64 << b).collect()
    }

    pub fn lp_width(&self) -> u32 {
        32 - self.r
    }

    pub fn sea_count(&self) -> usize {
        1 << self.r
    }

    pub fn se_per_sea(&self) -> usize {
        self.sc().iter().sum::<u64>() as usize
    }

    pub fn total_se(&self) -> usize {
        self.sea_count() * self.se_per_sea()
    }

    /// `2^r * sum(SC) * g / 8`.
    pub fn memory_bytes(&self) -> usize {
        self.total_se() * self.g as usize / 8
    }

    /// Column of row `row` addressed by `lp`.
    pub fn index_of(&self, row: usize, lp: u32) -> Result<u32> {
        if row >= self.rows() {
            return Err(Error::invalid(format!(
                "row {row} out of range for {} rows",
                self.rows()
            )));
        }
        Ok(self.index_unchecked(row, lp))
    }

    // scan-path:begin
    #[inline]
    pub(crate) fn index_unchecked(&self, row: usize, lp: u32) -> u32 {
        let width = self.lp_width();
        let x = lp as u64 & low_mask(width);
        let s = self.isb[row];
        let rotated = ((x >> s) | (x << (width - s))) & low_mask(width);
        (rotated & low_mask(self.ibn[row])) as u32
    }
    // scan-path:end

    /// Scatters the bits of a row index back to their LP positions.
    fn deposit(&self, row: usize, index: u32) -> u64 {
        let width = self.lp_width();
        let mut lp = 0u64;
        for j in 0..self.ibn[row] {
            if index >> j & 1 == 1 {
                lp |= 1 << ((self.isb[row] + j) % width);
            }
        }
        lp
    }

    /// Rebuilds the LP from one index per row; `None` if the indices disagree
    /// on a shared bit or do not fit their rows.
    pub fn reconstruct_lp(&self, indexes: &[u32]) -> Option<u32> {
        if indexes.len() != self.rows() {
            return None;
        }
        let mut bits = 0u64;
        let mut known = 0u64;
        for (row, &idx) in indexes.iter().enumerate() {
            if (idx as u64) >> self.ibn[row] != 0 {
                return None;
            }
            let mask = self.row_mask(row);
            let d = self.deposit(row, idx);
            if (d ^ bits) & known & mask != 0 {
                return None;
            }
            bits |= d;
            known |= mask;
        }
        Some(bits as u32)
    }
}

#[inline]
fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// A host rebuilt from hot short estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateHost {
    pub ip: u32,
    pub source_sea: u32,
    pub union_weight: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeaOverflow {
    pub rp: u32,
    pub cap: u64,
}

impl From<SeaOverflow> for Error {
    fn from(o: SeaOverflow) -> Self {
        Error::RestoreOverflow {
            rp: o.rp,
            cap: o.cap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RestoreOutcome {
    /// Sorted by IP, duplicate free.
    pub candidates: Vec<CandidateHost>,
    /// SEAs abandoned because they exceeded the tuple cap.
    pub overflows: Vec<SeaOverflow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeavSketch {
    config: SeavConfig,
    h1: HashSeed,
    h2: HashSeed,
    row_offsets: Vec<usize>,
    se_per_sea: usize,
    bytes_per_se: usize,
    regs: Vec<u8>,
}

impl SeavSketch {
    pub fn new(config: SeavConfig, seeds: &SeedSet) -> Self {
        let mut row_offsets = Vec::with_capacity(config.rows());
        let mut acc = 0usize;
        for sc in config.sc() {
            row_offsets.push(acc);
            acc += sc as usize;
        }
        let bytes_per_se = config.g() as usize / 8;
        SeavSketch {
            regs: vec![0; config.total_se() * bytes_per_se],
            h1: seeds.h1,
            h2: seeds.h2,
            row_offsets,
            se_per_sea: acc,
            bytes_per_se,
            config,
        }
    }

    pub fn config(&self) -> &SeavConfig {
        &self.config
    }

    pub fn memory_bytes(&self) -> usize {
        self.regs.len()
    }

    /// Raw register bytes, little-endian per register, SEA-major then row then column.
    pub fn as_bytes(&self) -> &[u8] {
        &self.regs
    }

    pub(crate) fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.regs.len() {
            return Err(Error::Data(format!(
                "SEAV payload has {} bytes, expected {}",
                bytes.len(),
                self.regs.len()
            )));
        }
        self.regs.copy_from_slice(bytes);
        Ok(())
    }

    pub fn set_bit_count(&self) -> u64 {
        self.regs.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn clear(&mut self) {
        self.regs.fill(0);
    }

    /// Flat register index of `(sea, row, col)`.
    pub fn se_index(&self, sea: usize, row: usize, col: usize) -> usize {
        sea * self.se_per_sea + self.row_offsets[row] + col
    }

    pub fn se(&self, sea: usize, row: usize, col: usize) -> ShortEstimator {
        self.se_at(self.se_index(sea, row, col))
    }

    fn se_at(&self, index: usize) -> ShortEstimator {
        let start = index * self.bytes_per_se;
        let bits = self.regs[start..start + self.bytes_per_se]
            .iter()
            .rev()
            .fold(0u64, |acc, &b| acc << 8 | b as u64);
        ShortEstimator {
            bits,
            width: self.config.g(),
        }
    }

    // scan-path:begin
    /// Calls `f(se_index, bit)` for each register bit a pair sets; nothing for
    /// unsampled opposite IPs.
    #[inline]
    pub fn for_each_bit(&self, hip: u32, oip: u32, mut f: impl FnMut(usize, u32)) {
        if lsb(self.h1.hash_full(oip)) < self.config.tau {
            return;
        }
        let bit = self.h2.hash_range_unchecked(oip, self.config.g as u64) as u32;
        let r = self.config.r;
        let rp = (hip as u64 & low_mask(r)) as usize;
        let lp = (hip as u64 >> r) as u32;
        let base = rp * self.se_per_sea;
        for (row, &offset) in self.row_offsets.iter().enumerate() {
            let col = self.config.index_unchecked(row, lp) as usize;
            f(base + offset + col, bit);
        }
    }

    #[inline]
    pub(crate) fn set_bit(&mut self, se_index: usize, bit: u32) {
        self.regs[se_index * self.bytes_per_se + (bit / 8) as usize] |= 1 << (bit % 8);
    }

    #[inline]
    pub fn update(&mut self, hip: u32, oip: u32) {
        let bpse = self.bytes_per_se;
        let regs = &mut self.regs;
        let (h1, h2, cfg) = (&self.h1, &self.h2, &self.config);
        if lsb(h1.hash_full(oip)) < cfg.tau {
            return;
        }
        let bit = h2.hash_range_unchecked(oip, cfg.g as u64) as usize;
        let rp = (hip as u64 & low_mask(cfg.r)) as usize;
        let lp = (hip as u64 >> cfg.r) as u32;
        let base = rp * self.se_per_sea;
        for (row, &offset) in self.row_offsets.iter().enumerate() {
            let col = cfg.index_unchecked(row, lp) as usize;
            regs[(base + offset + col) * bpse + bit / 8] |= 1 << (bit % 8);
        }
    }
    // scan-path:end

    pub fn is_compatible(&self, other: &Self) -> bool {
        self.config == other.config && self.h1 == other.h1 && self.h2 == other.h2
    }

    /// Bitwise OR of another sketch with the same layout and seeds.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.is_compatible(other) {
            return Err(Error::MergeIncompatible(
                "SEAV sketches differ in layout or seeds".into(),
            ));
        }
        for (a, b) in self.regs.iter_mut().zip(&other.regs) {
            *a |= b;
        }
        Ok(())
    }

    /// Rebuilds candidate super points from every SEA.
    pub fn restore(&self, cap: u64) -> RestoreOutcome {
        let per_sea: Vec<Result<Vec<CandidateHost>, SeaOverflow>> = (0..self.config.sea_count())
            .into_par_iter()
            .map(|rp| self.restore_sea_inner(rp as u32, cap))
            .collect();
        let mut out = RestoreOutcome::default();
        for res in per_sea {
            match res {
                Ok(c) => out.candidates.extend(c),
                Err(o) => out.overflows.push(o),
            }
        }
        out.candidates.sort_unstable();
        out.candidates.dedup_by_key(|c| c.ip);
        out
    }

    /// Restores a single SEA.
    pub fn restore_sea(&self, rp: u32, cap: u64) -> Result<Vec<CandidateHost>> {
        if rp as usize >= self.config.sea_count() {
            return Err(Error::invalid(format!("SEA {rp} out of range")));
        }
        let mut v = self.restore_sea_inner(rp, cap)?;
        v.sort_unstable();
        Ok(v)
    }

    fn restore_sea_inner(&self, rp: u32, cap: u64) -> Result<Vec<CandidateHost>, SeaOverflow> {
        let rows = self.config.rows();
        let mut hot: Vec<Vec<HotEntry>> = Vec::with_capacity(rows);
        for row in 0..rows {
            let sc = 1usize << self.config.ibn[row];
            let entries: Vec<HotEntry> = (0..sc)
                .filter_map(|col| {
                    let se = self.se_at(self.se_index(rp as usize, row, col));
                    se.is_hot().then(|| HotEntry {
                        col: col as u32,
                        lp_bits: self.config.deposit(row, col as u32),
                        reg: se.bits,
                    })
                })
                .collect();
            if entries.is_empty() {
                return Ok(Vec::new());
            }
            hot.push(entries);
        }
        let masks: Vec<u64> = (0..rows).map(|i| self.config.row_mask(i)).collect();
        let mut search = RestoreSearch {
            hot: &hot,
            masks: &masks,
            r: self.config.r,
            rp,
            cap,
            visited: 0,
            out: Vec::new(),
        };
        search.descend(0, 0, 0, low_mask(self.config.g))?;
        Ok(search.out)
    }
}

struct HotEntry {
    #[allow(dead_code)]
    col: u32,
    lp_bits: u64,
    reg: u64,
}

struct RestoreSearch<'a> {
    hot: &'a [Vec<HotEntry>],
    masks: &'a [u64],
    r: u32,
    rp: u32,
    cap: u64,
    visited: u64,
    out: Vec<CandidateHost>,
}

impl RestoreSearch<'_> {
    /// Depth-first over rows; a partial tuple survives only if its index bits
    /// agree with every LP bit fixed so far.
    fn descend(
        &mut self,
        row: usize,
        known_bits: u64,
        known_mask: u64,
        union: u64,
    ) -> Result<(), SeaOverflow> {
        let last = row + 1 == self.hot.len();
        for e in &self.hot[row] {
            if (e.lp_bits ^ known_bits) & known_mask & self.masks[row] != 0 {
                continue;
            }
            self.visited += 1;
            if self.visited > self.cap {
                return Err(SeaOverflow {
                    rp: self.rp,
                    cap: self.cap,
                });
            }
            let seu = union & e.reg;
            if seu.count_ones() < HOT_WEIGHT {
                continue;
            }
            let bits = known_bits | e.lp_bits;
            if last {
                let ip = (bits << self.r | self.rp as u64) as u32;
                self.out.push(CandidateHost {
                    ip,
                    source_sea: self.rp,
                    union_weight: seu.count_ones(),
                });
            } else {
                self.descend(row + 1, bits, known_mask | self.masks[row], seu)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{tag, DEFAULT_MASTER_SEED};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeSet, HashSet};

    fn seeds() -> SeedSet {
        SeedSet::new(DEFAULT_MASTER_SEED, 1).unwrap()
    }

    /// Naive per-bit gather, independent of the rotate-and-mask path.
    fn naive_index(cfg: &SeavConfig, row: usize, lp: u32) -> u32 {
        let width = cfg.lp_width();
        let mut idx = 0u32;
        for j in 0..cfg.ibn()[row] {
            let pos = (cfg.isb()[row] + j) % width;
            idx |= ((lp >> pos) & 1) << j;
        }
        idx
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_from_theta(1024, 8).unwrap(), 7);
        assert_eq!(tau_from_theta(8, 8).unwrap(), 0);
        assert_eq!(tau_from_theta(1000, 8).unwrap(), 7);
        assert_eq!(tau_from_theta(1, 8).unwrap(), 0);
        assert!(tau_from_theta(0, 8).is_err());
    }

    #[test]
    fn tau_matches_float_formula() {
        for theta in 1..5000u64 {
            for g in [8u32, 16, 32] {
                let expect = ((theta as f64 / g as f64).log2().ceil()).max(0.0) as u32;
                assert_eq!(
                    tau_from_theta(theta, g).unwrap(),
                    expect,
                    "theta {theta} g {g}"
                );
            }
        }
    }

    #[test]
    fn se_weight_and_hot() {
        let e = ShortEstimator::new(8).unwrap();
        assert_eq!(e.weight(), 0);
        assert!(!e.is_hot());
        let three = ShortEstimator::from_bits(0b1001_0010, 8).unwrap();
        assert_eq!(three.weight(), 3);
        assert!(three.is_hot());
        let full = ShortEstimator::from_bits(0xff, 8).unwrap();
        assert_eq!(full.weight(), 8);
        assert!(full.is_hot());
        assert!(ShortEstimator::from_bits(0x100, 8).is_err());
    }

    #[test]
    fn se_and_or_identities() {
        let x = ShortEstimator::from_bits(0b1011_0110, 8).unwrap();
        let empty = ShortEstimator::new(8).unwrap();
        assert_eq!(x.and(&x).unwrap(), x);
        assert_eq!(x.or(&empty).unwrap(), x);
        assert_eq!(x.and(&empty).unwrap(), empty);
        let wide = ShortEstimator::new(16).unwrap();
        assert!(x.and(&wide).is_err());
        assert!(x.or(&wide).is_err());
    }

    proptest! {
        #[test]
        fn se_and_or_laws(a in 0u64..256, b in 0u64..256, c in 0u64..256) {
            let (x, y, z) = (
                ShortEstimator::from_bits(a, 8).unwrap(),
                ShortEstimator::from_bits(b, 8).unwrap(),
                ShortEstimator::from_bits(c, 8).unwrap(),
            );
            prop_assert!(x.and(&y).unwrap().weight() <= x.weight().min(y.weight()));
            prop_assert!(x.or(&y).unwrap().weight() >= x.weight().max(y.weight()));
            prop_assert_eq!(x.and(&y).unwrap(), y.and(&x).unwrap());
            prop_assert_eq!(x.or(&y).unwrap(), y.or(&x).unwrap());
            prop_assert_eq!(x.and(&y).unwrap().and(&z).unwrap(), x.and(&y.and(&z).unwrap()).unwrap());
            prop_assert_eq!(x.or(&y).unwrap().or(&z).unwrap(), x.or(&y.or(&z).unwrap()).unwrap());
        }

        #[test]
        fn index_matches_naive_gather(lp in any::<u32>(), r in 0u32..=16, rows in 2u32..=6, a in 1u32..=4) {
            if let Ok(cfg) = SeavConfig::new(r, rows, a, 1024, 8) {
                let lp = lp & low_mask(cfg.lp_width()) as u32;
                for row in 0..cfg.rows() {
                    prop_assert_eq!(cfg.index_of(row, lp).unwrap(), naive_index(&cfg, row, lp));
                }
                let idx: Vec<u32> = (0..cfg.rows()).map(|i| cfg.index_of(i, lp).unwrap()).collect();
                prop_assert_eq!(cfg.reconstruct_lp(&idx), Some(lp));
            }
        }
    }

    #[test]
    fn se_update_sampling() {
        let s = seeds();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Find an oip rejected at tau = 7.
        let rejected = (0..)
            .map(|_| rng.random::<u32>())
            .find(|&o| lsb(s.h1.hash_full(o)) < 7)
            .unwrap();
        let se = se_update(ShortEstimator::new(8).unwrap(), rejected, 7, &s.h1, &s.h2);
        assert_eq!(se.weight(), 0);

        for _ in 0..100 {
            let oip = rng.random::<u32>();
            let se = se_update(ShortEstimator::new(8).unwrap(), oip, 0, &s.h1, &s.h2);
            assert_eq!(se.weight(), 1);
            assert_eq!(se_update(se, oip, 0, &s.h1, &s.h2), se);
        }
    }

    #[test]
    fn se_twice_theta_is_hot_in_most_trials() {
        let tau = tau_from_theta(1024, 8).unwrap();
        let mut hot = 0;
        for trial in 0..1000u64 {
            let s = SeedSet::new(trial, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
            let mut se = ShortEstimator::new(8).unwrap();
            let mut seen = HashSet::new();
            while seen.len() < 2048 {
                let oip: u32 = rng.random();
                if seen.insert(oip) {
                    se.update(oip, tau, &s.h1, &s.h2);
                }
            }
            if se.is_hot() {
                hot += 1;
            }
        }
        assert!(hot >= 950, "hot in {hot} of 1000 trials");
    }

    #[test]
    fn make_config_examples() {
        let c = SeavConfig::new(4, 4, 2, 1024, 8).unwrap();
        assert_eq!(c.isb(), &[0, 7, 14, 21]);
        assert_eq!(c.ibn(), &[9, 9, 9, 9]);
        assert_eq!(c.sc(), vec![512, 512, 512, 512]);
        assert_eq!(c.memory_bytes(), 32768);
        assert_eq!(c, SeavConfig::default());

        let c0 = SeavConfig::new(0, 4, 2, 1024, 8).unwrap();
        assert_eq!(c0.isb(), &[0, 8, 16, 24]);
        assert_eq!(c0.ibn(), &[10, 10, 10, 10]);

        assert!(matches!(
            SeavConfig::new(4, 1, 2, 1024, 8),
            Err(Error::ConfigInvalid {
                constraint: "rows",
                ..
            })
        ));
        assert!(SeavConfig::new(17, 4, 2, 1024, 8).is_err());
        assert!(SeavConfig::new(4, 4, 0, 1024, 8).is_err());
        assert!(SeavConfig::new(4, 4, 2, 1024, 12).is_err());
        assert!(SeavConfig::new(4, 4, 2, 0, 8).is_err());
        // c + a = 30 > 28 LP bits.
        assert!(SeavConfig::new(4, 2, 16, 1024, 8).is_err());
    }

    #[test]
    fn layout_constraint_violations_are_named() {
        let gap = SeavConfig::from_layout(4, 1, 1024, 8, vec![0, 14], vec![10, 10]);
        assert!(matches!(
            gap,
            Err(Error::ConfigInvalid {
                constraint: "constraint 1 (coverage)",
                ..
            })
        ));
        let no_overlap = SeavConfig::from_layout(4, 1, 1024, 8, vec![0, 14], vec![14, 14]);
        assert!(matches!(
            no_overlap,
            Err(Error::ConfigInvalid {
                constraint: "constraint 2 (overlap)",
                ..
            })
        ));
    }

    #[test]
    fn index_of_edges() {
        let c = SeavConfig::default();
        for row in 0..4 {
            assert_eq!(c.index_of(row, 0).unwrap(), 0);
            assert_eq!(c.index_of(row, (1 << 28) - 1).unwrap(), (1 << 9) - 1);
        }
        assert!(c.index_of(4, 0).is_err());
        let lp = 0b1010_1100_0111_0001_1110_0101_1011u32;
        assert_eq!(c.index_of(1, lp).unwrap(), (lp >> 7) & 0x1ff);
        assert_eq!(c.index_of(1, lp).unwrap(), naive_index(&c, 1, lp));
        // Row 3 wraps: bits 21..27 then 0..1.
        assert_eq!(c.index_of(3, lp).unwrap(), naive_index(&c, 3, lp));
    }

    #[test]
    fn reconstruct_rejects_disagreement() {
        let c = SeavConfig::default();
        let lp = 0x0abc_def1 & ((1 << 28) - 1);
        let mut idx: Vec<u32> = (0..4).map(|i| c.index_of(i, lp).unwrap()).collect();
        assert_eq!(c.reconstruct_lp(&idx), Some(lp));
        idx[1] ^= 1; // bit 7 of LP, shared with row 0
        assert_eq!(c.reconstruct_lp(&idx), None);
        assert_eq!(c.reconstruct_lp(&idx[..3]), None);
    }

    /// Straightforward reimplementation: set of (sea, row, col, bit) tuples.
    fn naive_bits(
        cfg: &SeavConfig,
        s: &SeedSet,
        pairs: &[(u32, u32)],
    ) -> BTreeSet<(u32, usize, u32, u32)> {
        let mut out = BTreeSet::new();
        for &(hip, oip) in pairs {
            let h = s.h1.hash_full(oip);
            if h.trailing_zeros() < cfg.tau() {
                continue;
            }
            let bit = s.h2.hash_range(oip, cfg.g() as u64).unwrap() as u32;
            let rp = hip % (1 << cfg.r());
            let lp = ((hip as u64) >> cfg.r()) as u32;
            for row in 0..cfg.rows() {
                out.insert((rp, row, naive_index(cfg, row, lp), bit));
            }
        }
        out
    }

    fn sketch_bits(sk: &SeavSketch) -> BTreeSet<(u32, usize, u32, u32)> {
        let cfg = sk.config();
        let mut out = BTreeSet::new();
        for sea in 0..cfg.sea_count() {
            for row in 0..cfg.rows() {
                for col in 0..cfg.sc()[row] as usize {
                    let se = sk.se(sea, row, col);
                    for bit in 0..cfg.g() {
                        if se.bits() >> bit & 1 == 1 {
                            out.insert((sea as u32, row, col as u32, bit));
                        }
                    }
                }
            }
        }
        out
    }

    fn random_pairs(n: usize, hosts: u32, seed: u64) -> Vec<(u32, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hs: Vec<u32> = (0..hosts).map(|_| rng.random()).collect();
        (0..n)
            .map(|_| (hs[rng.random_range(0..hs.len())], rng.random()))
            .collect()
    }

    #[test]
    fn update_matches_naive_reference() {
        for (cfg, theta_seed) in [
            (SeavConfig::default(), 1u64),
            (SeavConfig::new(4, 4, 2, 64, 16).unwrap(), 2),
            (SeavConfig::new(0, 3, 3, 256, 8).unwrap(), 3),
        ] {
            let s = seeds();
            let pairs = random_pairs(50_000, 300, theta_seed);
            let mut sk = SeavSketch::new(cfg.clone(), &s);
            for &(h, o) in &pairs {
                sk.update(h, o);
            }
            let expect = naive_bits(&cfg, &s, &pairs);
            assert_eq!(sk.set_bit_count(), expect.len() as u64);
            assert_eq!(sketch_bits(&sk), expect);
        }
    }

    #[test]
    fn update_is_idempotent_and_routes_by_rp() {
        let s = seeds();
        let mut sk = SeavSketch::new(SeavConfig::new(4, 4, 2, 8, 8).unwrap(), &s);
        sk.update(0x0a00_0001, 0x0101_0101);
        let once = sk.clone();
        sk.update(0x0a00_0001, 0x0101_0101);
        assert_eq!(sk, once);

        // Same LP, different RP: touched registers live in disjoint SEAs.
        let mut a = Vec::new();
        let mut b = Vec::new();
        sk.for_each_bit(0x0a00_0001, 7, |i, _| a.push(i / sk.se_per_sea));
        sk.for_each_bit(0x0a00_0002, 7, |i, _| b.push(i / sk.se_per_sea));
        assert_eq!(a, vec![1; 4]);
        assert_eq!(b, vec![2; 4]);
    }

    #[test]
    fn for_each_bit_touches_sr_registers() {
        let s = seeds();
        let sk = SeavSketch::new(SeavConfig::new(4, 4, 2, 8, 8).unwrap(), &s);
        let mut n = 0;
        sk.for_each_bit(12345, 678, |_, _| n += 1);
        assert_eq!(n, 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn permutation_and_shard_invariance(seed in any::<u64>(), shards in 1usize..6) {
            let s = seeds();
            let cfg = SeavConfig::new(4, 4, 2, 64, 8).unwrap();
            let pairs = random_pairs(3000, 40, seed);
            let mut whole = SeavSketch::new(cfg.clone(), &s);
            for &(h, o) in &pairs {
                whole.update(h, o);
            }
            let mut rev = SeavSketch::new(cfg.clone(), &s);
            for &(h, o) in pairs.iter().rev() {
                rev.update(h, o);
            }
            prop_assert_eq!(&whole, &rev);

            let mut merged = SeavSketch::new(cfg.clone(), &s);
            for chunk in pairs.chunks(pairs.len().div_ceil(shards)) {
                let mut part = SeavSketch::new(cfg.clone(), &s);
                for &(h, o) in chunk {
                    part.update(h, o);
                }
                merged.merge(&part).unwrap();
            }
            prop_assert_eq!(&whole, &merged);
        }
    }

    #[test]
    fn merge_rejects_mismatched_layout() {
        let s = seeds();
        let mut a = SeavSketch::new(SeavConfig::default(), &s);
        let b = SeavSketch::new(SeavConfig::new(4, 4, 3, 1024, 8).unwrap(), &s);
        assert!(matches!(a.merge(&b), Err(Error::MergeIncompatible(_))));
        let c = SeavSketch::new(SeavConfig::default(), &SeedSet::new(99, 1).unwrap());
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn restore_empty() {
        let sk = SeavSketch::new(SeavConfig::default(), &seeds());
        let out = sk.restore(DEFAULT_RESTORE_CAP);
        assert!(out.candidates.is_empty());
        assert!(out.overflows.is_empty());
    }

    #[test]
    fn restore_single_heavy_host() {
        let s = seeds();
        let mut sk = SeavSketch::new(SeavConfig::default(), &s);
        let host = 0xc0a8_0117;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..4096 {
            sk.update(host, rng.random());
        }
        let out = sk.restore(DEFAULT_RESTORE_CAP);
        assert!(
            out.candidates.iter().any(|c| c.ip == host),
            "{:?}",
            out.candidates
        );
        let c = out.candidates.iter().find(|c| c.ip == host).unwrap();
        assert_eq!(c.source_sea, host & 0xf);
        assert!(c.union_weight >= HOT_WEIGHT);
    }

    /// Hosts with all row registers hot and SEU weight >= 3, found by
    /// enumerating every LP of the listed SEAs.
    fn brute_force_candidates(sk: &SeavSketch, rps: &[usize]) -> Vec<u32> {
        let cfg = sk.config();
        let mut out = Vec::new();
        for &rp in rps {
            for lp in 0..(1u64 << cfg.lp_width()) {
                let lp = lp as u32;
                let mut union = u64::MAX;
                for row in 0..cfg.rows() {
                    let se = sk.se(rp, row, naive_index(cfg, row, lp) as usize);
                    union &= if se.is_hot() { se.bits() } else { 0 };
                }
                if union.count_ones() >= HOT_WEIGHT {
                    out.push(lp << cfg.r() | rp as u32);
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn restore_equals_exhaustive_enumeration_on_narrow_lp() {
        // r = 16 leaves a 16-bit LP, small enough to enumerate. Traffic is
        // confined to RPs 0..4 so the other SEAs are empty.
        let s = seeds();
        let cfg = SeavConfig::new(16, 4, 2, 64, 8).unwrap();
        let mut sk = SeavSketch::new(cfg, &s);
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut planted = Vec::new();
        for i in 0..12u32 {
            let host = rng.random::<u32>() & 0xffff_0000 | (i % 4);
            planted.push(host);
            for _ in 0..256 {
                sk.update(host, rng.random());
            }
        }
        for _ in 0..20_000 {
            let host = rng.random::<u32>() & 0xffff_0000 | rng.random_range(0..4);
            sk.update(host, rng.random());
        }
        let restored: Vec<u32> = sk
            .restore(DEFAULT_RESTORE_CAP)
            .candidates
            .iter()
            .map(|c| c.ip)
            .collect();
        assert_eq!(restored, brute_force_candidates(&sk, &[0, 1, 2, 3]));
        for h in planted {
            assert!(restored.contains(&h), "planted {h:#x} missing");
        }
    }

    #[test]
    fn restore_equals_brute_force_with_three_rows() {
        let s = seeds();
        let cfg = SeavConfig::new(16, 3, 2, 16, 8).unwrap();
        let mut sk = SeavSketch::new(cfg, &s);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3000 {
            let host = rng.random::<u32>() & 0x00ff_0000 | rng.random_range(0..2);
            sk.update(host, rng.random());
        }
        let restored: Vec<u32> = sk
            .restore(DEFAULT_RESTORE_CAP)
            .candidates
            .iter()
            .map(|c| c.ip)
            .collect();
        assert!(!restored.is_empty());
        assert_eq!(restored, brute_force_candidates(&sk, &[0, 1]));
    }

    #[test]
    fn restore_overflow_names_sea() {
        let s = seeds();
        let cfg = SeavConfig::new(4, 4, 2, 8, 8).unwrap();
        let mut sk = SeavSketch::new(cfg, &s);
        // Saturate SEA 3 entirely so every tuple is consistent and hot.
        let per = sk.se_per_sea * sk.bytes_per_se;
        sk.regs[3 * per..4 * per].fill(0xff);
        let out = sk.restore(1000);
        assert_eq!(out.overflows, vec![SeaOverflow { rp: 3, cap: 1000 }]);
        assert!(matches!(
            sk.restore_sea(3, 1000),
            Err(Error::RestoreOverflow { rp: 3, cap: 1000 })
        ));
    }

    #[test]
    fn memory_report_matches_formula() {
        for (r, rows, a, g) in [(4, 4, 2, 8), (0, 4, 2, 8), (6, 3, 3, 16), (8, 2, 4, 64)] {
            let cfg = SeavConfig::new(r, rows, a, 1024, g).unwrap();
            let formula = (1usize << r) * cfg.sc().iter().sum::<u64>() as usize * g as usize / 8;
            assert_eq!(cfg.memory_bytes(), formula);
            assert_eq!(SeavSketch::new(cfg, &seeds()).memory_bytes(), formula);
        }
    }

    #[test]
    fn hash_tags_are_distinct() {
        let s = seeds();
        assert_eq!(s.h1.domain_tag(), tag::H1);
        assert_eq!(s.h2.domain_tag(), tag::H2);
    }
}
